//! Losses and their derivatives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TaskMode {
    /// Continuous affinity labels, Huber loss.
    #[default]
    Regression,
    /// Binary interaction labels, binary cross-entropy on the logit.
    Classification,
}

impl TaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Regression => "regression",
            TaskMode::Classification => "classification",
        }
    }
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(TaskMode::Regression),
            "classification" => Ok(TaskMode::Classification),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub huber_delta: f64,
    pub mode: TaskMode,
    /// 1 for the full objective, 0 for the triplet-free ablation.
    pub triplet_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.9,
            huber_delta: 0.5,
            mode: TaskMode::Regression,
            triplet_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta > 0.0) {
            return Err(Error::Parameter(format!(
                "huber delta must be positive, got {}",
                self.huber_delta
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Parameter(format!(
                "triplet margin must be non-negative, got {}",
                self.margin
            )));
        }
        if self.triplet_weight != 0.0 && self.triplet_weight != 1.0 {
            return Err(Error::Parameter(format!(
                "triplet weight must be 0 or 1, got {}",
                self.triplet_weight
            )));
        }
        Ok(())
    }

    /// Loss and derivative of the per-pair supervised term.
    pub fn supervised<T: Scalar>(&self, label: T, prediction: T) -> Result<(T, T)> {
        match self.mode {
            TaskMode::Regression => huber_loss(label, prediction, T::lit(self.huber_delta)),
            TaskMode::Classification => Ok(bce_logit_loss(label, prediction)),
        }
    }
}

/// Hinge `max(0, d_ap − d_an + α)` with its (sub)gradient in `(d_ap, d_an)`.
///
/// At the hinge boundary the zero subgradient is returned.
pub fn triplet_loss<T: Scalar>(d_ap: T, d_an: T, alpha: T) -> (T, T, T) {
    let slack = d_ap - d_an + alpha;
    if slack > T::zero() {
        (slack, T::one(), -T::one())
    } else {
        (T::zero(), T::zero(), T::zero())
    }
}

/// Huber loss of `y_hat` against `y` and its derivative in `y_hat`.
pub fn huber_loss<T: Scalar>(y: T, y_hat: T, delta: T) -> Result<(T, T)> {
    if !(delta > T::zero()) {
        return Err(Error::Parameter(format!(
            "huber delta must be positive, got {delta}"
        )));
    }
    let r = y_hat - y;
    let half = T::lit(0.5);
    if r.abs() <= delta {
        Ok((half * r * r, r))
    } else {
        Ok((delta * r.abs() - half * delta * delta, delta * r.signum()))
    }
}

/// Binary cross-entropy on a logit, `max(x,0) − x·label + ln(1 + e^{−|x|})`,
/// and its derivative `sigmoid(x) − label`.
pub fn bce_logit_loss<T: Scalar>(label: T, logit: T) -> (T, T) {
    let loss = logit.max(T::zero()) - logit * label + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - label)
}

/// Overflow-free logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Per-example terms of one mini-batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchTerms<T> {
    /// One hinge value per sampled triple.
    pub triplet: Vec<T>,
    /// One Huber or cross-entropy value per labeled pair.
    pub supervised: Vec<T>,
}

impl<T: Scalar> BatchTerms<T> {
    pub fn triplet_mean(&self) -> T {
        mean(&self.triplet)
    }

    pub fn supervised_mean(&self) -> T {
        mean(&self.supervised)
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        T::zero()
    } else {
        xs.iter().copied().sum::<T>() / T::lit(xs.len() as f64)
    }
}

/// `triplet_weight · mean(triplet) + mean(supervised)`.
///
/// When every labeled pair contributes exactly one triple (regression
/// batches), this is the arithmetic mean of the per-example totals.
pub fn total_loss<T: Scalar>(terms: &BatchTerms<T>, cfg: &LossConfig) -> Result<T> {
    if terms.triplet.is_empty() && terms.supervised.is_empty() {
        return Err(Error::Usage("total loss of an empty batch".into()));
    }
    Ok(T::lit(cfg.triplet_weight) * terms.triplet_mean() + terms.supervised_mean())
}
