//! AdamW with decoupled weight decay and a linear-warmup cosine schedule.

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams, ParamTensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.1,
            peak_lr: 5e-5,
            warmup_steps: 500,
            total_steps: 1000,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps <= self.warmup_steps {
            return Err(Error::Config(format!(
                "total steps ({}) must exceed warmup steps ({})",
                self.total_steps, self.warmup_steps
            )));
        }
        if !(self.peak_lr >= 0.0) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning rate, epsilon and weight decay must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step`: linear warmup to `peak_lr`, then half-cosine
/// decay to zero at `total_steps`.
pub fn lr_at(step: u64, cfg: &OptimConfig) -> Result<f64> {
    if cfg.total_steps <= cfg.warmup_steps {
        return Err(Error::Config(format!(
            "total steps ({}) must exceed warmup steps ({})",
            cfg.total_steps, cfg.warmup_steps
        )));
    }
    if step > cfg.total_steps {
        return Err(Error::Usage(format!(
            "step {step} beyond schedule end {}",
            cfg.total_steps
        )));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    Ok(cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Moment buffers and step counter of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub config: OptimConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Gradients<T>,
    pub v: Gradients<T>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ModelParams<T>, config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimState {
            config,
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        })
    }

    /// Learning rate the next [`apply_update`] will use.
    pub fn next_lr(&self) -> Result<f64> {
        lr_at(self.step + 1, &self.config)
    }
}

/// One AdamW step on the listed tensors at the scheduled learning rate.
///
/// Updates are numbered from 1, so update `t` uses `lr_at(t)`. Tensors not in
/// `tensors` keep their values and their moment buffers. Returns the learning
/// rate used.
pub fn apply_update<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
    tensors: &[ParamTensor],
) -> Result<f64> {
    let lr = state.next_lr()?;
    adamw_step(params, grads, state, tensors, lr)?;
    Ok(lr)
}

/// AdamW step with an explicit learning rate.
pub fn adamw_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
    tensors: &[ParamTensor],
    lr: f64,
) -> Result<()> {
    for &t in tensors {
        let n = params.tensor(t).len();
        if grads.tensor(t).len() != n || state.m.tensor(t).len() != n {
            return Err(Error::dim(t.name(), n, grads.tensor(t).len()));
        }
    }
    state.step += 1;
    let cfg = state.config;
    let step = i32::try_from(state.step).unwrap_or(i32::MAX);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bias1 = T::one() - b1.powi(step);
    let bias2 = T::one() - b2.powi(step);
    let lr = T::lit(lr);
    let eps = T::lit(cfg.eps);
    for &t in tensors {
        let decay = if t.decayed() {
            lr * T::lit(cfg.weight_decay)
        } else {
            T::zero()
        };
        let g = grads.tensor(t);
        let m = state.m.tensor_mut(t);
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
        }
        let v = state.v.tensor_mut(t);
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
        }
        let (m, v) = (state.m.tensor(t), state.v.tensor(t));
        for ((theta, &mi), &vi) in params.tensor_mut(t).iter_mut().zip(m).zip(v) {
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            let old = *theta;
            *theta = old - lr * (m_hat / (v_hat.sqrt() + eps)) - decay * old;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Affine, ModelShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(total: u64) -> OptimConfig {
        OptimConfig {
            total_steps: total,
            ..Default::default()
        }
    }

    fn params() -> ModelParams<f64> {
        let shape = ModelShape {
            d_drug: 3,
            d_prot: 2,
            d_shared: 2,
            k: 3,
            sigma: 0.2,
        };
        let mut p = ModelParams::init(&shape, 0.25, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        p.head_w = vec![0.5, -0.5, 1.5];
        p.film_gamma.weight = vec![0.1, 0.2, 0.3, 0.4];
        p
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg(2000);
        assert_eq!(lr_at(0, &c).unwrap(), 0.0);
        assert_eq!(lr_at(500, &c).unwrap(), 5e-5);
        assert_eq!(lr_at(2000, &c).unwrap(), 0.0);
        assert!(lr_at(2001, &c).is_err());
        assert!(matches!(lr_at(0, &cfg(500)), Err(Error::Config(_))));
        let mid = lr_at(1250, &c).unwrap();
        assert!((mid - 2.5e-5).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_continuous_at_warmup() {
        let c = OptimConfig {
            warmup_steps: 1_000_000,
            total_steps: 2_000_000,
            ..Default::default()
        };
        let left = lr_at(999_999, &c).unwrap();
        let at = lr_at(1_000_000, &c).unwrap();
        let right = lr_at(1_000_001, &c).unwrap();
        assert_eq!(at, c.peak_lr);
        assert!((left - at).abs() <= c.peak_lr * 1e-6 + 1e-15);
        assert!((right - at).abs() <= 1e-15);
    }

    #[test]
    fn pure_decay_with_zero_gradient() {
        let mut p = params();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut st = OptimState::new(&p, cfg(2000)).unwrap();
        let lr = 0.01;
        adamw_step(&mut p, &g, &mut st, &ParamTensor::ALL, lr).unwrap();
        for t in ParamTensor::ALL {
            for (&a, &b) in p.tensor(t).iter().zip(before.tensor(t)) {
                if t.decayed() {
                    assert_eq!(a, b - lr * 0.1 * b);
                    assert!((a - b * (1.0 - lr * 0.1)).abs() < 1e-16);
                } else {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
        assert_eq!(p.rbf_centers, before.rbf_centers);
        assert_eq!(p.rbf_sigma, before.rbf_sigma);
    }

    #[test]
    fn zero_gradient_and_zero_decay_is_bitwise_stable() {
        let mut p = params();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut st = OptimState::new(
            &p,
            OptimConfig {
                weight_decay: 0.0,
                ..cfg(2000)
            },
        )
        .unwrap();
        for _ in 0..50 {
            apply_update(&mut p, &g, &mut st, &ParamTensor::ALL).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 50);
    }

    #[test]
    fn first_step_closed_form_and_bias_correction() {
        for &gv in &[0.3, -2.0, 1e-3, 7.5] {
            let mut p = params();
            p.head_b = 1.0;
            let theta = p.head_b;
            let mut g = Gradients::zeros_like(&p);
            g.head_b = gv;
            let mut st = OptimState::new(
                &p,
                OptimConfig {
                    weight_decay: 0.0,
                    ..cfg(2000)
                },
            )
            .unwrap();
            let lr = 1e-3;
            adamw_step(&mut p, &g, &mut st, &[ParamTensor::HeadBias], lr).unwrap();
            let m_hat = st.m.head_b / (1.0 - 0.9);
            let v_hat = st.v.head_b / (1.0 - 0.999);
            assert!((m_hat - gv).abs() <= f64::EPSILON * gv.abs());
            assert!((v_hat - gv * gv).abs() <= 2.0 * f64::EPSILON * gv * gv);
            let expected = theta - lr * gv / (gv.abs() + 1e-6);
            assert!(
                (p.head_b - expected).abs() < 1e-15,
                "{} vs {}",
                p.head_b,
                expected
            );
        }
    }

    #[test]
    fn three_step_trajectory_matches_high_precision_oracle() {
        // Reference values from a 50-digit evaluation of the same recurrence.
        let oracle = [
            0.498_950_000_999_999,
            0.498_952_737_526_214_84,
            0.498_728_116_920_059_6,
        ];
        let mut p = params();
        p.head_w[0] = 0.5;
        let mut st = OptimState::new(&p, cfg(2000)).unwrap();
        for (g, want) in [1.0, -1.0, 0.5].into_iter().zip(oracle) {
            let mut grads = Gradients::zeros_like(&p);
            grads.head_w[0] = g;
            adamw_step(&mut p, &grads, &mut st, &[ParamTensor::HeadWeight], 1e-3).unwrap();
            assert!(
                (p.head_w[0] - want).abs() < 1e-14,
                "{} vs {}",
                p.head_w[0],
                want
            );
        }
    }

    #[test]
    fn excluded_tensors_are_untouched() {
        let mut p = params();
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        for t in ParamTensor::ALL {
            g.tensor_mut(t).fill(0.5);
        }
        let mut st = OptimState::new(&p, cfg(2000)).unwrap();
        let keep: Vec<_> = ParamTensor::ALL
            .into_iter()
            .filter(|t| !t.is_film())
            .collect();
        adamw_step(&mut p, &g, &mut st, &keep, 1e-2).unwrap();
        assert_eq!(p.film_gamma, before.film_gamma);
        assert_eq!(p.film_beta, before.film_beta);
        assert_ne!(p.proj_drug, before.proj_drug);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = params();
        let mut g = Gradients::zeros_like(&p);
        g.proj_drug = Affine::zeros(1, 1);
        let mut st = OptimState::new(&p, cfg(2000)).unwrap();
        assert!(matches!(
            adamw_step(&mut p, &g, &mut st, &ParamTensor::ALL, 1e-3),
            Err(Error::Dimension { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frozen_fields_survive_any_update(seed in 0u64..1000, scale in -10.0f64..10.0, steps in 1usize..5) {
                let mut p = params();
                let centers = p.rbf_centers.clone();
                let sigma = p.rbf_sigma;
                let mut st = OptimState::new(&p, cfg(2000)).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..steps {
                    let mut g = Gradients::zeros_like(&p);
                    for t in ParamTensor::ALL {
                        for x in g.tensor_mut(t) {
                            *x = scale * rand::Rng::random_range(&mut rng, -1.0..1.0);
                        }
                    }
                    apply_update(&mut p, &g, &mut st, &ParamTensor::ALL).unwrap();
                }
                prop_assert_eq!(p.rbf_centers, centers);
                prop_assert_eq!(p.rbf_sigma.to_bits(), sigma.to_bits());
            }

            #[test]
            fn schedule_is_continuous_at_warmup(peak in 1e-6f64..1e-1, warmup in 1u64..1000, extra in 1u64..10_000) {
                let c = OptimConfig { peak_lr: peak, warmup_steps: warmup, total_steps: warmup + extra, ..OptimConfig::default() };
                prop_assert_eq!(lr_at(warmup, &c).unwrap(), peak);
                let left = lr_at(warmup - 1, &c).unwrap();
                let right = lr_at(warmup + 1, &c).unwrap();
                prop_assert!(left <= peak && right <= peak);
                prop_assert!(peak - left <= peak / warmup as f64 + 1e-15);
            }
        }
    }
}
