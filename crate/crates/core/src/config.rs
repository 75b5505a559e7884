//! Run configuration and its flat `key = value` text form.
//!
//! The same text form is used for config files and for the config section
//! embedded in checkpoints. Keys may be written in snake_case or kebab-case;
//! `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{FilmMode, NormGuard};
use crate::objectives::{LossConfig, TaskMode};
use crate::optim::OptimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// FiLM pinned to identity modulation and excluded from updates.
    NoFilm,
    /// Triplet term weighted 0 and never evaluated.
    NoTriplet,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoFilm, Ablation::NoTriplet];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoFilm => "no_film",
            Ablation::NoTriplet => "no_triplet",
        }
    }

    pub fn film_mode(self) -> FilmMode {
        match self {
            Ablation::NoFilm => FilmMode::Identity,
            _ => FilmMode::Learned,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Ablation::Full),
            "no_film" => Ok(Ablation::NoFilm),
            "no_triplet" => Ok(Ablation::NoTriplet),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: TaskMode,
    pub ablation: Ablation,
    pub epochs: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub delta: f64,
    pub sigma: f64,
    pub k: usize,
    pub d_shared: usize,
    pub seed: u64,
    pub normalize_labels: bool,
    /// `None` uses strict zero-norm errors; `Some(eps)` floors norms at `eps`.
    pub norm_floor: Option<f64>,
    /// Draw fresh triplet negatives every epoch (otherwise epoch 0's draw is
    /// reused).
    pub resample_negatives: bool,
    pub store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: TaskMode::Regression,
            ablation: Ablation::Full,
            epochs: 25,
            batch_size: 24,
            peak_lr: 5e-5,
            warmup_steps: 500,
            weight_decay: 0.1,
            alpha: 0.9,
            delta: 0.5,
            sigma: 0.2,
            k: 16,
            d_shared: 256,
            seed: 0,
            normalize_labels: true,
            norm_floor: Some(1e-12),
            resample_negatives: true,
            store: None,
            checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

impl RunConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.alpha,
            huber_delta: self.delta,
            mode: self.mode,
            triplet_weight: if self.ablation == Ablation::NoTriplet {
                0.0
            } else {
                1.0
            },
        }
    }

    pub fn norm_guard(&self) -> NormGuard {
        match self.norm_floor {
            Some(eps) => NormGuard::Floor(eps),
            None => NormGuard::Strict,
        }
    }

    pub fn optim_config(&self, total_steps: u64) -> OptimConfig {
        OptimConfig {
            weight_decay: self.weight_decay,
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps,
            ..OptimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.d_shared == 0 {
            return Err(Error::Config("d_shared must be positive".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if let Some(eps) = self.norm_floor {
            if !(eps > 0.0) {
                return Err(Error::Config("norm floor must be positive".into()));
            }
        }
        self.loss_config().validate()
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key.as_str() {
            "mode" => self.mode = value.parse()?,
            "ablation" => self.ablation = value.parse()?,
            "epochs" => self.epochs = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "peak_lr" | "lr" => self.peak_lr = parse(&key, value)?,
            "warmup_steps" => self.warmup_steps = parse(&key, value)?,
            "weight_decay" => self.weight_decay = parse(&key, value)?,
            "alpha" | "margin" => self.alpha = parse(&key, value)?,
            "delta" | "huber_delta" => self.delta = parse(&key, value)?,
            "sigma" => self.sigma = parse(&key, value)?,
            "k" => self.k = parse(&key, value)?,
            "d_shared" => self.d_shared = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "normalize_labels" => self.normalize_labels = parse_bool(&key, value)?,
            "norm_floor" => {
                self.norm_floor = match value {
                    "none" | "strict" => None,
                    v => Some(parse(&key, v)?),
                }
            }
            "resample_negatives" => self.resample_negatives = parse_bool(&key, value)?,
            "store" => self.store = path(),
            "checkpoint" => self.checkpoint = path(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every assignment in a flat `key = value` text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "ablation = {}", self.ablation.as_str());
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "peak_lr = {:?}", self.peak_lr);
        let _ = writeln!(s, "warmup_steps = {}", self.warmup_steps);
        let _ = writeln!(s, "weight_decay = {:?}", self.weight_decay);
        let _ = writeln!(s, "alpha = {:?}", self.alpha);
        let _ = writeln!(s, "delta = {:?}", self.delta);
        let _ = writeln!(s, "sigma = {:?}", self.sigma);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "d_shared = {}", self.d_shared);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "normalize_labels = {}", self.normalize_labels);
        let _ = writeln!(
            s,
            "norm_floor = {}",
            self.norm_floor
                .map_or("strict".to_string(), |e| format!("{e:?}"))
        );
        let _ = writeln!(s, "resample_negatives = {}", self.resample_negatives);
        let _ = writeln!(s, "store = {}", path(&self.store));
        let _ = writeln!(s, "checkpoint = {}", path(&self.checkpoint));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.epochs, 25);
        assert_eq!(c.batch_size, 24);
        assert_eq!(c.peak_lr, 5e-5);
        assert_eq!(c.warmup_steps, 500);
        assert_eq!(c.weight_decay, 0.1);
        assert_eq!(c.alpha, 0.9);
        assert_eq!(c.delta, 0.5);
        assert_eq!(c.sigma, 0.2);
        assert_eq!(c.optim_config(1000).eps, 1e-6);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig {
            mode: TaskMode::Classification,
            ablation: Ablation::NoFilm,
            peak_lr: 1.25e-3,
            norm_floor: None,
            store: Some("data/x.fdti".into()),
            ..Default::default()
        };
        c.seed = 42;
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_syntax() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nbatch-size = 8\n\nablation = no-triplet  # trailing\n")
            .unwrap();
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.ablation, Ablation::NoTriplet);
        assert_eq!(c.loss_config().triplet_weight, 0.0);
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("epochs").is_err());
        assert!(c.apply_text("epochs = -3").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig {
            sigma: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            delta: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            k: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
