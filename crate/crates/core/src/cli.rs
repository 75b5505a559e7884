//! Command-line surface. [`run`] parses arguments, dispatches a subcommand
//! and maps errors to exit codes.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::distr::{Distribution, Uniform};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    generate_synthetic, load_store, save_store, EmbeddingStore, LabelKind, Split, SyntheticConfig,
    HEADER_LEN, RECORD_LEN,
};
use crate::error::{Error, Result};
use crate::metrics::{curve_jump_bound, export_distance_curve, write_curve};
use crate::model::{
    grad_check, CheckLoss, FilmMode, ForwardOptions, ModelParams, ModelShape, ParamTensor,
};
use crate::objectives::TaskMode;
use crate::trainer::{evaluate, predict_embeddings, predict_ids, split_predictions, train_until};

#[derive(Debug, Parser)]
#[command(
    name = "firm-dti",
    version,
    about = "FiLM-conditioned metric-learning head for drug-target interaction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Write a planted-geometry synthetic embedding store.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a store.
    Eval(EvalArgs),
    /// Predict affinity or interaction probability.
    Predict(PredictArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump the header of a store or checkpoint.
    Inspect(InspectArgs),
    /// Write the head's distance-to-output curve.
    ExportCurve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_drugs: usize,
    #[arg(long, default_value_t = 50)]
    pub n_prots: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_pairs: usize,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub d_drug: usize,
    #[arg(long, default_value_t = 32)]
    pub d_prot: usize,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub embed_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub modulation: f64,
    #[arg(long)]
    pub domain_shift: bool,
    #[arg(long, default_value = "regression")]
    pub mode: TaskMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// RunConfig fields as optional flags; only flags that are given override
/// the config file.
#[derive(Debug, Default, Args)]
pub struct RunFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub peak_lr: Option<String>,
    #[arg(long)]
    pub warmup_steps: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub d_shared: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub normalize_labels: Option<String>,
    #[arg(long)]
    pub norm_floor: Option<String>,
    #[arg(long)]
    pub resample_negatives: Option<String>,
    #[arg(long)]
    pub store: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
}

impl RunFlags {
    /// Default, then config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let pairs = [
            ("mode", &self.mode),
            ("ablation", &self.ablation),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("peak_lr", &self.peak_lr),
            ("warmup_steps", &self.warmup_steps),
            ("weight_decay", &self.weight_decay),
            ("alpha", &self.alpha),
            ("delta", &self.delta),
            ("sigma", &self.sigma),
            ("k", &self.k),
            ("d_shared", &self.d_shared),
            ("seed", &self.seed),
            ("normalize_labels", &self.normalize_labels),
            ("norm_floor", &self.norm_floor),
            ("resample_negatives", &self.resample_negatives),
            ("store", &self.store),
            ("checkpoint", &self.checkpoint),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs (the schedule still spans
    /// the configured epochs).
    #[arg(long)]
    pub until_epoch: Option<u64>,
    /// Binarize real labels: label < threshold becomes 1.
    #[arg(long)]
    pub binarize: Option<f32>,
    /// Add sampled negatives at this ratio to positives.
    #[arg(long)]
    pub negatives: Option<f64>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Train in 32-bit floating point.
    #[arg(long)]
    pub f32: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, requires = "prot")]
    pub drug: Option<String>,
    #[arg(long, requires = "drug")]
    pub prot: Option<String>,
    /// Whitespace- or comma-separated drug embedding file.
    #[arg(long, requires = "prot_vec")]
    pub drug_vec: Option<PathBuf>,
    /// Whitespace- or comma-separated protein embedding file.
    #[arg(long, requires = "drug_vec")]
    pub prot_vec: Option<PathBuf>,
    /// Predict every record of a split as CSV.
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long, default_value_t = 5)]
    pub d_drug: usize,
    #[arg(long, default_value_t = 5)]
    pub d_prot: usize,
    #[arg(long, default_value_t = 4)]
    pub d_shared: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 201)]
    pub points: usize,
}

/// Largest gradient-check error per loss path over a range of seeds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradcheckSummary {
    pub seeds: u64,
    pub regression: f64,
    pub classification: f64,
}

impl GradcheckSummary {
    pub fn max(&self) -> f64 {
        self.regression.max(self.classification)
    }
}

/// Random parameters with non-trivial FiLM and head weights.
pub fn random_check_params(shape: &ModelShape, seed: u64) -> Result<ModelParams<f64>> {
    let mut rng = crate::data::stream_rng(seed, 0);
    let mut p = ModelParams::init(shape, 0.1, &mut rng)?;
    let u = Uniform::new(-0.5, 0.5).expect("valid range");
    for t in [
        ParamTensor::GammaWeight,
        ParamTensor::BetaWeight,
        ParamTensor::HeadWeight,
    ] {
        for w in p.tensor_mut(t) {
            *w = u.sample(&mut rng);
        }
    }
    Ok(p)
}

/// Gradient checks for seeds `0..seeds`.
///
/// The regression path checks the Huber and distance objectives, the
/// classification path checks the BCE and distance objectives, each with
/// learned and identity FiLM.
pub fn gradcheck_seeds(shape: &ModelShape, seeds: u64) -> Result<GradcheckSummary> {
    let mut summary = GradcheckSummary {
        seeds,
        ..Default::default()
    };
    let u = Uniform::new(-1.0, 1.0).expect("valid range");
    for seed in 0..seeds {
        let params = random_check_params(shape, seed)?;
        let mut rng = crate::data::stream_rng(seed, 1);
        let drug: Vec<f64> = (0..shape.d_drug).map(|_| u.sample(&mut rng)).collect();
        let prot: Vec<f64> = (0..shape.d_prot).map(|_| u.sample(&mut rng)).collect();
        let label = u.sample(&mut rng);
        let binary = if seed % 2 == 0 { 1.0 } else { 0.0 };
        for film in [FilmMode::Learned, FilmMode::Identity] {
            let opts = ForwardOptions {
                film,
                ..Default::default()
            };
            for loss in [CheckLoss::Huber { label, delta: 0.5 }, CheckLoss::Distance] {
                let e = grad_check(&params, &drug, &prot, loss, opts)?;
                summary.regression = summary.regression.max(e);
            }
            for loss in [CheckLoss::Bce { label: binary }, CheckLoss::Distance] {
                let e = grad_check(&params, &drug, &prot, loss, opts)?;
                summary.classification = summary.classification.max(e);
            }
        }
    }
    Ok(summary)
}

/// Header fields of an embedding store file, without decoding the body.
pub fn store_header_json(bytes: &[u8]) -> Result<serde_json::Value> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Validation(format!(
            "file has {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    Ok(serde_json::json!({
        "magic": String::from_utf8_lossy(&bytes[0..4]),
        "version": u32_at(4),
        "n_drugs": u32_at(8),
        "n_prots": u32_at(12),
        "d_drug": u32_at(16),
        "d_prot": u32_at(20),
        "n_records": u64_at(24),
        "label_kind": bytes[32],
        "has_split": bytes[33],
        "record_len": RECORD_LEN,
    }))
}

fn inspect(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&crate::checkpoint::MAGIC) {
        let ckpt = Checkpoint::<f64>::decode(&bytes).map_err(|source| Error::Format {
            path: path.to_path_buf(),
            source,
        })?;
        let shape = ckpt.params.shape();
        let v = serde_json::json!({
            "kind": "checkpoint",
            "epoch": ckpt.epoch,
            "step": ckpt.optim.step,
            "d_drug": shape.d_drug,
            "d_prot": shape.d_prot,
            "d_shared": shape.d_shared,
            "k": shape.k,
            "sigma": shape.sigma,
            "label_mean": ckpt.scaling.mean,
            "label_std": ckpt.scaling.std,
            "config": ckpt.config.to_text(),
        });
        return Ok(serde_json::to_string_pretty(&v).expect("serializable"));
    }
    let mut header = store_header_json(&bytes)?;
    let store = load_store(path)?;
    header["valid"] = serde_json::Value::Bool(true);
    header["split_counts"] = serde_json::json!({
        "train": store.count_in(Split::Train),
        "val": store.count_in(Split::Val),
        "test": store.count_in(Split::Test),
    });
    Ok(serde_json::to_string_pretty(&header).expect("serializable"))
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Validation(format!("{}: not a number: {s:?}", path.display())))
        })
        .collect()
}

fn check_len(what: &str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dim(what, expected, v.len()));
    }
    Ok(())
}

fn prepare_training_store(args: &TrainArgs, cfg: &RunConfig) -> Result<EmbeddingStore> {
    let path = cfg
        .store
        .as_ref()
        .ok_or_else(|| Error::Usage("train needs --store".into()))?;
    let mut store = load_store(path)?;
    if let Some(t) = args.binarize {
        store.binarize(t)?;
    }
    if let Some(ratio) = args.negatives {
        store.add_sampled_negatives(cfg.seed, ratio)?;
    }
    if cfg.mode == TaskMode::Classification && store.label_kind == LabelKind::None {
        return Err(Error::Usage(
            "classification on an unlabeled store needs --negatives".into(),
        ));
    }
    Ok(store)
}

fn write_output(dest: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match dest {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn run_train<T: crate::Scalar>(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.run.resolve()?;
    let ckpt_path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Usage("train needs --checkpoint".into()))?;
    let store = prepare_training_store(args, &cfg)?;
    let (ckpt, report) = match &args.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::<T>::load(path)?;
            let store = crate::trainer::prepare_store(&store, &ckpt.config)?;
            let report = train_until(&mut ckpt, &store, args.until_epoch.unwrap_or(u64::MAX))?;
            (ckpt, report)
        }
        None => {
            let store = crate::trainer::prepare_store(&store, &cfg)?;
            let mut ckpt = crate::trainer::init_checkpoint::<T>(&cfg, &store)?;
            let report = train_until(&mut ckpt, &store, args.until_epoch.unwrap_or(u64::MAX))?;
            (ckpt, report)
        }
    };
    ckpt.save(&ckpt_path)?;
    write_output(args.report.as_deref(), &report.to_lines(), out)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint<f64>> {
    Checkpoint::<f64>::load(path)
}

/// Executes one parsed command, writing its primary output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let cfg = SyntheticConfig {
                n_drugs: a.n_drugs,
                n_prots: a.n_prots,
                n_pairs: a.n_pairs,
                latent_dim: a.latent_dim,
                d_drug: a.d_drug,
                d_prot: a.d_prot,
                label_noise: a.label_noise,
                embed_noise: a.embed_noise,
                modulation: a.modulation,
                domain_shift: a.domain_shift,
                mode: a.mode,
                ..Default::default()
            };
            let data = generate_synthetic(&cfg, a.seed)?;
            save_store(&data.store, &a.out)?;
            writeln!(
                out,
                "wrote {} ({} drugs, {} proteins, {} records)",
                a.out.display(),
                data.store.n_drugs(),
                data.store.n_prots(),
                data.store.records.len()
            )
            .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Train(a) => {
            if a.f32 {
                run_train::<f32>(&a, out)
            } else {
                run_train::<f64>(&a, out)
            }
        }
        Command::Eval(a) => {
            let ckpt = load_ckpt(&a.checkpoint)?;
            let store = crate::trainer::prepare_store(&load_store(&a.store)?, &ckpt.config)?;
            let report = evaluate(&ckpt, &store, a.split)?;
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&report).expect("serializable")
            )
            .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Predict(a) => {
            let ckpt = load_ckpt(&a.checkpoint)?;
            let line = if let (Some(dv), Some(pv)) = (&a.drug_vec, &a.prot_vec) {
                let shape = ckpt.params.shape();
                let drug = read_vector(dv)?;
                let prot = read_vector(pv)?;
                check_len("drug embedding", shape.d_drug, &drug)?;
                check_len("protein embedding", shape.d_prot, &prot)?;
                format!("{}\n", predict_embeddings(&ckpt, &drug, &prot)?)
            } else {
                let path = a.store.as_ref().ok_or_else(|| {
                    Error::Usage("predict needs --store or --drug-vec/--prot-vec".into())
                })?;
                let store = load_store(path)?;
                match (&a.drug, &a.prot, a.split) {
                    (Some(d), Some(p), _) => format!("{}\n", predict_ids(&ckpt, &store, d, p)?),
                    (None, None, Some(split)) => {
                        let store = crate::trainer::prepare_store(&store, &ckpt.config)?;
                        let mut s = String::from("drug,protein,label,prediction,distance\n");
                        for p in split_predictions(&ckpt, &store, split)? {
                            let r = store.records[p.record];
                            s.push_str(&format!(
                                "{},{},{},{},{}\n",
                                store.drug_ids[r.drug as usize],
                                store.prot_ids[r.prot as usize],
                                p.label.map(|l| l.to_string()).unwrap_or_default(),
                                p.value,
                                p.distance
                            ));
                        }
                        s
                    }
                    _ => {
                        return Err(Error::Usage(
                            "predict needs --drug and --prot, or --split".into(),
                        ))
                    }
                }
            };
            out.write_all(line.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Gradcheck(a) => {
            let shape = ModelShape {
                d_drug: a.d_drug,
                d_prot: a.d_prot,
                d_shared: a.d_shared,
                k: a.k,
                sigma: 0.2,
            };
            let s = gradcheck_seeds(&shape, a.seeds)?;
            writeln!(
                out,
                "seeds={} regression_max_rel_err={:e} classification_max_rel_err={:e}",
                s.seeds, s.regression, s.classification
            )
            .map_err(|e| Error::io("<stdout>", e))?;
            if s.max() >= a.tolerance {
                return Err(Error::Validation(format!(
                    "gradient check error {:e} exceeds tolerance {:e}",
                    s.max(),
                    a.tolerance
                )));
            }
            Ok(())
        }
        Command::Inspect(a) => {
            let text = inspect(&a.path)?;
            writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
        }
        Command::ExportCurve(a) => {
            let ckpt = load_ckpt(&a.checkpoint)?;
            let scaling = (ckpt.config.mode == TaskMode::Regression).then_some(ckpt.scaling);
            let rows = export_distance_curve(&ckpt.params, a.points, scaling)?;
            write_curve(&a.out, &rows)?;
            let step = 2.0 / (a.points - 1) as f64;
            let bound = curve_jump_bound(&ckpt.params, step, scaling.map_or(1.0, |s| s.std));
            let jump = rows
                .windows(2)
                .map(|w| (w[1].1 - w[0].1).abs())
                .fold(0.0, f64::max);
            writeln!(
                out,
                "wrote {} points to {}; max jump {jump:e} (bound {bound:e})",
                rows.len(),
                a.out.display()
            )
            .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Parses `args`, executes, and returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;

    #[test]
    fn flag_overrides_config_file_overrides_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        std::fs::write(&file, "epochs = 7\nbatch_size = 12\n").unwrap();
        let flags = RunFlags {
            config: Some(file),
            batch_size: Some("3".into()),
            ..Default::default()
        };
        let cfg = flags.resolve().unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.batch_size, 3);
        assert_eq!(cfg.peak_lr, 5e-5);
    }

    #[test]
    fn kebab_case_flags_parse() {
        let cli = Cli::try_parse_from([
            "firm-dti",
            "train",
            "--store",
            "s",
            "--checkpoint",
            "c",
            "--batch-size",
            "8",
            "--peak-lr",
            "1e-3",
            "--ablation",
            "no-film",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!("expected train")
        };
        let cfg = a.run.resolve().unwrap();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.ablation, Ablation::NoFilm);
    }

    #[test]
    fn exit_codes() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run(["firm-dti", "bogus"], &mut out, &mut err), 2);
        assert_eq!(
            run(
                [
                    "firm-dti",
                    "train",
                    "--store",
                    "s",
                    "--checkpoint",
                    "c",
                    "--epochs",
                    "x"
                ],
                &mut out,
                &mut err
            ),
            2
        );
        assert_eq!(
            run(
                ["firm-dti", "inspect", "/nonexistent/file"],
                &mut out,
                &mut err
            ),
            3
        );
    }

    #[test]
    fn gradcheck_small_run() {
        let shape = ModelShape {
            d_drug: 5,
            d_prot: 5,
            d_shared: 4,
            k: 4,
            sigma: 0.2,
        };
        let s = gradcheck_seeds(&shape, 5).unwrap();
        assert!(s.max() < 1e-6, "{s:?}");
    }
}
