//! Training loop, evaluation and prediction.
//!
//! One optimizer step is taken per mini-batch. Within a batch, per-pair
//! gradients are accumulated in a fixed order (labeled pairs in batch order,
//! then the triplet legs not already covered), so a run is a pure function of
//! its configuration, store and seed.

use std::collections::HashMap;

use serde::Serialize;

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::RunConfig;
use crate::data::{
    assign_random_split, make_batches_with, EmbeddingStore, EmbeddingTable, LabelKind,
    LabelScaling, Split, TripletBatch,
};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::{
    backward_accumulate, forward, ForwardOptions, ForwardTrace, Gradients, ModelParams, ModelShape,
    ParamTensor,
};
use crate::objectives::{sigmoid, total_loss, triplet_loss, BatchTerms, LossConfig, TaskMode};
use crate::optim::{apply_update, OptimState};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub steps: u64,
    pub mean_loss: f64,
    pub mean_triplet: f64,
    pub mean_supervised: f64,
    pub lr_last: f64,
    pub skipped_triplets: usize,
    pub val: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Learning rate used at every optimizer step, in order.
    pub lr_trace: Vec<f64>,
    /// Number of triplet-loss evaluations performed.
    pub triplet_evaluations: u64,
    /// Evaluation of the final parameters on every non-empty split.
    pub final_eval: Vec<EvalReport>,
}

impl TrainReport {
    /// One JSON object per epoch, then a `summary` object.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::json!({ "epoch_record": e }).to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "epochs": self.epochs.len(),
                "steps": self.lr_trace.len(),
                "triplet_evaluations": self.triplet_evaluations,
                "final_eval": self.final_eval,
            }
        });
        out.push_str(&serde_json::to_string_pretty(&summary).expect("serializable"));
        out.push('\n');
        out
    }
}

/// Loss terms and accumulated gradient of one mini-batch.
#[derive(Clone, Debug)]
pub struct BatchOutcome<T> {
    pub terms: BatchTerms<T>,
    pub loss: T,
    pub grads: Gradients<T>,
    pub triplet_evaluations: u64,
}

/// Static inputs of the batch objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveContext<'a, T> {
    pub table: &'a EmbeddingTable<T>,
    pub loss: LossConfig,
    pub opts: ForwardOptions,
    pub scaling: LabelScaling,
}

struct Leg<T> {
    trace: ForwardTrace<T>,
    g_pred: T,
    g_dist: T,
}

/// Mean batch objective and its gradient.
///
/// Supervised targets are normalized with `ctx.scaling` in regression mode.
/// The triplet term is skipped entirely when its weight is zero. Non-finite
/// terms abort with the offending record indices.
pub fn batch_objective<T: Scalar>(
    params: &ModelParams<T>,
    batch: &TripletBatch,
    ctx: &ObjectiveContext<'_, T>,
) -> Result<BatchOutcome<T>> {
    let mut legs: Vec<Leg<T>> = Vec::new();
    let mut by_pair: HashMap<(u32, u32), usize> = HashMap::new();
    let mut terms = BatchTerms::default();
    let mut bad_records = Vec::new();

    let run = |drug: u32, prot: u32, record: usize| {
        forward(params, ctx.table.drug(drug), ctx.table.prot(prot), ctx.opts).map_err(|e| match e {
            Error::NonFinite(_) => Error::NumericalAbort {
                step: 0,
                records: vec![record.to_string()],
            },
            other => other,
        })
    };
    let n_sup = T::lit(batch.labeled.len().max(1) as f64);
    for pair in &batch.labeled {
        let trace = run(pair.drug, pair.prot, pair.record)?;
        let target = match ctx.loss.mode {
            TaskMode::Regression => ctx.scaling.normalize(f64::from(pair.label)),
            TaskMode::Classification => f64::from(pair.label),
        };
        let (l, g) = ctx.loss.supervised(T::lit(target), trace.prediction)?;
        if !l.is_finite() {
            bad_records.push(pair.record);
        }
        terms.supervised.push(l);
        by_pair.insert((pair.drug, pair.prot), legs.len());
        legs.push(Leg {
            trace,
            g_pred: g / n_sup,
            g_dist: T::zero(),
        });
    }

    let mut triplet_evaluations = 0;
    if ctx.loss.triplet_weight != 0.0 {
        let scale = T::lit(ctx.loss.triplet_weight) / T::lit(batch.triplets.len().max(1) as f64);
        for t in &batch.triplets {
            let pos = match by_pair.get(&(t.pos_drug, t.anchor_prot)) {
                Some(&i) => i,
                None => {
                    let trace = run(t.pos_drug, t.anchor_prot, t.record)?;
                    by_pair.insert((t.pos_drug, t.anchor_prot), legs.len());
                    legs.push(Leg {
                        trace,
                        g_pred: T::zero(),
                        g_dist: T::zero(),
                    });
                    legs.len() - 1
                }
            };
            let neg = match by_pair.get(&(t.neg_drug, t.anchor_prot)) {
                Some(&i) => i,
                None => {
                    let trace = run(t.neg_drug, t.anchor_prot, t.record)?;
                    by_pair.insert((t.neg_drug, t.anchor_prot), legs.len());
                    legs.push(Leg {
                        trace,
                        g_pred: T::zero(),
                        g_dist: T::zero(),
                    });
                    legs.len() - 1
                }
            };
            let (l, g_ap, g_an) = triplet_loss(
                legs[pos].trace.distance,
                legs[neg].trace.distance,
                T::lit(ctx.loss.margin),
            );
            triplet_evaluations += 1;
            if !l.is_finite() {
                bad_records.push(t.record);
            }
            terms.triplet.push(l);
            legs[pos].g_dist = legs[pos].g_dist + scale * g_ap;
            legs[neg].g_dist = legs[neg].g_dist + scale * g_an;
        }
    }

    let loss = total_loss(&terms, &ctx.loss)?;
    if !bad_records.is_empty() || !loss.is_finite() {
        return Err(Error::NumericalAbort {
            step: 0,
            records: bad_records.iter().map(|r| r.to_string()).collect(),
        });
    }
    let mut grads = Gradients::zeros_like(params);
    for leg in &legs {
        backward_accumulate(
            &mut grads,
            params,
            &leg.trace,
            leg.g_pred,
            leg.g_dist,
            ctx.opts.guard,
        );
    }
    Ok(BatchOutcome {
        terms,
        loss,
        grads,
        triplet_evaluations,
    })
}

/// Store prepared for training: random split applied when the store has
/// none, and labels checked against the task mode.
pub fn prepare_store(store: &EmbeddingStore, config: &RunConfig) -> Result<EmbeddingStore> {
    let mut store = store.clone();
    match (config.mode, store.label_kind) {
        (TaskMode::Regression, LabelKind::Real) | (TaskMode::Classification, LabelKind::Binary) => {
        }
        (mode, kind) => {
            return Err(Error::Usage(format!(
                "{} training needs {} labels, store has {:?}",
                mode.as_str(),
                if mode == TaskMode::Regression {
                    "real"
                } else {
                    "binary"
                },
                kind
            )))
        }
    }
    if !store.splits_present {
        assign_random_split(&mut store, config.seed);
    }
    Ok(store)
}

fn batches_per_epoch(store: &EmbeddingStore, batch_size: usize) -> usize {
    store.count_in(Split::Train).div_ceil(batch_size)
}

/// Fresh checkpoint at epoch 0 for `config` over a prepared store.
pub fn init_checkpoint<T: Scalar>(
    config: &RunConfig,
    store: &EmbeddingStore,
) -> Result<Checkpoint<T>> {
    config.validate()?;
    let n_batches = batches_per_epoch(store, config.batch_size);
    if n_batches == 0 {
        return Err(Error::Usage("training split is empty".into()));
    }
    let scaling = match config.mode {
        TaskMode::Regression if config.normalize_labels => store.label_scaling()?,
        _ => LabelScaling::default(),
    };
    let head_bias = match config.mode {
        TaskMode::Regression if config.normalize_labels => 0.0,
        TaskMode::Regression => store.label_scaling()?.mean,
        TaskMode::Classification => {
            let labels: Vec<f64> = store
                .records_in(Split::Train)
                .filter_map(|(_, r)| r.label.map(f64::from))
                .collect();
            let p =
                (labels.iter().sum::<f64>() / labels.len().max(1) as f64).clamp(1e-3, 1.0 - 1e-3);
            (p / (1.0 - p)).ln()
        }
    };
    let shape = ModelShape {
        d_drug: store.d_drug,
        d_prot: store.d_prot,
        d_shared: config.d_shared,
        k: config.k,
        sigma: config.sigma,
    };
    let mut rng = crate::data::stream_rng(config.seed, u64::MAX - 2);
    let params = ModelParams::init(&shape, T::lit(head_bias), &mut rng)?;
    let total_steps = config.epochs * n_batches as u64;
    let optim = OptimState::new(&params, config.optim_config(total_steps))?;
    Ok(Checkpoint {
        params,
        optim,
        config: config.clone(),
        scaling,
        epoch: 0,
        rng: RngState {
            seed: config.seed,
            next_stream: 0,
        },
    })
}

fn forward_options(config: &RunConfig) -> ForwardOptions {
    ForwardOptions {
        film: config.ablation.film_mode(),
        guard: config.norm_guard(),
    }
}

/// Training batches for one epoch, with negatives redrawn per epoch when
/// `resample_negatives` is set.
pub fn epoch_batches(
    store: &EmbeddingStore,
    config: &RunConfig,
    seed: u64,
    epoch: u64,
) -> Result<crate::data::Batches> {
    let negative_epoch = if config.resample_negatives { epoch } else { 0 };
    make_batches_with(
        store,
        Split::Train,
        config.batch_size,
        seed,
        epoch,
        negative_epoch,
    )
}

/// Continues training `ckpt` until `stop_epoch` completed epochs (capped at
/// the configured total).
pub fn train_until<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    store: &EmbeddingStore,
    stop_epoch: u64,
) -> Result<TrainReport> {
    let config = ckpt.config.clone();
    check_dims(&ckpt.params, store)?;
    let table = EmbeddingTable::<T>::from_store(store);
    let ctx = ObjectiveContext {
        table: &table,
        loss: config.loss_config(),
        opts: forward_options(&config),
        scaling: ckpt.scaling,
    };
    let tensors: Vec<ParamTensor> = ParamTensor::trainable(ctx.opts.film).collect();
    let mut report = TrainReport::default();
    let has_val = store.count_in(Split::Val) > 0;

    while ckpt.epoch < stop_epoch.min(config.epochs) {
        let epoch = ckpt.epoch;
        let batches = epoch_batches(store, &config, ckpt.rng.seed, epoch)?;
        let (mut sum_loss, mut sum_trip, mut sum_sup) = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for batch in &batches.batches {
            let step = ckpt.optim.step + 1;
            let out = batch_objective(&ckpt.params, batch, &ctx).map_err(|e| match e {
                Error::NumericalAbort { records, .. } => Error::NumericalAbort {
                    step,
                    records: records
                        .iter()
                        .filter_map(|r| r.parse::<usize>().ok())
                        .map(|r| {
                            let rec = store.records[r];
                            format!(
                                "{}:{}",
                                store.drug_ids[rec.drug as usize],
                                store.prot_ids[rec.prot as usize]
                            )
                        })
                        .collect(),
                },
                other => other,
            })?;
            report.triplet_evaluations += out.triplet_evaluations;
            sum_loss += out.loss.to_f64_lossy();
            sum_trip += out.terms.triplet_mean().to_f64_lossy();
            sum_sup += out.terms.supervised_mean().to_f64_lossy();
            lr = apply_update(&mut ckpt.params, &out.grads, &mut ckpt.optim, &tensors)?;
            report.lr_trace.push(lr);
        }
        let n = batches.batches.len() as f64;
        let mean_loss = sum_loss / n;
        if !mean_loss.is_finite() {
            return Err(Error::NumericalAbort {
                step: ckpt.optim.step,
                records: vec![],
            });
        }
        ckpt.epoch += 1;
        ckpt.rng.next_stream = ckpt.epoch;
        let val = if has_val {
            Some(evaluate(ckpt, store, Split::Val)?)
        } else {
            None
        };
        report.epochs.push(EpochRecord {
            epoch,
            steps: ckpt.optim.step,
            mean_loss,
            mean_triplet: sum_trip / n,
            mean_supervised: sum_sup / n,
            lr_last: lr,
            skipped_triplets: batches.skipped_triplets,
            val,
        });
    }
    for split in Split::ALL {
        if store.count_in(split) > 0 {
            report.final_eval.push(evaluate(ckpt, store, split)?);
        }
    }
    Ok(report)
}

/// Full training run from scratch.
pub fn train<T: Scalar>(
    config: &RunConfig,
    store: &EmbeddingStore,
) -> Result<(Checkpoint<T>, TrainReport, EmbeddingStore)> {
    let store = prepare_store(store, config)?;
    let mut ckpt = init_checkpoint::<T>(config, &store)?;
    let report = train_until(&mut ckpt, &store, config.epochs)?;
    Ok((ckpt, report, store))
}

fn check_dims<T: Scalar>(params: &ModelParams<T>, store: &EmbeddingStore) -> Result<()> {
    let shape = params.shape();
    if shape.d_drug != store.d_drug {
        return Err(Error::Validation(format!(
            "checkpoint expects drug embeddings of dim {}, store has dim {}",
            shape.d_drug, store.d_drug
        )));
    }
    if shape.d_prot != store.d_prot {
        return Err(Error::Validation(format!(
            "checkpoint expects protein embeddings of dim {}, store has dim {}",
            shape.d_prot, store.d_prot
        )));
    }
    Ok(())
}

/// Model output for one record of a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPrediction {
    pub record: usize,
    pub label: Option<f64>,
    /// Head output in model units (normalized affinity or logit).
    pub raw: f64,
    /// De-normalized affinity, or interaction probability.
    pub value: f64,
    pub distance: f64,
}

fn output_value(mode: TaskMode, scaling: &LabelScaling, raw: f64) -> f64 {
    match mode {
        TaskMode::Regression => scaling.denormalize(raw),
        TaskMode::Classification => sigmoid(raw),
    }
}

/// Predictions for every record of `split`, in record order.
pub fn split_predictions<T: Scalar>(
    ckpt: &Checkpoint<T>,
    store: &EmbeddingStore,
    split: Split,
) -> Result<Vec<PairPrediction>> {
    check_dims(&ckpt.params, store)?;
    let table = EmbeddingTable::<T>::from_store(store);
    let opts = forward_options(&ckpt.config);
    store
        .records_in(split)
        .map(|(i, r)| {
            let tr = forward(&ckpt.params, table.drug(r.drug), table.prot(r.prot), opts)?;
            let raw = tr.prediction.to_f64_lossy();
            Ok(PairPrediction {
                record: i,
                label: r.label.map(f64::from),
                raw,
                value: output_value(ckpt.config.mode, &ckpt.scaling, raw),
                distance: tr.distance.to_f64_lossy(),
            })
        })
        .collect()
}

/// Metrics of `ckpt` over one split of `store`.
pub fn evaluate<T: Scalar>(
    ckpt: &Checkpoint<T>,
    store: &EmbeddingStore,
    split: Split,
) -> Result<EvalReport> {
    let preds = split_predictions(ckpt, store, split)?;
    if preds.is_empty() {
        return Err(Error::Usage(format!("split {} is empty", split.as_str())));
    }
    let loss_cfg = ckpt.config.loss_config();
    let labeled: Vec<&PairPrediction> = preds.iter().filter(|p| p.label.is_some()).collect();
    let mut loss_sum = 0.0;
    for p in &labeled {
        let y = p.label.expect("filtered");
        let target = match loss_cfg.mode {
            TaskMode::Regression => ckpt.scaling.normalize(y),
            TaskMode::Classification => y,
        };
        loss_sum += loss_cfg.supervised(target, p.raw)?.0;
    }
    let mean_loss = if labeled.is_empty() {
        0.0
    } else {
        loss_sum / labeled.len() as f64
    };
    let (mut pcc, mut auroc, mut aupr) = (None, None, None);
    match loss_cfg.mode {
        TaskMode::Regression => {
            let y: Vec<f64> = labeled.iter().map(|p| p.label.expect("filtered")).collect();
            let yh: Vec<f64> = labeled.iter().map(|p| p.value).collect();
            pcc = metrics::pcc(&y, &yh).ok();
        }
        TaskMode::Classification => {
            let y: Vec<bool> = labeled.iter().map(|p| p.label == Some(1.0)).collect();
            let s: Vec<f64> = labeled.iter().map(|p| p.raw).collect();
            auroc = metrics::auroc(&y, &s).ok();
            aupr = metrics::aupr(&y, &s).ok();
        }
    }
    let triplet_satisfaction = {
        let batches = make_batches_with(store, split, ckpt.config.batch_size, ckpt.rng.seed, 0, 0)?;
        let table = EmbeddingTable::<T>::from_store(store);
        metrics::triplet_satisfaction(
            &ckpt.params,
            &table,
            &batches.batches,
            ckpt.config.alpha,
            forward_options(&ckpt.config),
        )
        .ok()
    };
    Ok(EvalReport {
        split: split.as_str().to_string(),
        n: preds.len(),
        pcc,
        auroc,
        aupr,
        triplet_satisfaction,
        mean_loss,
    })
}

/// De-normalized affinity (regression) or interaction probability
/// (classification) for raw embeddings.
pub fn predict_embeddings<T: Scalar>(ckpt: &Checkpoint<T>, drug: &[T], prot: &[T]) -> Result<f64> {
    let tr = forward(&ckpt.params, drug, prot, forward_options(&ckpt.config))?;
    Ok(output_value(
        ckpt.config.mode,
        &ckpt.scaling,
        tr.prediction.to_f64_lossy(),
    ))
}

/// [`predict_embeddings`] for a drug and protein looked up by id.
pub fn predict_ids<T: Scalar>(
    ckpt: &Checkpoint<T>,
    store: &EmbeddingStore,
    drug_id: &str,
    prot_id: &str,
) -> Result<f64> {
    check_dims(&ckpt.params, store)?;
    let d = store.drug_index(drug_id)?;
    let p = store.prot_index(prot_id)?;
    let conv = |xs: &[f32]| xs.iter().map(|&x| T::lit(f64::from(x))).collect::<Vec<T>>();
    predict_embeddings(ckpt, &conv(store.drug(d)), &conv(store.prot(p)))
}
