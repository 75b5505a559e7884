//! Evaluation metrics and the distance-to-affinity curve.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::{EmbeddingTable, LabelScaling, TripletBatch};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardOptions, ModelParams};
use crate::scalar::Scalar;

/// Metrics over one split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub n: usize,
    pub pcc: Option<f64>,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub triplet_satisfaction: Option<f64>,
    pub mean_loss: f64,
}

/// Sample Pearson correlation.
pub fn pcc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::dim("pcc inputs", y.len(), y_hat.len()));
    }
    if y.len() < 2 {
        return Err(Error::UndefinedMetric(
            "pcc needs at least two points".into(),
        ));
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = y_hat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mh);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("pcc of a constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve via the Mann–Whitney statistic; ties count ½.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::dim("auroc inputs", labels.len(), scores.len()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auroc needs both classes".into()));
    }
    // Sweep from the highest score: each positive beats the negatives below
    // its tie group and splits credit with the negatives inside it.
    let mut negatives_above = 0usize;
    let mut wins = 0.0f64;
    for group in tie_groups(scores) {
        let gp = group.iter().filter(|&&i| labels[i]).count();
        let gn = group.len() - gp;
        let below = neg - negatives_above - gn;
        wins += gp as f64 * (below as f64 + 0.5 * gn as f64);
        negatives_above += gn;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision `Σ (R_i − R_{i−1}) · P_i` over a descending-score sweep,
/// with tied scores entering together.
pub fn aupr(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::dim("aupr inputs", labels.len(), scores.len()));
    }
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "aupr needs at least one positive".into(),
        ));
    }
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0f64);
    for group in tie_groups(scores) {
        let gp = group.iter().filter(|&&i| labels[i]).count();
        tp += gp;
        seen += group.len();
        if gp > 0 {
            ap += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Head output as a function of distance alone:
/// `ŷ(d) = Σ_j W_j exp(−(d − μ_j)² / (2σ²)) + b`, in model (normalized) units.
pub fn head_at_distance<T: Scalar>(params: &ModelParams<T>, d: f64) -> f64 {
    let sigma = params.rbf_sigma.to_f64_lossy();
    let denom = 2.0 * sigma * sigma;
    params
        .head_w
        .iter()
        .zip(&params.rbf_centers)
        .map(|(w, mu)| {
            let diff = d - mu.to_f64_lossy();
            w.to_f64_lossy() * (-(diff * diff) / denom).exp()
        })
        .sum::<f64>()
        + params.head_b.to_f64_lossy()
}

/// Even grid over `[0, 2]` with exact endpoints.
pub fn distance_grid(n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::Usage(
            "curve export needs at least two points".into(),
        ));
    }
    let last = n_points - 1;
    Ok((0..n_points)
        .map(|i| {
            if i == last {
                2.0
            } else {
                2.0 * i as f64 / last as f64
            }
        })
        .collect())
}

/// `(d, ŷ(d))` rows on an even grid over `[0, 2]`, de-normalized by
/// `scaling` when given.
pub fn export_distance_curve<T: Scalar>(
    params: &ModelParams<T>,
    n_points: usize,
    scaling: Option<LabelScaling>,
) -> Result<Vec<(f64, f64)>> {
    let scaling = scaling.unwrap_or_default();
    Ok(distance_grid(n_points)?
        .into_iter()
        .map(|d| (d, scaling.denormalize(head_at_distance(params, d))))
        .collect())
}

/// Upper bound on `|ŷ(d + h) − ŷ(d)|`: each bump has slope at most
/// `e^{−1/2}/σ`, so the jump is at most `h · k · |W|∞ · e^{−1/2} / σ`
/// (times the label scale).
pub fn curve_jump_bound<T: Scalar>(params: &ModelParams<T>, step: f64, scale: f64) -> f64 {
    let w_inf = params
        .head_w
        .iter()
        .fold(0.0f64, |m, w| m.max(w.to_f64_lossy().abs()));
    let sigma = params.rbf_sigma.to_f64_lossy();
    step * params.head_w.len() as f64 * w_inf * (-0.5f64).exp() / sigma * scale.abs()
}

pub fn write_curve(path: impl AsRef<Path>, rows: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("distance,y_hat\n");
    for (d, y) in rows {
        out.push_str(&format!("{d},{y}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Fraction of triples with `d_ap + α ≤ d_an` under `params`.
pub fn triplet_satisfaction<T: Scalar>(
    params: &ModelParams<T>,
    table: &EmbeddingTable<T>,
    batches: &[TripletBatch],
    alpha: f64,
    opts: ForwardOptions,
) -> Result<f64> {
    let mut total = 0usize;
    let mut satisfied = 0usize;
    for t in batches.iter().flat_map(|b| &b.triplets) {
        let anchor = table.prot(t.anchor_prot);
        let d_ap = forward(params, table.drug(t.pos_drug), anchor, opts)?.distance;
        let d_an = forward(params, table.drug(t.neg_drug), anchor, opts)?.distance;
        total += 1;
        if satisfaction_holds(d_ap.to_f64_lossy(), d_an.to_f64_lossy(), alpha) {
            satisfied += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no triples to evaluate".into()));
    }
    Ok(satisfied as f64 / total as f64)
}

pub(crate) fn satisfaction_holds(d_ap: f64, d_an: f64, alpha: f64) -> bool {
    d_ap + alpha <= d_an
}
