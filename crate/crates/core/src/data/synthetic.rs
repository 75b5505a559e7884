//! Planted-geometry synthetic corpora.
//!
//! Every drug and protein gets a latent unit vector. A protein may carry a
//! hidden per-feature scaling of drug latents, linear in the protein latent,
//! which is exactly the kind of interaction a FiLM layer can express and a
//! modulation-free model cannot. The planted affinity of a pair is
//! `a − b · cosdist(s_p ⊙ u_d, v_p)` plus optional Gaussian noise. Observed
//! embeddings are random orthonormal liftings of the latents plus noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::sampling::{assign_random_split, stream_rng};
use super::{EmbeddingStore, LabelKind, Record, Split};
use crate::error::{Error, Result};
use crate::objectives::TaskMode;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_drugs: usize,
    pub n_prots: usize,
    /// Positive (interacting) pairs to emit. Classification corpora add the
    /// same number of negatives.
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub d_drug: usize,
    pub d_prot: usize,
    /// Standard deviation of the Gaussian noise added to affinity labels.
    pub label_noise: f64,
    /// Keep validation and test labels noise-free, so held-out metrics
    /// measure recovery of the planted affinity.
    pub noise_free_eval: bool,
    /// Standard deviation of the Gaussian noise added to embeddings.
    pub embed_noise: f64,
    /// Strength of the hidden per-protein modulation; 0 disables it.
    pub modulation: f64,
    /// Split by drug and draw test-drug latents around a rotated direction.
    pub domain_shift: bool,
    /// Rotation applied to the test-drug latent distribution, in radians.
    pub shift_angle: f64,
    /// Concentration of drug latents around their mean direction.
    pub anisotropy: f64,
    pub affinity_offset: f64,
    pub affinity_slope: f64,
    /// Temperature of the preference for close (high-affinity) pairs when
    /// choosing which pairs are observed interactions.
    pub binder_temperature: f64,
    pub mode: TaskMode,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_drugs: 200,
            n_prots: 50,
            n_pairs: 2000,
            latent_dim: 8,
            d_drug: 32,
            d_prot: 32,
            label_noise: 0.0,
            noise_free_eval: false,
            embed_noise: 0.0,
            modulation: 0.0,
            domain_shift: false,
            shift_angle: 0.6,
            anisotropy: 1.0,
            affinity_offset: 7.0,
            affinity_slope: 3.0,
            binder_temperature: 0.25,
            mode: TaskMode::Regression,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_noise >= 0.0) || !(self.embed_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if self.n_drugs == 0 || self.n_prots == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "entity counts and latent dim must be positive".into(),
            ));
        }
        if self.d_drug == 0 || self.d_prot == 0 {
            return Err(Error::Config("embedding dims must be positive".into()));
        }
        let per_prot = self.n_pairs.div_ceil(self.n_prots);
        let needed = match self.mode {
            TaskMode::Regression => per_prot,
            TaskMode::Classification => 2 * per_prot,
        };
        if needed > self.n_drugs {
            return Err(Error::Config(format!(
                "{} pairs over {} proteins need {needed} drugs per protein, only {} drugs",
                self.n_pairs, self.n_prots, self.n_drugs
            )));
        }
        if !(self.binder_temperature > 0.0) {
            return Err(Error::Config("binder temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Generator-side ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedTruth {
    pub drug_latents: Vec<Vec<f64>>,
    pub prot_latents: Vec<Vec<f64>>,
    /// Per-protein feature scaling of drug latents (all ones when disabled).
    pub modulation: Vec<Vec<f64>>,
    pub affinity_offset: f64,
    pub affinity_slope: f64,
}

impl PlantedTruth {
    pub fn distance(&self, drug: usize, prot: usize, modulated: bool) -> f64 {
        let u = &self.drug_latents[drug];
        let v = &self.prot_latents[prot];
        let scaled: Vec<f64> = if modulated {
            u.iter()
                .zip(&self.modulation[prot])
                .map(|(a, s)| a * s)
                .collect()
        } else {
            u.clone()
        };
        cosdist(&scaled, v)
    }

    /// Noise-free planted affinity; `modulated = false` gives the best
    /// modulation-blind predictor built from the same latents.
    pub fn affinity(&self, drug: usize, prot: usize, modulated: bool) -> f64 {
        self.affinity_offset - self.affinity_slope * self.distance(drug, prot, modulated)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub store: EmbeddingStore,
    pub truth: PlantedTruth,
}

fn cosdist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `d × l` matrix with orthonormal columns (Gram–Schmidt), or plain scaled
/// Gaussian columns when `d < l`.
fn lifting(rng: &mut ChaCha8Rng, d: usize, l: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(l);
    for _ in 0..l {
        let mut c = gaussian(rng, d);
        if d >= l {
            for prev in &cols {
                let p: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
                c.iter_mut().zip(prev).for_each(|(a, b)| *a -= p * b);
            }
        }
        cols.push(unit(c));
    }
    cols
}

fn lift(cols: &[Vec<f64>], latent: &[f64], d: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = vec![0.0f64; d];
    for (c, &z) in cols.iter().zip(latent) {
        out.iter_mut().zip(c).for_each(|(o, ci)| *o += ci * z);
    }
    if noise > 0.0 {
        let n = Normal::new(0.0, noise).expect("valid std");
        out.iter_mut().for_each(|o| *o += n.sample(rng));
    }
    out.into_iter().map(|x| x as f32).collect()
}

/// Weighted sampling of `k` distinct indices without replacement
/// (exponential-key method).
fn weighted_choice(
    rng: &mut ChaCha8Rng,
    candidates: &[usize],
    weights: &[f64],
    k: usize,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = candidates
        .iter()
        .zip(weights)
        .map(|(&c, &w)| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, c)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, c)| c).collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticData> {
    cfg.validate()?;
    let l = cfg.latent_dim;
    let mut rng = stream_rng(seed, 0);

    let mean_dir = unit(gaussian(&mut rng, l));
    let shifted_dir = {
        let mut w = gaussian(&mut rng, l);
        let p: f64 = w.iter().zip(&mean_dir).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(&mean_dir).for_each(|(a, b)| *a -= p * b);
        let w = unit(w);
        let (s, c) = cfg.shift_angle.sin_cos();
        unit(
            mean_dir
                .iter()
                .zip(&w)
                .map(|(m, w)| c * m + s * w)
                .collect(),
        )
    };

    // Drug splits are fixed before latents so test drugs can be shifted.
    let mut drug_split = vec![Split::Train; cfg.n_drugs];
    if cfg.domain_shift {
        let mut order: Vec<usize> = (0..cfg.n_drugs).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let n_train = (0.7 * cfg.n_drugs as f64).round() as usize;
        let n_val = (0.1 * cfg.n_drugs as f64).round() as usize;
        for (rank, &d) in order.iter().enumerate() {
            drug_split[d] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    let drug_latents: Vec<Vec<f64>> = drug_split
        .iter()
        .map(|&s| {
            let dir = if cfg.domain_shift && s == Split::Test {
                &shifted_dir
            } else {
                &mean_dir
            };
            let g = gaussian(&mut rng, l);
            unit(
                g.iter()
                    .zip(dir)
                    .map(|(g, m)| g + cfg.anisotropy * m)
                    .collect(),
            )
        })
        .collect();
    let prot_latents: Vec<Vec<f64>> = (0..cfg.n_prots)
        .map(|_| unit(gaussian(&mut rng, l)))
        .collect();

    let mixing: Vec<Vec<f64>> = (0..l)
        .map(|_| {
            gaussian(&mut rng, l)
                .into_iter()
                .map(|x| x / (l as f64).sqrt())
                .collect()
        })
        .collect();
    let modulation: Vec<Vec<f64>> = prot_latents
        .iter()
        .map(|v| {
            mixing
                .iter()
                .map(|row| {
                    1.0 + cfg.modulation * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        })
        .collect();

    let truth = PlantedTruth {
        drug_latents,
        prot_latents,
        modulation,
        affinity_offset: cfg.affinity_offset,
        affinity_slope: cfg.affinity_slope,
    };

    let drug_lift = lifting(&mut rng, cfg.d_drug, l);
    let prot_lift = lifting(&mut rng, cfg.d_prot, l);
    let drug_matrix: Vec<f32> = truth
        .drug_latents
        .iter()
        .flat_map(|u| lift(&drug_lift, u, cfg.d_drug, cfg.embed_noise, &mut rng))
        .collect();
    let prot_matrix: Vec<f32> = truth
        .prot_latents
        .iter()
        .flat_map(|v| lift(&prot_lift, v, cfg.d_prot, cfg.embed_noise, &mut rng))
        .collect();

    let label_noise = Normal::new(0.0, cfg.label_noise).expect("valid std");
    let base = cfg.n_pairs / cfg.n_prots;
    let extra = cfg.n_pairs % cfg.n_prots;
    let mut records = Vec::with_capacity(cfg.n_pairs * 2);
    let mut noise = Vec::with_capacity(cfg.n_pairs * 2);
    for p in 0..cfg.n_prots {
        let count = base + usize::from(p < extra);
        let all: Vec<usize> = (0..cfg.n_drugs).collect();
        let dists: Vec<f64> = all.iter().map(|&d| truth.distance(d, p, true)).collect();
        let weights: Vec<f64> = dists
            .iter()
            .map(|d| (-d / cfg.binder_temperature).exp())
            .collect();
        let mut positives = weighted_choice(&mut rng, &all, &weights, count);
        positives.sort_unstable();
        for &d in &positives {
            let label = match cfg.mode {
                TaskMode::Regression => {
                    noise.push(if cfg.label_noise > 0.0 {
                        label_noise.sample(&mut rng)
                    } else {
                        0.0
                    });
                    truth.affinity(d, p, true)
                }
                TaskMode::Classification => 1.0,
            };
            records.push(Record {
                drug: d as u32,
                prot: p as u32,
                label: Some(label as f32),
                split: drug_split[d],
            });
        }
        if cfg.mode == TaskMode::Classification {
            // Negatives: non-interacting drugs from the far half of this
            // protein's planted distance ranking.
            let mut ranked: Vec<usize> = all.clone();
            ranked.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
            let far: Vec<usize> = ranked[cfg.n_drugs / 2..]
                .iter()
                .copied()
                .filter(|d| positives.binary_search(d).is_err())
                .collect();
            let take = count.min(far.len());
            let uniform = vec![1.0; far.len()];
            let mut negatives = weighted_choice(&mut rng, &far, &uniform, take);
            negatives.sort_unstable();
            for d in negatives {
                records.push(Record {
                    drug: d as u32,
                    prot: p as u32,
                    label: Some(0.0),
                    split: drug_split[d],
                });
            }
        }
    }

    let mut store = EmbeddingStore {
        d_drug: cfg.d_drug,
        d_prot: cfg.d_prot,
        drug_ids: (0..cfg.n_drugs).map(|i| format!("D{i:05}")).collect(),
        prot_ids: (0..cfg.n_prots).map(|i| format!("P{i:04}")).collect(),
        drug_matrix,
        prot_matrix,
        label_kind: match cfg.mode {
            TaskMode::Regression => LabelKind::Real,
            TaskMode::Classification => LabelKind::Binary,
        },
        splits_present: true,
        records,
    };
    if !cfg.domain_shift {
        assign_random_split(&mut store, seed);
    }
    for (r, e) in store.records.iter_mut().zip(noise) {
        if r.split == Split::Train || !cfg.noise_free_eval {
            r.label = r.label.map(|y| (f64::from(y) + e) as f32);
        }
    }
    store.validate()?;
    Ok(SyntheticData { store, truth })
}
