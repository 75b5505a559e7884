use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingStore, LabelKind, Record, Split};
use crate::error::{Error, Result};

/// Rejection-sampling budget, as a multiple of the number of draws requested.
pub const NEGATIVE_RETRY_FACTOR: usize = 100;

/// Anchor protein with a binding and a non-binding drug.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor_prot: u32,
    pub pos_drug: u32,
    pub neg_drug: u32,
    /// Index of the record the positive leg came from.
    pub record: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPair {
    pub drug: u32,
    pub prot: u32,
    pub label: f32,
    pub record: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
    pub labeled: Vec<LabeledPair>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batches {
    pub batches: Vec<TripletBatch>,
    /// Positive records whose anchor protein had no admissible negative drug;
    /// their labeled term is kept, their triple is dropped.
    pub skipped_triplets: usize,
}

/// RNG for `(seed, stream)`; streams separate epochs and purposes.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `round(ratio × positives)` distinct (drug, protein) pairs that are
/// not known interactions, labeled 0 and tagged as training records.
pub fn sample_negatives(store: &EmbeddingStore, seed: u64, ratio: f64) -> Result<Vec<Record>> {
    let interactions = store.interaction_set();
    if interactions.is_empty() {
        return Err(Error::Usage(
            "negative sampling needs at least one interaction".into(),
        ));
    }
    if !(ratio >= 0.0) {
        return Err(Error::Config(format!(
            "negative ratio must be non-negative, got {ratio}"
        )));
    }
    let wanted = (ratio * interactions.len() as f64).round() as usize;
    let (n_drugs, n_prots) = (store.n_drugs() as u32, store.n_prots() as u32);
    let mut rng = stream_rng(seed, u64::MAX);
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(wanted);
    let budget = NEGATIVE_RETRY_FACTOR * wanted;
    let mut attempts = 0;
    while out.len() < wanted {
        if attempts == budget {
            return Err(Error::Sampling(format!(
                "found {} of {wanted} negatives within {budget} draws",
                out.len()
            )));
        }
        attempts += 1;
        let pair = (rng.random_range(0..n_drugs), rng.random_range(0..n_prots));
        if interactions.contains(&pair) || !chosen.insert(pair) {
            continue;
        }
        out.push(Record {
            drug: pair.0,
            prot: pair.1,
            label: Some(0.0),
            split: Split::Train,
        });
    }
    Ok(out)
}

/// Seeded 70/10/20 train/val/test split over records.
pub fn assign_random_split(store: &mut EmbeddingStore, seed: u64) {
    let n = store.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, u64::MAX - 1));
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
    for (rank, &i) in order.iter().enumerate() {
        store.records[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    store.splits_present = true;
}

/// Shuffled mini-batches of one split for one epoch.
///
/// Every record contributes its labeled pair (when labeled); every known
/// interaction additionally contributes one triple whose negative drug is
/// freshly drawn for this `(seed, epoch)` among the split's drugs that do not
/// interact with the anchor protein.
pub fn make_batches(
    store: &EmbeddingStore,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Batches> {
    make_batches_with(store, split, batch_size, seed, epoch, epoch)
}

/// [`make_batches`] with the batch order drawn for `shuffle_epoch` and the
/// negatives drawn for `negative_epoch`.
///
/// Negatives are drawn in record order, so they depend only on
/// `(seed, negative_epoch)` and not on the shuffle.
pub fn make_batches_with(
    store: &EmbeddingStore,
    split: Split,
    batch_size: usize,
    seed: u64,
    shuffle_epoch: u64,
    negative_epoch: u64,
) -> Result<Batches> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = store.records_in(split).map(|(i, _)| i).collect();
    if order.is_empty() {
        return Err(Error::Usage(format!("split {} is empty", split.as_str())));
    }
    let interactions = store.interaction_set();
    let pool: Vec<u32> = {
        let set: BTreeSet<u32> = order.iter().map(|&i| store.records[i].drug).collect();
        set.into_iter().collect()
    };

    let mut neg_rng = stream_rng(seed, 2 * negative_epoch + 1);
    let mut negative = vec![None; store.records.len()];
    let mut skipped = 0;
    for &i in &order {
        let r = store.records[i];
        if store.is_positive(&r) {
            negative[i] = draw_negative(&mut neg_rng, &pool, r.prot, &interactions);
            if negative[i].is_none() {
                skipped += 1;
            }
        }
    }

    order.shuffle(&mut stream_rng(seed, 2 * shuffle_epoch));
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut batch = TripletBatch::default();
        for &i in chunk {
            let r = store.records[i];
            if let Some(label) = r.label {
                batch.labeled.push(LabeledPair {
                    drug: r.drug,
                    prot: r.prot,
                    label,
                    record: i,
                });
            }
            if let Some(neg) = negative[i] {
                batch.triplets.push(Triplet {
                    anchor_prot: r.prot,
                    pos_drug: r.drug,
                    neg_drug: neg,
                    record: i,
                });
            }
        }
        batches.push(batch);
    }
    Ok(Batches {
        batches,
        skipped_triplets: skipped,
    })
}

fn draw_negative(
    rng: &mut ChaCha8Rng,
    pool: &[u32],
    prot: u32,
    interactions: &HashSet<(u32, u32)>,
) -> Option<u32> {
    for _ in 0..NEGATIVE_RETRY_FACTOR {
        let d = pool[rng.random_range(0..pool.len())];
        if !interactions.contains(&(d, prot)) {
            return Some(d);
        }
    }
    let candidates: Vec<u32> = pool
        .iter()
        .copied()
        .filter(|&d| !interactions.contains(&(d, prot)))
        .collect();
    candidates.choose(rng).copied()
}

impl EmbeddingStore {
    /// Appends sampled negatives as label-0 records and switches the store to
    /// binary labels.
    pub fn add_sampled_negatives(&mut self, seed: u64, ratio: f64) -> Result<usize> {
        if self.label_kind == LabelKind::Real {
            return Err(Error::Usage(
                "binarize real-valued labels before adding sampled negatives".into(),
            ));
        }
        let negatives = sample_negatives(self, seed, ratio)?;
        if self.label_kind == LabelKind::None {
            for r in &mut self.records {
                r.label = Some(1.0);
            }
            self.label_kind = LabelKind::Binary;
        }
        let n = negatives.len();
        self.records.extend(negatives);
        Ok(n)
    }
}
