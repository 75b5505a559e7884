//! Embedding stores, splits, negative sampling, triplet batches and the
//! planted-geometry synthetic generator.

mod format;
mod sampling;
mod synthetic;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use format::{decode_store, encode_store, load_store, save_store, HEADER_LEN, RECORD_LEN};
pub(crate) use sampling::stream_rng;
pub use sampling::{
    assign_random_split, make_batches, make_batches_with, sample_negatives, Batches, LabeledPair,
    Triplet, TripletBatch, NEGATIVE_RETRY_FACTOR,
};
pub use synthetic::{generate_synthetic, PlantedTruth, SyntheticConfig, SyntheticData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum LabelKind {
    #[default]
    None = 0,
    Real = 1,
    Binary = 2,
}

impl LabelKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(LabelKind::None),
            1 => Some(LabelKind::Real),
            2 => Some(LabelKind::Binary),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum Split {
    #[default]
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}"))),
        }
    }
}

/// One drug–protein observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub drug: u32,
    pub prot: u32,
    pub label: Option<f32>,
    pub split: Split,
}

/// Deduplicated drug and protein embeddings plus interaction records.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EmbeddingStore {
    pub d_drug: usize,
    pub d_prot: usize,
    pub drug_ids: Vec<String>,
    pub prot_ids: Vec<String>,
    /// `n_drugs × d_drug`, row-major.
    pub drug_matrix: Vec<f32>,
    /// `n_prots × d_prot`, row-major.
    pub prot_matrix: Vec<f32>,
    pub label_kind: LabelKind,
    pub splits_present: bool,
    pub records: Vec<Record>,
}

impl EmbeddingStore {
    pub fn n_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    pub fn n_prots(&self) -> usize {
        self.prot_ids.len()
    }

    pub fn drug(&self, i: usize) -> &[f32] {
        &self.drug_matrix[i * self.d_drug..(i + 1) * self.d_drug]
    }

    pub fn prot(&self, i: usize) -> &[f32] {
        &self.prot_matrix[i * self.d_prot..(i + 1) * self.d_prot]
    }

    /// Checks every store invariant.
    pub fn validate(&self) -> Result<()> {
        if self.drug_matrix.len() != self.n_drugs() * self.d_drug {
            return Err(Error::dim(
                "drug matrix",
                self.n_drugs() * self.d_drug,
                self.drug_matrix.len(),
            ));
        }
        if self.prot_matrix.len() != self.n_prots() * self.d_prot {
            return Err(Error::dim(
                "protein matrix",
                self.n_prots() * self.d_prot,
                self.prot_matrix.len(),
            ));
        }
        if let Some(pos) = self.drug_matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "drug embedding entry {pos} is not finite"
            )));
        }
        if let Some(pos) = self.prot_matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "protein embedding entry {pos} is not finite"
            )));
        }
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.drug as usize >= self.n_drugs() {
                return Err(Error::Validation(format!(
                    "record {i}: drug index {} out of range 0..{}",
                    r.drug,
                    self.n_drugs()
                )));
            }
            if r.prot as usize >= self.n_prots() {
                return Err(Error::Validation(format!(
                    "record {i}: protein index {} out of range 0..{}",
                    r.prot,
                    self.n_prots()
                )));
            }
            if !label_is_valid(self.label_kind, r.label) {
                return Err(Error::Validation(format!(
                    "record {i}: label {:?} invalid for label kind {:?}",
                    r.label, self.label_kind
                )));
            }
            if !seen.insert((r.split, r.drug, r.prot)) {
                return Err(Error::Validation(format!(
                    "record {i}: duplicate pair ({}, {}) in split {}",
                    r.drug,
                    r.prot,
                    r.split.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Whether the record is a known interaction. Binary stores count only
    /// label-1 records; otherwise every record is an interaction.
    pub fn is_positive(&self, r: &Record) -> bool {
        match self.label_kind {
            LabelKind::Binary => r.label == Some(1.0),
            _ => true,
        }
    }

    /// `(drug, prot)` pairs of all known interactions, across splits.
    pub fn interaction_set(&self) -> HashSet<(u32, u32)> {
        self.records
            .iter()
            .filter(|r| self.is_positive(r))
            .map(|r| (r.drug, r.prot))
            .collect()
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = (usize, &Record)> {
        self.records
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.split == split)
    }

    pub fn count_in(&self, split: Split) -> usize {
        self.records_in(split).count()
    }

    /// Converts real labels to binary interaction labels: `label < threshold`
    /// becomes 1 (binder), anything else 0.
    pub fn binarize(&mut self, threshold: f32) -> Result<()> {
        match self.label_kind {
            LabelKind::Binary => Ok(()),
            LabelKind::None => Err(Error::Usage(
                "cannot binarize a store without labels".into(),
            )),
            LabelKind::Real => {
                for r in &mut self.records {
                    r.label = r.label.map(|y| if y < threshold { 1.0 } else { 0.0 });
                }
                self.label_kind = LabelKind::Binary;
                Ok(())
            }
        }
    }

    pub fn drug_index(&self, id: &str) -> Result<usize> {
        lookup(&self.drug_ids, id, "drug")
    }

    pub fn prot_index(&self, id: &str) -> Result<usize> {
        lookup(&self.prot_ids, id, "protein")
    }

    /// Mean and standard deviation of the training labels.
    pub fn label_scaling(&self) -> Result<LabelScaling> {
        let ys: Vec<f64> = self
            .records_in(Split::Train)
            .filter_map(|(_, r)| r.label.map(f64::from))
            .collect();
        if ys.is_empty() {
            return Err(Error::Usage("no labeled training records".into()));
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(LabelScaling {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        })
    }
}

fn label_is_valid(kind: LabelKind, label: Option<f32>) -> bool {
    match (kind, label) {
        (_, None) => true,
        (LabelKind::None, Some(_)) => false,
        (LabelKind::Real, Some(y)) => y.is_finite(),
        (LabelKind::Binary, Some(y)) => y == 0.0 || y == 1.0,
    }
}

fn lookup(ids: &[String], id: &str, kind: &'static str) -> Result<usize> {
    if let Some(i) = ids.iter().position(|x| x == id) {
        return Ok(i);
    }
    let mut scored: Vec<(usize, &String)> = ids
        .iter()
        .map(|x| (strsim::levenshtein(x, id), x))
        .collect();
    scored.sort();
    Err(Error::Lookup {
        kind,
        id: id.to_string(),
        nearest: scored.into_iter().take(3).map(|(_, s)| s.clone()).collect(),
    })
}

/// Affine label normalization `(y − mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelScaling {
    pub mean: f64,
    pub std: f64,
}

impl Default for LabelScaling {
    fn default() -> Self {
        LabelScaling {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl LabelScaling {
    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}

/// Store embeddings converted to the model's scalar type.
#[derive(Clone, Debug)]
pub struct EmbeddingTable<T> {
    pub d_drug: usize,
    pub d_prot: usize,
    drugs: Vec<T>,
    prots: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn from_store(store: &EmbeddingStore) -> Self {
        let conv = |xs: &[f32]| xs.iter().map(|&x| T::lit(f64::from(x))).collect();
        EmbeddingTable {
            d_drug: store.d_drug,
            d_prot: store.d_prot,
            drugs: conv(&store.drug_matrix),
            prots: conv(&store.prot_matrix),
        }
    }

    pub fn drug(&self, i: u32) -> &[T] {
        let i = i as usize;
        &self.drugs[i * self.d_drug..(i + 1) * self.d_drug]
    }

    pub fn prot(&self, i: u32) -> &[T] {
        let i = i as usize;
        &self.prots[i * self.d_prot..(i + 1) * self.d_prot]
    }
}
