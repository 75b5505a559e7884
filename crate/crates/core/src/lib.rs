//! FiLM-conditioned, cosine-distance RBF regression head for drug–target
//! affinity and interaction prediction, trained over precomputed embeddings.
//!
//! The numerical core ([`model`], [`objectives`], [`optim`], [`metrics`]) is
//! generic over the scalar type through [`Scalar`]. Concrete aliases for
//! `f32` and `f64` are exported below; the CLI trains in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod scalar;
pub mod trainer;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type Gradients64 = model::Gradients<f64>;
pub type Gradients32 = model::Gradients<f32>;
pub type ForwardTrace64 = model::ForwardTrace<f64>;
pub type ForwardTrace32 = model::ForwardTrace<f32>;
pub type OptimState64 = optim::OptimState<f64>;
pub type OptimState32 = optim::OptimState<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
