//! Active learning for multi-instance multi-label (MIML) data with
//! incomplete bag labels.
//!
//! A bag is a set of instances; each instance has a latent class drawn from
//! a softmax model, and a bag is positive for class `c` when any of its
//! instances is. Only some bag-class labels are known. The model is trained
//! by maximizing the marginal likelihood of the observed labels, and new
//! bag-class pairs are queried by expected gradient length (EGL) or
//! uncertainty.
//!
//! Classes are 0-based everywhere in this API and 1-based in files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active_loop;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod rng;
pub mod selection;
pub mod trainer;
pub mod verify;

pub use active_loop::{run, RunConfig, RunOutput};
pub use dataset::{Bag, Dataset, LabelVector, OracleTruth, TriLabel};
pub use error::{Error, Result};
pub use metrics::{evaluate, MetricsRow};
pub use model::ParamMatrix;
pub use selection::Criterion;
pub use trainer::{TrainConfig, UpdateMode};
