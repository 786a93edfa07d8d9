//! Probes for LLM answer correctness built from hidden states plus
//! data-agnostic output-distribution features.
//!
//! The pipeline: load [`dataset`] bundles, derive [`labeling`] targets and
//! [`agnostic`] features, build [`assembly`] views for one of three
//! hidden-state configurations, train a [`forest`] probe, score it with
//! [`metrics`], and explain it with [`shap`] and [`pca`]. The [`harness`]
//! runs whole transfer experiments from a plan file.

pub mod agnostic;
pub mod assembly;
pub mod dataset;
pub mod error;
pub mod fmt;
pub mod forest;
pub mod harness;
pub mod labeling;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod pca;
pub mod shap;

pub use error::{Error, Result};
pub use matrix::Matrix;
