//! Benchmarking toolkit for unsupervised anomaly detection on multivariate
//! time series.
//!
//! The crate is organized around the stages of a detection benchmark:
//!
//! - [`numkit`] — dense f64 tensors with reverse-mode differentiation, the
//!   layer types the detectors need, losses, and optimizers.
//! - [`dataio`] — dataset ingestion (TEP-style CSV schema), normalization,
//!   windowing, masking schemes, and a seeded synthetic fault generator.
//! - [`detectors`] — a uniform detector interface (fit on fault-free data,
//!   emit per-time-step anomaly scores) with thirteen concrete variants.
//! - [`scoring`] — shared transformations from raw model errors to calibrated
//!   per-time-step anomaly scores.
//! - [`evalkit`] — pointwise metrics: confusion accounting, best-F1 threshold
//!   search, precision-recall curves, AUPRC.
//! - [`benchproto`] — the evaluation protocol: neighbor-excluded test folds,
//!   time-budgeted grid search, rank aggregation, result persistence.
//! - [`cli`] — the batch command-line front end.
//!
//! With the default `parallel` feature, independent work units (grid configs,
//! per-run scoring) run on a rayon pool; results are merged in deterministic
//! index order so output is identical to the sequential build.

pub mod benchproto;
pub mod cli;
pub mod dataio;
pub mod detectors;
pub mod error;
pub mod evalkit;
pub mod exec;
pub mod numkit;
pub mod scoring;

pub use error::{Error, Result};
