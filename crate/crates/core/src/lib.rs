//! fimguard-core — train small image classifiers with a Fisher-information
//! penalty, attack them, and measure what the penalty bought.
//!
//! The library is organized the way the workflow runs:
//!
//! * [`tensor`] — reverse-mode AD engine everything else differentiates with;
//! * [`linalg`] — power iteration + Jacobi eigensolver for the spectral work;
//! * [`data`] — IDX image files, synthetic datasets, deterministic batching;
//! * [`models`] — the ConvNet / MLP classifiers and their checkpoints;
//! * [`fim`] — Fisher information objects: output-space FIM, its trace,
//!   input-space quadratic forms, and the one-step spectral direction;
//! * [`attacks`] — OSSA plus the classical white-box attack set;
//! * [`trainer`] — SGD training of the plain, FIM-regularized, and
//!   label-smoothed objectives;
//! * [`eval`] — fooling ratios, adversarial distances, transfer matrices,
//!   and report files.
//!
//! All stochastic code takes explicit seeds and is bit-reproducible for a
//! fixed seed and thread count; see the module docs for the per-sample seed
//! derivation rule.

pub mod data;
pub mod error;
pub mod attacks;
pub mod eval;
pub mod fim;
pub mod linalg;
pub mod models;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
