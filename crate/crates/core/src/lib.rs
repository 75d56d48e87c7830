//! Unsupervised progressive domain adaptation for no-reference point-cloud
//! quality assessment.
//!
//! The crate is organised in the order a run flows through it:
//!
//! * [`dataset`]: synthetic source/target domains, the opinion oracle,
//!   on-disk format and group-wise folds.
//! * [`backbone`]: permutation-invariant descriptors and the feature
//!   extractor.
//! * [`daca`]: stage one, discrepancy-weighted ranking and kernel alignment
//!   of pairwise rank features.
//! * [`pffa`]: stage two, cross-attention fusion, gated conditional
//!   discriminator and quality regression.
//! * [`train`]: the two-stage procedure and the NoAdapt/DirAdapt baselines.
//! * [`eval`]: SRCC, PLCC after logistic mapping, the cross-domain protocol
//!   and method comparison tables.
//!
//! All numerics are `f64` and every loss is differentiated by the small
//! reverse-mode tape in [`graph`].

// NaN-rejecting `!(x > 0.0)` checks are deliberate.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod backbone;
pub mod checkpoint;
pub mod daca;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pffa;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Matrix;
