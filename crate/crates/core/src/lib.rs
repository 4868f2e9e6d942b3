//! Hard-label, transformation-robust masked perturbation synthesis.
//!
//! Given nothing more than top-1 label access to an image classifier, the
//! crate searches for a small binary mask on an object and a perturbation
//! confined to that mask so that the perturbed object is read as a chosen
//! target label under a large fraction of sampled physical transformations
//! (viewpoint, crop jitter, lighting and focus).
//!
//! The pieces, bottom-up:
//!
//! - [`imaging`]: images, masks, perturbations, patch grids and resampling.
//! - [`transforms`]: the sampleable distribution of physical transforms.
//! - [`oracle`]: the hard-label query boundary and exact query accounting.
//! - [`survivability`]: Monte-Carlo survivability estimates and error bounds.
//! - [`maskgen`]: heatmap, coarse and fine mask reduction.
//! - [`boost`]: randomized gradient-free survivability ascent inside a mask.
//! - [`baseline`]: the boundary-distance baseline and threshold schedule.
//! - [`pipeline`]: configuration, orchestration and result persistence.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod boost;
pub mod error;
pub mod fixture;
pub mod imaging;
pub mod maskgen;
pub mod oracle;
pub mod pipeline;
pub mod seed;
pub mod survivability;
pub mod transforms;

pub use error::{Error, Partial, Result};
pub use imaging::{BinaryGrid, Image, Mask, Patch, PatchGrid, Perturbation};
pub use oracle::{HardLabelOracle, Label, OracleSession, Phase, QueryLedger};
pub use survivability::{SurvivabilityEstimate, SurvivabilityEstimator};
pub use transforms::{TransformDistribution, TransformParams};
