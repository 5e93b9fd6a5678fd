//! QSAR cardiotoxicity modeling toolkit.
//!
//! The crate covers the full path from raw assay exports to hierarchical
//! potency classifiers for the hERG and Nav1.5 ion channels:
//!
//! * [`dataset`]: activity/descriptor CSV ingestion, duplicate curation,
//!   PIC50 normalization, potency labeling and stratified splitting.
//! * [`features`]: low-information filtering, correlation pruning and LASSO.
//! * [`preprocess`]: z-score scaling and covariance PCA.
//! * [`resample`]: SMOTE over-sampling and NearMiss under-sampling.
//! * [`learners`]: random forests, kernel SVM (SMO), MLP and ridge.
//! * [`metrics`]: confusion-based statistics and regression scores.
//! * [`pipeline`]: the ToxTree cascades and grid-search tuning.
//! * [`persistence`]: versioned, bit-exact model bundles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod features;
pub mod hexfloat;
pub mod learners;
pub mod metrics;
pub mod persistence;
pub mod pipeline;
pub mod preprocess;
pub mod resample;
mod rng;

pub use error::{Error, Result};
