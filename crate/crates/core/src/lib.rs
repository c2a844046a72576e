//! Decomposition of a binary-group wage gap into explained and unexplained
//! parts.
//!
//! The crate covers the whole estimation pipeline:
//!
//! * [`datamodel`]: datasets, schemas, covariate blocks and design matrices.
//! * [`linmod`]: weighted least squares and logistic regression.
//! * [`lasso`]: cross-validated Gaussian and logistic LASSO paths, post-LASSO
//!   refits and post-double selection.
//! * [`support`]: exact-cell common support, the out-of-support decomposition
//!   of the raw gap and the sequential support analysis.
//! * [`estimators`]: LRM, Blinder-Oaxaca, IPW, AIPW, exact matching,
//!   propensity-score radius matching, the exact/propensity hybrid and PDS,
//!   plus the estimation grid.
//! * [`inference`]: row-bootstrap standard errors.
//! * [`dgp`]: synthetic data with analytically known gaps.
//! * [`config`] and [`report`]: the key-value run configuration and the
//!   CSV/text outputs used by the command-line front end.
//!
//! Gaps are stored in log points, focal group (`group == 1`) minus reference
//! group (`group == 0`).

pub mod config;
pub mod datamodel;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod lasso;
pub mod linmod;
pub mod report;
pub mod support;

mod linalg;
mod stats;

pub use error::{Error, Result};
