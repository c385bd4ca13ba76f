//! Counterfactual explanation sets for tabular neural-network classifiers.
//!
//! A set of `n` counterfactuals is optimised jointly with Adam against a
//! weighted loss (validity, proximity, sparsity, plausibility, diversity and a
//! one-hot consistency term), with threshold penalties and perturbation
//! restarts. Input gradients of the target-class probability are accumulated
//! along the way and reduced to per-feature attribution scores.

pub mod adam;
pub mod attribution;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod loss;
pub mod matrix;
pub mod nn;

pub use error::{CfxError, Result};
pub use matrix::Matrix;
