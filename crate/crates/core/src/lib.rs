//! Adversarial examples for mixed-type (numerical + categorical) tabular data.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: schema, CSV loading, standardization, one-hot encoding and a
//!   seeded synthetic dataset generator.
//! - [`numerics`]: l1-ball projection, l1 steepest-ascent step, Jacobi
//!   eigendecomposition and stable softmax / log-sum-exp.
//! - [`model`]: the target classifier, a one-hidden-layer MLP with analytic
//!   input gradients.
//! - [`mahalanobis`]: the generalized covariance of encoded mixed data and the
//!   mixed Mahalanobis distance built on its truncated pseudo-inverse.
//! - [`attack`]: the joint numerical/categorical gradient attack (M-Attack).
//! - [`baselines`]: l1-PGD followed by exhaustive search or greedy assignment
//!   of categorical features.
//! - [`ood`]: kernel density detector used to flag abnormal samples.
//! - [`harness`]: end-to-end experiment campaigns and report writers.

pub mod attack;
pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod mahalanobis;
pub mod model;
pub mod numerics;
pub mod ood;

mod binfmt;

pub use error::{Error, Result};
