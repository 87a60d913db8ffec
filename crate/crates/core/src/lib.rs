//! Clustered neural contextual bandits with selective reinitialization.
//!
//! * [`mlp`]: small ReLU regressors with backpropagation.
//! * [`plasticity`]: contribution utilities and unit replacement.
//! * [`drift`]: Page-Hinkley test on absolute errors mapping to a replacement rate.
//! * [`clustering`]: graph and reward-identity user clustering.
//! * [`linalg`]: ridge design matrices for confidence widths.
//! * [`policy`]: the per-round bandit loop.
//! * [`env`]: synthetic, perturbed and ratings-based environments.


// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod clustering;
pub mod drift;
pub mod env;
pub mod error;
pub mod linalg;
pub mod mlp;
pub mod plasticity;
pub mod policy;

pub use error::{Error, Result};
