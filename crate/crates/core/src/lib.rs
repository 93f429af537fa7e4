//! Active context sampling for pure exploration in stochastic contextual
//! linear bandits.
//!
//! The crate covers the full pipeline: bandit instances ([`model`],
//! [`instances`]), covariance kernels and ridge regression ([`linalg`],
//! [`ridge`]), sampling designs ([`design`]), the exploration algorithms
//! ([`explore`]), regret and claim verification ([`eval`]), the
//! elimination-style learner over enumerated policies ([`rage`]) and a
//! config-driven experiment runner ([`experiment`]).
//!
//! All indices are 0-based. Context-action pairs are flattened as
//! `x * n_actions + a`.

// Guards are written `!(v > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(feature = "sdp")]
extern crate openblas_src as _;

pub mod design;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod explore;
pub mod instances;
pub mod linalg;
pub mod model;
pub mod rage;
pub mod ridge;
pub mod seed;

pub use error::{Result, SclbError};
pub use linalg::{covariance_of_design, covariance_of_log, schur_psd, weighted_norm_sq, CovarianceMatrix};
pub use model::{BanditInstance, Design, Policy, RewardSource, Sample, SampleLog};
pub use ridge::{beta_width, gamma_uncertainty, greedy_policy, ridge_fit, BetaParams};
