//! Heterogeneous treatment effects `HTE(y0) = E[y1 − y0 | y0]` under
//! treatment assignment that may depend on the untreated outcome.
//!
//! The crate provides the Gaussian and censored Tobit–Gumbel outcome models,
//! their observed-data and augmented likelihoods, GMM moment constraints from
//! auxiliary information on the untreated outcome, an adaptive
//! Metropolis-within-Gibbs sampler, posterior estimands, comparison
//! estimators, a numerical completeness probe and a replication harness.

pub mod baselines;
pub mod censored;
pub mod config;
pub mod error;
pub mod estimands;
pub mod gmm;
pub mod harness;
pub mod identify;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod simulate;

pub use error::{HteError, Result};
