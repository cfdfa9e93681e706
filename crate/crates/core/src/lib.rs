//! Seed-subset selection for transfer-active learning.
//!
//! Training points of a labeled source dataset are scored by how much a
//! bagged ensemble's predictive distribution over a probe set changes when the
//! point is in-bag versus out-of-bag (a KL divergence between moment-matched
//! Gaussians). Those scores become the qualities of a quality-diversity
//! L-ensemble built on random Fourier features, and a subset of the requested
//! size is drawn from the resulting determinantal point process.
//!
//! The crate also carries the comparison selectors (random, PCA grid, loss
//! coreset), nearest-neighbour transfer matching for feature-shift problems,
//! an active-learning simulator and the learning-curve metrics used to
//! compare seed-selection methods.

pub mod active;
pub mod baselines;
pub mod dataset;
pub mod dpp;
pub mod ensemble;
mod error;
pub mod infogain;
pub mod metrics;
pub mod rff;
pub mod rng;
pub mod roots;
pub mod selection;
pub mod transfer;

pub use error::{Error, Result};
