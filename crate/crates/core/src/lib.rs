//! Quadrature nodes drawn from repulsive Gibbs measures.
//!
//! Nodes minimize a kernel interaction energy plus a confining potential and
//! are sampled with a Metropolis-adjusted Langevin chain. The estimator is the
//! plain node average; its worst-case error is the kernel MMD to the target.

pub mod cli;
pub mod config;
pub mod embedding;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod measures;
pub mod output;
pub mod rng;
pub mod samplers;
pub mod svg;

pub use error::{Error, Result};
