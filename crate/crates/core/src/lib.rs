//! Log-concave surrogate posteriors and unadjusted Langevin sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`basis`] and [`prior`]: orthonormal series on `[0, 1]` and the rescaled
//!   Gaussian sieve prior.
//! - [`family`]: one-parameter exponential families and link functions.
//! - [`forward`]: forward operators, including a 1-D Darcy solver with exact
//!   discrete derivatives.
//! - [`likelihood`]: data generation and log-likelihood engines with gradients,
//!   directional Hessians and a local curvature probe.
//! - [`surrogate`]: the globally concave surrogate log-likelihood built from a
//!   cut-off function and a mollified quadratic penalty.
//! - [`sampler`]: unadjusted Langevin chains with exit-time tracking and
//!   step-size / burn-in calculators.
//! - [`diagnostics`]: grid posteriors, exact empirical Wasserstein-2 and the
//!   empirical scaling checks.

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod family;
pub mod forward;
pub mod likelihood;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod surrogate;

pub use error::{Error, Result};

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean distance between two vectors of equal length.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
