//! Choices of `θ_init`.
//!
//! The oracle modes use the truth and exist for synthetic experiments only;
//! [`pilot_ascent`] needs nothing but the posterior.

use langevin_surrogate::rng::rng_from_seed;
use langevin_surrogate::surrogate::LogTarget;
use langevin_surrogate::{distance, norm, Error};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// First `p` truth coefficients, zero-padded: the projection `θ_{*,p}`.
pub fn oracle_projection(theta0: &[f64], p: usize) -> Vec<f64> {
    (0..p)
        .map(|k| theta0.get(k).copied().unwrap_or(0.0))
        .collect()
}

/// `center + ρ u` with `u` uniform on the unit sphere and `ρ = rho_fraction · η/8`.
pub fn oracle_perturbed(center: &[f64], eta: f64, rho_fraction: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let u: Vec<f64> = (0..center.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let scale = rho_fraction * eta / 8.0 / norm(&u);
    center.iter().zip(&u).map(|(c, d)| c + scale * d).collect()
}

/// Consecutive non-finite trial points tolerated by [`pilot_ascent`].
pub const MAX_PILOT_FAILURES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotResult {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

impl PilotResult {
    /// `‖θ − θ_{*,p}‖/η`; the surrogate construction wants at most 1/8.
    pub fn offset_ratio(&self, center: &[f64], eta: f64) -> f64 {
        distance(&self.theta, center) / eta
    }
}

/// Gradient ascent on `target` from the origin. Trial points with a
/// non-finite objective halve the step; so do points failing the Armijo
/// test. Accepted steps double it.
///
/// Stops when the gradient vanishes or the step underflows, or after `steps`
/// iterations.
pub fn pilot_ascent(target: &dyn LogTarget, steps: usize, rate: f64) -> CliResult<PilotResult> {
    let p = target.dim();
    let mut theta = vec![0.0; p];
    let mut f = target.log_density(&theta)?;
    if !f.is_finite() {
        return Err(
            Error::Numeric("pilot ascent: posterior is not finite at the origin".into()).into(),
        );
    }
    let mut g = vec![0.0; p];
    let mut s = rate;
    let mut failures = 0;
    let mut trial = vec![0.0; p];
    let mut gt = vec![0.0; p];
    for it in 0..steps {
        if !target.grad_into(&theta, &mut g)? {
            return Err(Error::Numeric("pilot ascent: gradient is not finite".into()).into());
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2 == 0.0 {
            return Ok(PilotResult {
                theta,
                iterations: it,
                objective: f,
                converged: true,
            });
        }
        loop {
            if s * g2.sqrt() <= 1e-15 * (1.0 + norm(&theta)) {
                return Ok(PilotResult {
                    theta,
                    iterations: it,
                    objective: f,
                    converged: true,
                });
            }
            trial
                .iter_mut()
                .zip(&theta)
                .zip(&g)
                .for_each(|((t, x), d)| *t = x + s * d);
            let ft = target.log_density(&trial)?;
            if !ft.is_finite() {
                failures += 1;
                if failures >= MAX_PILOT_FAILURES {
                    return Err(Error::Numeric(format!(
                        "pilot ascent: {MAX_PILOT_FAILURES} consecutive non-finite trial points"
                    ))
                    .into());
                }
                s *= 0.5;
                continue;
            }
            failures = 0;
            // near the optimum the objective stalls at rounding level; fall
            // back to requiring a smaller gradient
            let accept = ft >= f + 1e-4 * s * g2
                || ((ft - f).abs() <= 1e-12 * f.abs().max(1.0)
                    && target.grad_into(&trial, &mut gt)?
                    && gt.iter().map(|v| v * v).sum::<f64>() < g2);
            if accept {
                theta.copy_from_slice(&trial);
                f = ft;
                s *= 2.0;
                break;
            }
            s *= 0.5;
        }
    }
    Ok(PilotResult {
        theta,
        iterations: steps,
        objective: f,
        converged: false,
    })
}
