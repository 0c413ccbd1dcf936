//! Unadjusted Langevin chains and the step-size, bias and burn-in
//! calculators.
//!
//! One step is `ϑ_{k+1} = ϑ_k + γ ∇log π(ϑ_k) + √(2γ) ξ_{k+1}` with
//! `ξ_{k+1} ~ N(0, I_p)`. Every step draws exactly `p` normals, whatever the
//! guard does, so chains sharing a seed share their noise sequence.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::surrogate::LogTarget;
use crate::{distance, norm};

/// Default storage budget for chain states, in scalars.
pub const DEFAULT_THINNING_BUDGET: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Surrogate,
    Vanilla,
}

/// Response to a non-finite drift or state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Guard {
    /// Abort with the last finite state.
    None,
    /// Reflect `‖θ‖` at `radius`; a step into a region with non-finite
    /// drift is rejected and the chain stays put. Not part of the analysed
    /// algorithm.
    Reflect { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub j_in: usize,
    pub j: usize,
    pub seed: u64,
    pub guard: Guard,
    /// Upper bound on stored scalars; 0 stores no states.
    pub thinning_budget: usize,
}

impl SamplerConfig {
    pub fn new(variant: Variant, gamma: f64, j_in: usize, j: usize, seed: u64) -> Self {
        Self {
            variant,
            gamma,
            j_in,
            j,
            seed,
            guard: Guard::None,
            thinning_budget: DEFAULT_THINNING_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            problems.push(format!("gamma = {} must be positive", self.gamma));
        }
        if self.j == 0 {
            problems.push("j must be at least 1".to_string());
        }
        if let Guard::Reflect { radius } = self.guard {
            if !(radius > 0.0) {
                problems.push(format!("reflect radius {radius} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Stride between stored states so that at most `thinning_budget`
    /// scalars are kept.
    pub fn stride(&self, p: usize) -> Option<usize> {
        if self.thinning_budget == 0 {
            return None;
        }
        let total = p * (self.j_in + self.j + 1);
        Some(total.div_ceil(self.thinning_budget).max(1))
    }
}

/// The ball `B̃` whose first exit is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

type CustomFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A functional averaged along the chain.
#[derive(Clone)]
pub enum Functional {
    /// `θ ↦ θ` (vector valued).
    Identity,
    /// `θ ↦ θ_i` (0-based).
    Coordinate(usize),
    Constant(f64),
    SquaredNorm,
    Custom {
        name: String,
        f: CustomFn,
    },
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl Functional {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Functional::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// Identifier used to look up the average.
    pub fn id(&self) -> String {
        match self {
            Functional::Identity => "identity".into(),
            Functional::Coordinate(i) => format!("coord:{i}"),
            Functional::Constant(c) => format!("const:{c}"),
            Functional::SquaredNorm => "squared-norm".into(),
            Functional::Custom { name, .. } => name.clone(),
        }
    }

    fn width(&self, p: usize) -> usize {
        match self {
            Functional::Identity => p,
            _ => 1,
        }
    }

    fn accumulate(&self, theta: &[f64], acc: &mut [f64]) {
        match self {
            Functional::Identity => acc.iter_mut().zip(theta).for_each(|(a, t)| *a += t),
            Functional::Coordinate(i) => acc[0] += theta[*i],
            Functional::Constant(c) => acc[0] += c,
            Functional::SquaredNorm => acc[0] += theta.iter().map(|t| t * t).sum::<f64>(),
            Functional::Custom { f, .. } => acc[0] += f(theta),
        }
    }
}

/// Output of [`run_chain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    /// Stored states `ϑ_0, ϑ_s, ϑ_{2s}, …` for stride `s`.
    pub states: Vec<Vec<f64>>,
    pub stride: usize,
    pub final_state: Vec<f64>,
    /// First `k ≥ 1` with `‖ϑ_k − center‖ > radius`.
    pub exit_step: Option<usize>,
    /// `(id, Σ f(ϑ_k))` over `k = J_in + 1, …, J_in + J`.
    pub accumulators: Vec<(String, Vec<f64>)>,
    /// Number of accumulated steps.
    pub count: usize,
    pub guard_trigger_count: usize,
    pub seed: u64,
    pub gamma: f64,
    pub j_in: usize,
    pub j: usize,
    pub variant: Variant,
    pub guard: Guard,
}

impl ChainTrace {
    /// A trace from hand-built iterates: `states[i]` is `ϑ_{i+1}`, the first
    /// `j_in` are discarded and the rest averaged.
    pub fn from_states(
        states: Vec<Vec<f64>>,
        j_in: usize,
        functionals: &[Functional],
    ) -> Result<Self> {
        if states.len() <= j_in {
            return Err(Error::Config("trace has no post-burn-in states".into()));
        }
        let p = states[0].len();
        let mut accumulators: Vec<(String, Vec<f64>)> = functionals
            .iter()
            .map(|f| (f.id(), vec![0.0; f.width(p)]))
            .collect();
        for s in &states[j_in..] {
            for (f, (_, acc)) in functionals.iter().zip(accumulators.iter_mut()) {
                f.accumulate(s, acc);
            }
        }
        let j = states.len() - j_in;
        Ok(Self {
            final_state: states.last().cloned().unwrap_or_default(),
            states,
            stride: 1,
            exit_step: None,
            accumulators,
            count: j,
            guard_trigger_count: 0,
            seed: 0,
            gamma: 0.0,
            j_in,
            j,
            variant: Variant::Surrogate,
            guard: Guard::None,
        })
    }

    /// Whether the chain stayed in `B̃` for all `J_in + J` steps.
    pub fn stayed_inside(&self) -> bool {
        self.exit_step.is_none()
    }
}

/// `state + γ drift + √(2γ) noise`.
pub fn ula_step(state: &[f64], drift: &[f64], gamma: f64, noise: &[f64]) -> Vec<f64> {
    let mut out = state.to_vec();
    ula_step_in_place(&mut out, drift, gamma, noise);
    out
}

fn ula_step_in_place(state: &mut [f64], drift: &[f64], gamma: f64, noise: &[f64]) {
    let scale = (2.0 * gamma).sqrt();
    for ((x, d), z) in state.iter_mut().zip(drift).zip(noise) {
        *x += gamma * d + scale * z;
    }
}

/// Runs `J_in + J` Langevin steps from `start` and averages the
/// functionals over the last `J`.
pub fn run_chain(
    target: &dyn LogTarget,
    start: &[f64],
    config: &SamplerConfig,
    functionals: &[Functional],
    exit: Option<&ExitRegion>,
) -> Result<ChainTrace> {
    config.validate()?;
    let p = target.dim();
    crate::error::check_len("chain start", p, start.len())?;
    let stride = config.stride(p);
    let total = config.j_in + config.j;
    let mut rng = rng_from_seed(config.seed);
    let mut x = start.to_vec();
    let mut drift = vec![0.0; p];
    let mut noise = vec![0.0; p];
    let mut prev = x.clone();
    let mut prev_drift = vec![0.0; p];
    let mut have_prev = false;
    let mut states = Vec::new();
    if stride.is_some() {
        states.push(x.clone());
    }
    let mut accumulators: Vec<(String, Vec<f64>)> = functionals
        .iter()
        .map(|f| (f.id(), vec![0.0; f.width(p)]))
        .collect();
    let mut exit_step = None;
    let mut triggers = 0usize;
    let mut count = 0usize;

    for k in 1..=total {
        // drift at ϑ_{k-1}
        let finite = target.grad_into(&x, &mut drift)?;
        if !finite {
            match config.guard {
                Guard::Reflect { .. } if have_prev => {
                    triggers += 1;
                    x.copy_from_slice(&prev);
                    drift.copy_from_slice(&prev_drift);
                }
                _ => {
                    return Err(Error::NonFinite {
                        step: k,
                        last_state: x,
                        exit_step,
                    })
                }
            }
        }
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        prev.copy_from_slice(&x);
        prev_drift.copy_from_slice(&drift);
        have_prev = true;
        ula_step_in_place(&mut x, &drift, config.gamma, &noise);
        if x.iter().any(|v| !v.is_finite()) {
            match config.guard {
                Guard::Reflect { .. } => {
                    triggers += 1;
                    x.copy_from_slice(&prev);
                }
                Guard::None => {
                    return Err(Error::NonFinite {
                        step: k,
                        last_state: prev.clone(),
                        exit_step,
                    })
                }
            }
        }
        if let Guard::Reflect { radius } = config.guard {
            let r = norm(&x);
            if r > radius {
                triggers += 1;
                // mirror across the sphere, clamped to stay inside it
                let target_r = (2.0 * radius - r).max(0.0).min(radius);
                let scale = target_r / r;
                x.iter_mut().for_each(|v| *v *= scale);
            }
        }
        if exit_step.is_none() {
            if let Some(region) = exit {
                if distance(&x, &region.center) > region.radius {
                    exit_step = Some(k);
                }
            }
        }
        if k > config.j_in {
            count += 1;
            for (f, (_, acc)) in functionals.iter().zip(accumulators.iter_mut()) {
                f.accumulate(&x, acc);
            }
        }
        if let Some(s) = stride {
            if k % s == 0 {
                states.push(x.clone());
            }
        }
    }
    Ok(ChainTrace {
        states,
        stride: stride.unwrap_or(0),
        final_state: x,
        exit_step,
        accumulators,
        count,
        guard_trigger_count: triggers,
        seed: config.seed,
        gamma: config.gamma,
        j_in: config.j_in,
        j: config.j,
        variant: config.variant,
        guard: config.guard,
    })
}

/// `(1/J) Σ f(ϑ_k)` for a registered functional.
pub fn ergodic_average(trace: &ChainTrace, id: &str) -> Result<Vec<f64>> {
    let (_, acc) = trace
        .accumulators
        .iter()
        .find(|(name, _)| name == id)
        .ok_or_else(|| Error::UnknownFunctional(id.to_string()))?;
    let c = trace.count as f64;
    Ok(acc.iter().map(|a| a / c).collect())
}

/// `(2/(m + Λ), m/(√54 Λ²))`: the sampling and exit-time step bounds.
pub fn step_size_bound(m: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(m > 0.0) || !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "step bound needs m > 0 and Λ > 0, got m = {m}, Λ = {lambda}"
        )));
    }
    Ok((2.0 / (m + lambda), m / (54f64.sqrt() * lambda * lambda)))
}

/// `B(γ) = 36γpΛ²/m² + 12γ²pΛ⁴/m³`.
pub fn discretization_bias(gamma: f64, p: usize, m: f64, lambda: f64) -> f64 {
    let p = p as f64;
    let l2 = lambda * lambda;
    36.0 * gamma * p * l2 / (m * m) + 12.0 * gamma * gamma * p * l2 * l2 / (m * m * m)
}

/// Ceiling of `q`, treating values within relative `1e-9` of an integer as
/// that integer.
fn robust_ceil(q: f64) -> usize {
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        q.ceil().max(0.0) as usize
    }
}

/// `J_in = ⌈log(ε²/(32(c_W max(η, Λ_π/m)² + p/m))) / log(1 − mγ/2)⌉`.
///
/// Returns 0 when the ratio inside the first logarithm is at least 1, i.e.
/// when the initial error is already below `ε`.
pub fn burn_in_steps(
    epsilon: f64,
    m: f64,
    gamma: f64,
    eta: f64,
    lambda_pi: f64,
    p: usize,
    c_w: f64,
) -> Result<usize> {
    if !(epsilon > 0.0) || !(m > 0.0) || !(gamma > 0.0) {
        return Err(Error::Config(format!(
            "burn-in needs ε, m, γ > 0 (got ε = {epsilon}, m = {m}, γ = {gamma})"
        )));
    }
    let contraction = 1.0 - m * gamma / 2.0;
    if !(contraction > 0.0) {
        return Err(Error::Config(format!(
            "burn-in needs mγ < 2, got mγ = {}",
            m * gamma
        )));
    }
    let spread = c_w * eta.max(lambda_pi / m).powi(2) + p as f64 / m;
    let ratio = epsilon * epsilon / (32.0 * spread);
    if ratio >= 1.0 {
        return Ok(0);
    }
    Ok(robust_ceil(ratio.ln() / contraction.ln()))
}

/// The shorter variant `⌈log(cε²)/log(1 − cnγ)⌉` with `c = 1`.
pub fn burn_in_steps_glm(epsilon: f64, n: usize, gamma: f64) -> Result<usize> {
    let contraction = 1.0 - n as f64 * gamma;
    if !(contraction > 0.0 && contraction < 1.0) || !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "burn-in needs 0 < nγ < 1 and ε > 0, got nγ = {}",
            n as f64 * gamma
        )));
    }
    let r = epsilon * epsilon;
    if r >= 1.0 {
        return Ok(0);
    }
    Ok(robust_ceil(r.ln() / contraction.ln()))
}

/// Smallest attainable precision `√(16 e^{−nδ_n²} + 8B(γ))`.
pub fn precision_floor(n: usize, delta_n: f64, bias: f64) -> f64 {
    (16.0 * (-(n as f64) * delta_n * delta_n).exp() + 8.0 * bias).sqrt()
}
