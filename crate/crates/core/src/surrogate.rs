//! The globally concave surrogate log-likelihood
//!
//! `ℓ̃(θ) = v(t/η)(ℓ(θ) − ℓ(θ_init)) + ℓ(θ_init) − K v_η(t)`, `t = ‖θ − θ_init‖`,
//!
//! with a smooth cut-off `v` and the mollified quadratic penalty
//! `v_η = φ_{η/8} * γ_η`, `γ_η(t) = (t − 5η/8)²₊`. Also home to the
//! [`LogTarget`] abstraction consumed by the sampler.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::likelihood::{CurvatureReport, ModelInstance};
use crate::prior::SievePrior;
use crate::quadrature::{gauss_legendre, Rule};
use crate::{distance, norm};

/// Radii below which the radial direction is treated as undefined.
const RADIAL_EPS: f64 = 1e-12;

/// A differentiable log-density on `ℝ^p`.
pub trait LogTarget: Send + Sync {
    fn dim(&self) -> usize;

    /// Log-density up to an additive constant; `-∞` outside the domain.
    fn log_density(&self, theta: &[f64]) -> Result<f64>;

    /// Writes the gradient into `out`; returns `false` if it is not finite.
    fn grad_into(&self, theta: &[f64], out: &mut [f64]) -> Result<bool>;
}

/// `ψ(s) = f(s)/(f(s) + f(1 − s))` with `f(x) = e^{−1/x}`, and its first two
/// derivatives, for `0 < s < 1`.
fn smoothstep(s: f64) -> (f64, f64, f64) {
    // ψ = 1/(1 + e^g) with g = 1/s − 1/(1 − s)
    let g = 1.0 / s - 1.0 / (1.0 - s);
    let g1 = -1.0 / (s * s) - 1.0 / ((1.0 - s) * (1.0 - s));
    let g2 = 2.0 / (s * s * s) - 2.0 / ((1.0 - s) * (1.0 - s) * (1.0 - s));
    let psi = if g > 0.0 {
        let e = (-g).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + g.exp())
    };
    let q = psi * (1.0 - psi);
    let d1 = -q * g1;
    let d2 = -((1.0 - 2.0 * psi) * d1 * g1 + q * g2);
    (psi, d1, d2)
}

/// The cut-off `v`: 1 on `[0, 3/4]`, 0 on `[7/8, ∞)`, `ψ(8(7/8 − t))` between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffV {
    /// `max(sup|v|, sup|v′|, sup|v″|)` tabulated on a 10⁴-point grid of the
    /// transition interval.
    pub c2_norm: f64,
}

impl Default for CutoffV {
    fn default() -> Self {
        Self::new()
    }
}

impl CutoffV {
    pub const PLATEAU: f64 = 0.75;
    pub const SUPPORT: f64 = 0.875;

    pub fn new() -> Self {
        let grid = 10_000;
        let mut c2: f64 = 1.0;
        for i in 0..=grid {
            let t = Self::PLATEAU + (Self::SUPPORT - Self::PLATEAU) * i as f64 / grid as f64;
            let (_, d1, d2) = Self::eval_all(t);
            c2 = c2.max(d1.abs()).max(d2.abs());
        }
        Self { c2_norm: c2 }
    }

    /// `(v(t), v′(t), v″(t))`.
    pub fn eval_all(t: f64) -> (f64, f64, f64) {
        if t <= Self::PLATEAU {
            (1.0, 0.0, 0.0)
        } else if t >= Self::SUPPORT {
            (0.0, 0.0, 0.0)
        } else {
            let (psi, d1, d2) = smoothstep(8.0 * (Self::SUPPORT - t));
            (psi, -8.0 * d1, 64.0 * d2)
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        Self::eval_all(t).0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        Self::eval_all(t).1
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        Self::eval_all(t).2
    }
}

/// `v_η = φ_s * γ_η` with `s = η/8` and the bump `φ ∝ exp(−1/(1 − x²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedPenalty {
    pub eta: f64,
    pub s: f64,
    /// Normalising constant of `φ` on `(−1, 1)`.
    pub c_norm: f64,
    /// `∫ x² φ(x) dx`.
    pub sigma2: f64,
    rule: Rule,
}

/// Gauss–Legendre nodes used for the mollifier integrals.
pub const PENALTY_NODES: usize = 64;

fn bump(x: f64) -> f64 {
    let d = 1.0 - x * x;
    if d <= 0.0 {
        0.0
    } else {
        (-1.0 / d).exp()
    }
}

impl MollifiedPenalty {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Domain(format!("eta = {eta} must be positive")));
        }
        let rule = gauss_legendre(PENALTY_NODES);
        let mass = rule.integrate(bump);
        let c_norm = 1.0 / mass;
        let sigma2 = c_norm * rule.integrate(|x| x * x * bump(x));
        Ok(Self {
            eta,
            s: eta / 8.0,
            c_norm,
            sigma2,
            rule,
        })
    }

    fn kink(&self) -> f64 {
        5.0 * self.eta / 8.0
    }

    /// `(v_η(t), v_η′(t), v_η″(t))`. With `u = sx`, the integrand
    /// `φ(x) γ_η(t − sx)` vanishes for `x ≥ x* = (t − 5η/8)/s`, so each
    /// integral runs over `[−1, min(1, x*)]`.
    pub fn eval_all(&self, t: f64) -> (f64, f64, f64) {
        if t <= self.eta / 2.0 {
            return (0.0, 0.0, 0.0);
        }
        let c = self.kink();
        let upper = ((t - c) / self.s).min(1.0);
        let half = 0.5 * (upper + 1.0);
        let mid = 0.5 * (upper - 1.0);
        let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for (&z, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let x = mid + half * z;
            let phi = self.c_norm * bump(x) * w;
            let r = t - self.s * x - c;
            v += phi * r * r;
            d1 += phi * 2.0 * r;
            d2 += phi * 2.0;
        }
        (v * half, d1 * half, d2 * half)
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval_all(t).0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.eval_all(t).1
    }

    /// Closed form `(t − 5η/8)² + s²σ²_φ`, valid for `t ≥ 3η/4`.
    pub fn tail(&self, t: f64) -> f64 {
        let r = t - self.kink();
        r * r + self.s * self.s * self.sigma2
    }
}

/// Exponents used by the penalty floor, per model preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetExponents {
    pub kappa1: f64,
    pub kappa2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    Glm,
    Density,
    Darcy,
}

impl ModelPreset {
    pub fn exponents(self) -> PresetExponents {
        match self {
            ModelPreset::Glm | ModelPreset::Density => PresetExponents {
                kappa1: 0.0,
                kappa2: 0.5,
            },
            ModelPreset::Darcy => PresetExponents {
                kappa1: 0.0,
                kappa2: 2.0,
            },
        }
    }

    /// Default radius `η`: `p^{-1/2}`, or `p^{-8}` for Darcy.
    pub fn eta(self, p: usize) -> f64 {
        let p = p as f64;
        match self {
            ModelPreset::Glm | ModelPreset::Density => p.powf(-0.5),
            ModelPreset::Darcy => p.powf(-8.0),
        }
    }
}

/// Contraction rate `δ_n = n^{−α/(2α+1)}`.
pub fn contraction_rate(n: usize, alpha: f64) -> f64 {
    (n as f64).powf(-alpha / (2.0 * alpha + 1.0))
}

/// Outcome of [`choose_k`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KChoice {
    pub k: f64,
    /// `60 ĉ_max ‖v‖_{C²} n (1 + p^{κ₂})`.
    pub floor: f64,
    pub c_max_hat: f64,
}

/// Empirical `ĉ_max = max(λ_max/(n p^{κ₂}), ‖∇ℓ(θ*)‖/(n δ_n p^{κ₁}))`.
pub fn c_max_hat(
    probe: &CurvatureReport,
    n: usize,
    p: usize,
    delta_n: f64,
    exps: PresetExponents,
) -> Result<f64> {
    if probe.n_probes == 0 {
        return Err(Error::Config("curvature probe is empty".into()));
    }
    if n == 0 {
        return Err(Error::Config(
            "penalty floor undefined for an empty dataset".into(),
        ));
    }
    if !(probe.lambda_max_est > 0.0) {
        return Err(Error::Config(format!(
            "curvature probe reports lambda_max_est = {}; the penalty floor needs positive curvature",
            probe.lambda_max_est
        )));
    }
    let (nf, pf) = (n as f64, p as f64);
    let curv = probe.lambda_max_est / (nf * pf.powf(exps.kappa2));
    let grad = probe.grad_norm_at_center / (nf * delta_n * pf.powf(exps.kappa1));
    Ok(curv.max(grad))
}

/// Penalty weight `K = max(60 ĉ ‖v‖_{C²} n (1 + p^{κ₂}), override)`.
pub fn k_from_c_max(
    c_max: f64,
    cutoff: &CutoffV,
    n: usize,
    p: usize,
    exps: PresetExponents,
    k_override: Option<f64>,
) -> KChoice {
    let floor = 60.0 * c_max * cutoff.c2_norm * n as f64 * (1.0 + (p as f64).powf(exps.kappa2));
    KChoice {
        k: k_override.map_or(floor, |o| o.max(floor)),
        floor,
        c_max_hat: c_max,
    }
}

/// [`c_max_hat`] followed by [`k_from_c_max`].
pub fn choose_k(
    probe: &CurvatureReport,
    cutoff: &CutoffV,
    n: usize,
    p: usize,
    delta_n: f64,
    exps: PresetExponents,
    k_override: Option<f64>,
) -> Result<KChoice> {
    let c = c_max_hat(probe, n, p, delta_n, exps)?;
    Ok(k_from_c_max(c, cutoff, n, p, exps, k_override))
}

/// Concavity and smoothness constants of the surrogate posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConstants {
    /// Empirical likelihood curvature used for `m̃`, clamped at 0.
    pub m_tilde: f64,
    /// `7K`.
    pub lambda_tilde: f64,
    /// `m̃ + m_π`.
    pub m: f64,
    /// `7K + Λ_π`.
    pub lambda: f64,
}

/// Everything needed to evaluate `ℓ̃` and the surrogate posterior.
#[derive(Debug, Clone)]
pub struct SurrogateSpec {
    pub base: Arc<ModelInstance>,
    pub prior: SievePrior,
    pub theta_init: Vec<f64>,
    /// `θ_{*,p}`, the centre of `B̃`.
    pub center: Vec<f64>,
    pub eta: f64,
    pub k: f64,
    pub cutoff: CutoffV,
    pub penalty: MollifiedPenalty,
    pub constants: SurrogateConstants,
    base_value: f64,
}

impl SurrogateSpec {
    /// `lambda_min_est` is the probe's curvature estimate on `B`; negative
    /// estimates are clamped at 0 for `m̃`.
    pub fn new(
        base: Arc<ModelInstance>,
        prior: SievePrior,
        theta_init: Vec<f64>,
        center: Vec<f64>,
        eta: f64,
        k: f64,
        lambda_min_est: f64,
    ) -> Result<Self> {
        let p = base.p();
        check_len("theta_init", p, theta_init.len())?;
        check_len("center", p, center.len())?;
        check_len("prior dimension", p, prior.p)?;
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::Config(format!(
                "penalty weight K = {k} must be finite and nonnegative"
            )));
        }
        let penalty = MollifiedPenalty::new(eta)?;
        let base_value = base.log_lik(&theta_init)?;
        if !base_value.is_finite() {
            return Err(Error::Domain(
                "log-likelihood at theta_init is not finite".into(),
            ));
        }
        let m_tilde = lambda_min_est.max(0.0);
        let constants = SurrogateConstants {
            m_tilde,
            lambda_tilde: 7.0 * k,
            m: m_tilde + prior.m_pi,
            lambda: 7.0 * k + prior.lambda_pi,
        };
        Ok(Self {
            base,
            prior,
            theta_init,
            center,
            eta,
            k,
            cutoff: CutoffV::new(),
            penalty,
            constants,
            base_value,
        })
    }

    pub fn p(&self) -> usize {
        self.theta_init.len()
    }

    /// Radius `3η/8` of `B̃`.
    pub fn exit_radius(&self) -> f64 {
        3.0 * self.eta / 8.0
    }

    /// `‖θ_init − θ_{*,p}‖`.
    pub fn init_offset(&self) -> f64 {
        distance(&self.theta_init, &self.center)
    }

    /// `ℓ(θ_init)`.
    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    /// `ℓ̃(θ)`, or `-∞` if `ℓ(θ) = -∞` where the cut-off is positive.
    pub fn log_lik(&self, theta: &[f64]) -> Result<f64> {
        check_len("theta", self.p(), theta.len())?;
        let t = distance(theta, &self.theta_init);
        let v = self.cutoff.value(t / self.eta);
        let pen = self.k * self.penalty.value(t);
        if v == 0.0 {
            return Ok(self.base_value - pen);
        }
        let l = self.base.log_lik(theta)?;
        if !l.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        if v == 1.0 {
            return Ok(if pen == 0.0 { l } else { l - pen });
        }
        Ok(v * (l - self.base_value) + self.base_value - pen)
    }

    /// Writes `∇ℓ̃(θ)`; returns `false` if it is not finite.
    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) -> Result<bool> {
        let p = self.p();
        check_len("theta", p, theta.len())?;
        check_len("gradient buffer", p, out.len())?;
        let t = distance(theta, &self.theta_init);
        let (v, dv, _) = CutoffV::eval_all(t / self.eta);
        let (_, dpen, _) = self.penalty.eval_all(t);
        if v == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
        } else if !self.base.grad_into(theta, out)? {
            return Ok(false);
        } else if v != 1.0 {
            out.iter_mut().for_each(|o| *o *= v);
        }
        let mut radial = -self.k * dpen;
        if dv != 0.0 {
            let l = self.base.log_lik(theta)?;
            if !l.is_finite() {
                out.iter_mut().for_each(|o| *o = f64::NAN);
                return Ok(false);
            }
            radial += dv / self.eta * (l - self.base_value);
        }
        if radial != 0.0 && t >= RADIAL_EPS {
            for ((o, a), b) in out.iter_mut().zip(theta).zip(&self.theta_init) {
                *o += radial * (a - b) / t;
            }
        }
        Ok(out.iter().all(|g| g.is_finite()))
    }

    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.p()];
        self.grad_into(theta, &mut out)?;
        Ok(out)
    }

    /// Drift `∇ℓ̃(θ) + ∇log π(θ)` of the surrogate chain.
    pub fn posterior_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.p()];
        LogTarget::grad_into(self, theta, &mut out)?;
        Ok(out)
    }

    /// The vanilla posterior `ℓ + log π` sharing this spec's model and prior.
    pub fn vanilla(&self) -> VanillaPosterior {
        VanillaPosterior {
            model: Arc::clone(&self.base),
            prior: self.prior.clone(),
        }
    }
}

impl LogTarget for SurrogateSpec {
    fn dim(&self) -> usize {
        self.p()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.log_lik(theta)? + self.prior.log_density(theta))
    }

    fn grad_into(&self, theta: &[f64], out: &mut [f64]) -> Result<bool> {
        let ok = SurrogateSpec::grad_into(self, theta, out)?;
        self.prior.add_grad_into(theta, out);
        Ok(ok)
    }
}

/// The original posterior `e^{ℓ(θ)} π(θ)`.
#[derive(Debug, Clone)]
pub struct VanillaPosterior {
    pub model: Arc<ModelInstance>,
    pub prior: SievePrior,
}

impl LogTarget for VanillaPosterior {
    fn dim(&self) -> usize {
        self.model.p()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.model.log_lik(theta)? + self.prior.log_density(theta))
    }

    fn grad_into(&self, theta: &[f64], out: &mut [f64]) -> Result<bool> {
        let ok = self.model.grad_into(theta, out)?;
        self.prior.add_grad_into(theta, out);
        Ok(ok)
    }
}

/// Finds the maximiser of a strongly concave target by gradient ascent with
/// step `1/Λ`, stopping when `‖∇‖ ≤ tol`.
pub fn maximize(
    target: &dyn LogTarget,
    start: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut x = start.to_vec();
    let mut g = vec![0.0; x.len()];
    for _ in 0..max_iter {
        if !target.grad_into(&x, &mut g)? {
            return Err(Error::Numeric("non-finite gradient during ascent".into()));
        }
        if norm(&g) <= tol {
            return Ok(x);
        }
        x.iter_mut().zip(&g).for_each(|(a, d)| *a += d / lambda);
    }
    Err(Error::Numeric(format!(
        "ascent did not reach ‖∇‖ ≤ {tol} in {max_iter} iterations"
    )))
}
