//! One-parameter exponential families and link functions.
//!
//! A family has density `exp(y h − A(h))` against a reference measure `ξ`;
//! the mean is `A′(h)`. A link `g` relates the mean to the forward-map
//! output `u` through `g(E[Y]) = u`, so the natural parameter is
//! `b = (A′)^{-1}(g^{-1}(u))`.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// `ξ = N(0, 1)`, `A(h) = h²/2`.
    Gaussian,
    /// `A(h) = e^h − 1`.
    Poisson,
    /// `A(h) = log(1 + e^h)`.
    Bernoulli,
}

/// Numerically stable `log(1 + e^h)`.
fn softplus(h: f64) -> f64 {
    if h > 0.0 {
        h + (-h).exp().ln_1p()
    } else {
        h.exp().ln_1p()
    }
}

fn logistic(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpFamily {
    pub kind: FamilyKind,
}

impl ExpFamily {
    pub fn new(kind: FamilyKind) -> Self {
        Self { kind }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Bernoulli => "bernoulli",
        }
    }

    /// Log-partition `A(h)`.
    pub fn log_partition(&self, h: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 0.5 * h * h,
            FamilyKind::Poisson => h.exp() - 1.0,
            FamilyKind::Bernoulli => softplus(h),
        }
    }

    /// Mean map `A′(h)`.
    pub fn mean(&self, h: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => h,
            FamilyKind::Poisson => h.exp(),
            FamilyKind::Bernoulli => logistic(h),
        }
    }

    /// Variance `A″(h)`.
    pub fn variance(&self, h: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Poisson => h.exp(),
            FamilyKind::Bernoulli => {
                let s = logistic(h);
                s * (1.0 - s)
            }
        }
    }

    /// Whether `mu` is an attainable mean.
    pub fn in_mean_range(&self, mu: f64) -> bool {
        match self.kind {
            FamilyKind::Gaussian => mu.is_finite(),
            FamilyKind::Poisson => mu > 0.0 && mu.is_finite(),
            FamilyKind::Bernoulli => mu > 0.0 && mu < 1.0,
        }
    }

    /// `(A′)^{-1}(mu)` with its first two derivatives.
    pub fn mean_inverse_with_derivs(&self, mu: f64) -> Result<(f64, f64, f64)> {
        if !self.in_mean_range(mu) {
            return Err(Error::Domain(format!(
                "mean {mu} outside the range of the {} family",
                self.name()
            )));
        }
        Ok(match self.kind {
            FamilyKind::Gaussian => (mu, 1.0, 0.0),
            FamilyKind::Poisson => (mu.ln(), 1.0 / mu, -1.0 / (mu * mu)),
            FamilyKind::Bernoulli => {
                let q = mu * (1.0 - mu);
                ((mu / (1.0 - mu)).ln(), 1.0 / q, (2.0 * mu - 1.0) / (q * q))
            }
        })
    }

    pub fn mean_inverse(&self, mu: f64) -> Result<f64> {
        self.mean_inverse_with_derivs(mu).map(|t| t.0)
    }

    /// Draws `Y` from the family with natural parameter `h`.
    pub fn sample_response<R: Rng + ?Sized>(&self, h: f64, rng: &mut R) -> Result<f64> {
        if !h.is_finite() {
            return Err(Error::Domain(format!(
                "natural parameter {h} is not finite"
            )));
        }
        match self.kind {
            FamilyKind::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                Ok(h + z)
            }
            FamilyKind::Poisson => {
                let rate = h.exp();
                // rand_distr's Poisson rejects rates beyond ~1.8e19
                if !(rate.is_finite() && rate < 1e15) {
                    return Err(Error::Domain(format!(
                        "poisson rate e^{h} overflows; use a smaller ‖θ₀‖"
                    )));
                }
                let dist = Poisson::new(rate).map_err(|e| Error::Domain(e.to_string()))?;
                Ok(dist.sample(rng))
            }
            FamilyKind::Bernoulli => {
                let dist = Bernoulli::new(logistic(h)).map_err(|e| Error::Domain(e.to_string()))?;
                Ok(if dist.sample(rng) { 1.0 } else { 0.0 })
            }
        }
    }

    /// Seeded single draw.
    pub fn sample_response_seeded(&self, h: f64, seed: u64) -> Result<f64> {
        let mut rng = crate::rng::rng_from_seed(seed);
        self.sample_response(h, &mut rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    /// `g = (A′)^{-1}`, so the natural parameter equals the forward output.
    Canonical,
    /// `g(μ) = μ³`, smooth and invertible on ℝ.
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkFunction {
    pub kind: LinkKind,
}

impl LinkFunction {
    pub fn canonical() -> Self {
        Self {
            kind: LinkKind::Canonical,
        }
    }

    pub fn cubic() -> Self {
        Self {
            kind: LinkKind::Cubic,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LinkKind::Canonical => "canonical",
            LinkKind::Cubic => "cubic",
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.kind == LinkKind::Canonical
    }

    /// `g(μ)` for the family `fam`.
    pub fn g(&self, fam: &ExpFamily, mu: f64) -> Result<f64> {
        match self.kind {
            LinkKind::Canonical => fam.mean_inverse(mu),
            LinkKind::Cubic => Ok(mu * mu * mu),
        }
    }

    /// `g^{-1}(u)` and its first three derivatives (custom links only).
    pub fn g_inv_derivs(&self, u: f64) -> Option<[f64; 4]> {
        match self.kind {
            LinkKind::Canonical => None,
            LinkKind::Cubic => {
                let c = u.cbrt();
                // d/du u^{1/3} = (1/3) u^{-2/3}, etc.
                let d1 = 1.0 / (3.0 * c * c);
                let d2 = -2.0 / (9.0 * c * c * c * c * c);
                let d3 = 10.0 / (27.0 * c.powi(8));
                Some([c, d1, d2, d3])
            }
        }
    }

    /// `g^{-1}(u)` for the family `fam`.
    pub fn g_inv(&self, fam: &ExpFamily, u: f64) -> f64 {
        match self.kind {
            LinkKind::Canonical => fam.mean(u),
            LinkKind::Cubic => u.cbrt(),
        }
    }
}

/// `b(u) = (A′)^{-1}(g^{-1}(u))`.
pub fn natural_param(fam: &ExpFamily, link: &LinkFunction, u: f64) -> Result<f64> {
    natural_param_with_derivs(fam, link, u).map(|t| t.0)
}

/// `b(u)` together with `b′(u)` and `b″(u)`, from closed-form link and
/// inverse-mean derivatives.
pub fn natural_param_with_derivs(
    fam: &ExpFamily,
    link: &LinkFunction,
    u: f64,
) -> Result<(f64, f64, f64)> {
    if !u.is_finite() {
        return Err(Error::Domain(format!(
            "forward output {u} outside the range of the {} link",
            link.name()
        )));
    }
    match link.g_inv_derivs(u) {
        None => Ok((u, 1.0, 0.0)),
        Some([mu, d1, d2, _]) => {
            let (h, m1, m2) = fam.mean_inverse_with_derivs(mu).map_err(|_| {
                Error::Domain(format!(
                    "forward output {u} outside the range of the {} link for the {} family",
                    link.name(),
                    fam.name()
                ))
            })?;
            if !(d1.is_finite() && d2.is_finite()) {
                return Err(Error::Domain(format!(
                    "{} link is not differentiable at u = {u}",
                    link.name()
                )));
            }
            Ok((h, m1 * d1, m2 * d1 * d1 + m1 * d2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    const FAMILIES: [FamilyKind; 3] = [
        FamilyKind::Gaussian,
        FamilyKind::Poisson,
        FamilyKind::Bernoulli,
    ];

    #[test]
    fn natural_param_examples() {
        let gauss = ExpFamily::new(FamilyKind::Gaussian);
        let pois = ExpFamily::new(FamilyKind::Poisson);
        let canon = LinkFunction::canonical();
        assert_eq!(natural_param(&gauss, &canon, 0.7).unwrap(), 0.7);
        assert_eq!(natural_param(&pois, &canon, 1.0).unwrap(), 1.0);
        let cubic = LinkFunction::cubic();
        assert!((natural_param(&gauss, &cubic, 8.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_output_names_the_link() {
        let pois = ExpFamily::new(FamilyKind::Poisson);
        let err = natural_param(&pois, &LinkFunction::cubic(), -1.0).unwrap_err();
        assert!(err.to_string().contains("cubic"));
        let err = natural_param(&pois, &LinkFunction::canonical(), f64::NAN).unwrap_err();
        assert!(err.to_string().contains("canonical"));
    }

    #[test]
    fn closed_forms_and_convexity() {
        for kind in FAMILIES {
            let fam = ExpFamily::new(kind);
            for i in -40..=40 {
                let h = i as f64 * 0.25;
                assert!(fam.variance(h) >= 0.0);
                let back = fam.mean_inverse(fam.mean(h));
                if let Ok(b) = back {
                    assert!((b - h).abs() < 1e-10 * (1.0 + h.abs()), "{kind:?} h={h}");
                }
                // finite-difference A' and A''
                let e = 1e-5;
                let d1 = (fam.log_partition(h + e) - fam.log_partition(h - e)) / (2.0 * e);
                let d2 = (fam.mean(h + e) - fam.mean(h - e)) / (2.0 * e);
                assert!((d1 - fam.mean(h)).abs() < 1e-6 * (1.0 + fam.mean(h).abs()));
                assert!((d2 - fam.variance(h)).abs() < 1e-6 * (1.0 + fam.variance(h)));
            }
        }
        let g = ExpFamily::new(FamilyKind::Gaussian);
        assert_eq!(g.log_partition(3.0), 4.5);
        assert_eq!(ExpFamily::new(FamilyKind::Poisson).log_partition(0.0), 0.0);
        assert!(
            (ExpFamily::new(FamilyKind::Bernoulli).log_partition(0.0) - 2f64.ln()).abs() < 1e-15
        );
        assert!(ExpFamily::new(FamilyKind::Bernoulli)
            .log_partition(800.0)
            .is_finite());
    }

    #[test]
    fn link_round_trip_and_derivatives() {
        let fam = ExpFamily::new(FamilyKind::Gaussian);
        let cubic = LinkFunction::cubic();
        for u in [-5.0, -0.3, 0.2, 1.0, 8.0, 27.5] {
            let mu = cubic.g_inv(&fam, u);
            assert!((cubic.g(&fam, mu).unwrap() - u).abs() < 1e-10 * (1.0 + u.abs()));
            let [_, d1, d2, d3] = cubic.g_inv_derivs(u).unwrap();
            let e = 1e-5;
            let fd1 = (cubic.g_inv(&fam, u + e) - cubic.g_inv(&fam, u - e)) / (2.0 * e);
            assert!((fd1 - d1).abs() < 1e-6 * (1.0 + d1.abs()));
            let [_, a, _, _] = cubic.g_inv_derivs(u + e).unwrap();
            let [_, b, _, _] = cubic.g_inv_derivs(u - e).unwrap();
            assert!(((a - b) / (2.0 * e) - d2).abs() < 1e-5 * (1.0 + d2.abs()));
            let [_, _, a, _] = cubic.g_inv_derivs(u + e).unwrap();
            let [_, _, b, _] = cubic.g_inv_derivs(u - e).unwrap();
            assert!(((a - b) / (2.0 * e) - d3).abs() < 1e-4 * (1.0 + d3.abs()));
        }
        let canon = LinkFunction::canonical();
        for kind in FAMILIES {
            let fam = ExpFamily::new(kind);
            for u in [-1.0, 0.0, 0.4] {
                let mu = canon.g_inv(&fam, u);
                assert!((canon.g(&fam, mu).unwrap() - u).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn natural_param_derivatives_match_differences() {
        for kind in [
            FamilyKind::Gaussian,
            FamilyKind::Poisson,
            FamilyKind::Bernoulli,
        ] {
            let fam = ExpFamily::new(kind);
            let link = LinkFunction::cubic();
            let us: &[f64] = match kind {
                FamilyKind::Gaussian => &[-2.0, 0.5, 3.0],
                FamilyKind::Poisson => &[0.2, 1.5, 9.0],
                FamilyKind::Bernoulli => &[0.05, 0.3, 0.6],
            };
            for &u in us {
                let (_, d1, d2) = natural_param_with_derivs(&fam, &link, u).unwrap();
                let e = 1e-5;
                let b = |x| natural_param(&fam, &link, x).unwrap();
                let fd1 = (b(u + e) - b(u - e)) / (2.0 * e);
                let fd2 = (b(u + e) - 2.0 * b(u) + b(u - e)) / (e * e);
                assert!((fd1 - d1).abs() < 1e-6 * (1.0 + d1.abs()), "{kind:?} u={u}");
                assert!((fd2 - d2).abs() < 1e-3 * (1.0 + d2.abs()), "{kind:?} u={u}");
            }
        }
    }

    #[test]
    fn sample_moments_match_mean_and_variance() {
        let mut rng = rng_from_seed(2024);
        let draws = 100_000usize;
        for kind in FAMILIES {
            let fam = ExpFamily::new(kind);
            for h in [-1.0, 0.0, 1.0] {
                let ys: Vec<f64> = (0..draws)
                    .map(|_| fam.sample_response(h, &mut rng).unwrap())
                    .collect();
                let mean = ys.iter().sum::<f64>() / draws as f64;
                let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
                let sd_mean = (fam.variance(h) / draws as f64).sqrt();
                assert!(
                    (mean - fam.mean(h)).abs() < 3.0 * sd_mean,
                    "{kind:?} h={h} mean={mean}"
                );
                // variance of the sample variance ≈ (μ4 − σ⁴)/N; bound μ4 ≤ 10 σ⁴ loosely
                let sd_var = (10.0 * fam.variance(h).powi(2) / draws as f64).sqrt();
                assert!(
                    (var - fam.variance(h)).abs() < 3.0 * sd_var,
                    "{kind:?} h={h} var={var}"
                );
            }
        }
        let g = ExpFamily::new(FamilyKind::Gaussian);
        let m: f64 = (0..100_000)
            .map(|_| g.sample_response(0.0, &mut rng).unwrap())
            .sum::<f64>()
            / 1e5;
        assert!(m.abs() < 0.02);
    }

    #[test]
    fn seeded_sampling_is_deterministic_and_guards_overflow() {
        let f = ExpFamily::new(FamilyKind::Poisson);
        assert_eq!(
            f.sample_response_seeded(0.3, 9).unwrap(),
            f.sample_response_seeded(0.3, 9).unwrap()
        );
        assert!(f.sample_response_seeded(800.0, 1).is_err());
        assert!(f.sample_response_seeded(f64::INFINITY, 1).is_err());
    }
}
