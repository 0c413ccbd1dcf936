//! Rescaled Gaussian sieve prior `N(0, n^{-1/(2α+1)} Σ_α^{-1})` with
//! `Σ_α = diag(1, 2^{2α}, …, p^{2α})`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SievePrior {
    pub alpha: f64,
    pub n: usize,
    pub p: usize,
    /// `k^{2α}` for `k = 1..=p`.
    pub sigma_alpha_diag: Vec<f64>,
    /// Strong-concavity constant `n^{1/(2α+1)}`.
    pub m_pi: f64,
    /// Gradient-Lipschitz constant `n^{1/(2α+1)} p^{2α}`.
    pub lambda_pi: f64,
}

impl SievePrior {
    pub fn new(alpha: f64, n: usize, p: usize) -> Result<Self> {
        if !(alpha > 0.5) || !alpha.is_finite() {
            return Err(Error::Domain(format!(
                "prior smoothness alpha = {alpha} must exceed 1/2"
            )));
        }
        if n == 0 || p == 0 {
            return Err(Error::Domain(
                "prior needs a positive sample size and dimension".into(),
            ));
        }
        let sigma_alpha_diag: Vec<f64> = (1..=p).map(|k| (k as f64).powf(2.0 * alpha)).collect();
        let m_pi = (n as f64).powf(1.0 / (2.0 * alpha + 1.0));
        let lambda_pi = m_pi * sigma_alpha_diag[p - 1];
        Ok(Self {
            alpha,
            n,
            p,
            sigma_alpha_diag,
            m_pi,
            lambda_pi,
        })
    }

    /// The scale `n^{1/(2α+1)}` multiplying `Σ_α` in the precision.
    pub fn scale(&self) -> f64 {
        self.m_pi
    }

    /// Prior variance of coordinate `k` (1-based).
    pub fn variance(&self, k: usize) -> f64 {
        1.0 / (self.m_pi * self.sigma_alpha_diag[k - 1])
    }

    /// Log-density up to its additive normalising constant.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        -0.5 * self.m_pi
            * theta
                .iter()
                .zip(&self.sigma_alpha_diag)
                .map(|(t, s)| s * t * t)
                .sum::<f64>()
    }

    /// `−n^{1/(2α+1)} Σ_α θ`.
    pub fn grad_log_density(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_len("theta", self.p, theta.len())?;
        let mut out = vec![0.0; self.p];
        self.grad_into(theta, &mut out);
        Ok(out)
    }

    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        for ((o, t), s) in out.iter_mut().zip(theta).zip(&self.sigma_alpha_diag) {
            *o = -self.m_pi * s * t;
        }
    }

    pub fn add_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        for ((o, t), s) in out.iter_mut().zip(theta).zip(&self.sigma_alpha_diag) {
            *o += -self.m_pi * s * t;
        }
    }

    /// A prior draw, deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (1..=self.p)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                z * self.variance(k).sqrt()
            })
            .collect()
    }

    /// Condition number `Λ_π / m_π = p^{2α}`.
    pub fn condition_number(&self) -> f64 {
        self.lambda_pi / self.m_pi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gradient_examples() {
        let prior = SievePrior::new(1.0, 64, 3).unwrap();
        assert!((prior.m_pi - 4.0).abs() < 1e-12);
        assert_eq!(prior.sigma_alpha_diag, vec![1.0, 4.0, 9.0]);
        let g = prior.grad_log_density(&[1.0, 0.0, 0.0]).unwrap();
        assert!((g[0] + 4.0).abs() < 1e-12 && g[1] == 0.0 && g[2] == 0.0);
        let g = prior.grad_log_density(&[0.0, 0.0, 1.0]).unwrap();
        assert!((g[2] + 36.0).abs() < 1e-11 && g[0] == 0.0);
        let g = prior.grad_log_density(&[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(prior.grad_log_density(&[0.0; 2]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SievePrior::new(0.5, 10, 2).is_err());
        assert!(SievePrior::new(1.0, 0, 2).is_err());
        assert!(SievePrior::new(1.0, 10, 0).is_err());
    }

    #[test]
    fn sample_variances_match_closed_form() {
        let prior = SievePrior::new(1.0, 125, 4).unwrap();
        let mut rng = rng_from_seed(7);
        let draws = 100_000;
        let mut sq = [0.0; 4];
        for _ in 0..draws {
            let t = prior.sample_with(&mut rng);
            for k in 0..4 {
                sq[k] += t[k] * t[k];
            }
        }
        for k in 0..4 {
            let var = sq[k] / draws as f64;
            let target = 1.0 / (5.0 * ((k + 1) * (k + 1)) as f64);
            assert!(
                (var / target - 1.0).abs() < 0.05,
                "k={k}: {var} vs {target}"
            );
        }
    }

    #[test]
    fn seeded_draws_replay() {
        let prior = SievePrior::new(1.5, 100, 5).unwrap();
        assert_eq!(prior.sample(11), prior.sample(11));
        assert_ne!(prior.sample(11), prior.sample(12));
    }

    #[test]
    fn fourth_moment_of_norm_is_bounded_over_n_and_p() {
        // E‖θ‖⁴ ≤ 3 (Σ_k var_k)² ≤ 3 (π²/6)² for alpha = 1, n ≥ 1
        let mut rng = rng_from_seed(3);
        for &n in &[10usize, 1000, 100_000] {
            for &p in &[1usize, 8, 64] {
                let prior = SievePrior::new(1.0, n, p).unwrap();
                let draws = 20_000;
                let m4: f64 = (0..draws)
                    .map(|_| {
                        let s: f64 = prior.sample_with(&mut rng).iter().map(|t| t * t).sum();
                        s * s
                    })
                    .sum::<f64>()
                    / draws as f64;
                assert!(
                    m4 < 3.0 * (std::f64::consts::PI.powi(2) / 6.0).powi(2),
                    "n={n} p={p} m4={m4}"
                );
            }
        }
    }

    #[test]
    fn directional_second_difference_matches_curvature() {
        let prior = SievePrior::new(1.0, 1000, 6).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let theta = prior.sample_with(&mut rng);
            let mut v: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            let nv = crate::norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let eps = 1e-2;
            let shifted =
                |s: f64| -> Vec<f64> { theta.iter().zip(&v).map(|(t, d)| t + s * d).collect() };
            let d2 = (prior.log_density(&shifted(eps)) - 2.0 * prior.log_density(&theta)
                + prior.log_density(&shifted(-eps)))
                / (eps * eps);
            let exact: f64 = -prior.m_pi
                * v.iter()
                    .zip(&prior.sigma_alpha_diag)
                    .map(|(d, s)| s * d * d)
                    .sum::<f64>();
            assert!((d2 - exact).abs() <= 1e-8 * exact.abs());
            assert!(d2 <= -prior.m_pi * (1.0 - 1e-8) && d2 >= -prior.lambda_pi * (1.0 + 1e-8));
        }
    }

    proptest! {
        #[test]
        fn gradient_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            x in prop::collection::vec(-2.0f64..2.0, 4),
            y in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let prior = SievePrior::new(1.0, 64, 4).unwrap();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let lhs = prior.grad_log_density(&combo).unwrap();
            let gx = prior.grad_log_density(&x).unwrap();
            let gy = prior.grad_log_density(&y).unwrap();
            for k in 0..4 {
                let rhs = a * gx[k] + b * gy[k];
                prop_assert!((lhs[k] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
