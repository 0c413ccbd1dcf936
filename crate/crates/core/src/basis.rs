//! Orthonormal bases of `L²([0, 1])` and truncated series `Φ(θ) = Σ θ_k e_k`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Which orthonormal system to use.
///
/// - `CosineWithConstant`: `1, √2 cos(π(k−1)x)`; used for GLM regression.
/// - `CosineCentered`: `√2 cos(πkx)`, every element integrates to zero; used
///   for density estimation.
/// - `DirichletSine`: `√2 sin(πkx)`, eigenfunctions of the Dirichlet
///   Laplacian with eigenvalues `π²k²`; used for the Darcy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    CosineWithConstant,
    CosineCentered,
    DirichletSine,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::CosineWithConstant => "cosine-with-constant",
            BasisKind::CosineCentered => "cosine-centered",
            BasisKind::DirichletSine => "dirichlet-sine",
        }
    }
}

/// A basis kind truncated at dimension `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisFamily {
    pub kind: BasisKind,
    pub p: usize,
}

/// Uniform bound on every basis function.
pub const SUP_BOUND: f64 = SQRT_2;

impl BasisFamily {
    pub fn new(kind: BasisKind, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Domain("basis dimension p must be positive".into()));
        }
        Ok(Self { kind, p })
    }

    /// `e_k(x)` for `1 ≤ k ≤ p`, `x ∈ [0, 1]`.
    pub fn eval(&self, k: usize, x: f64) -> Result<f64> {
        if k == 0 || k > self.p {
            return Err(Error::Domain(format!(
                "basis index {k} outside 1..={}",
                self.p
            )));
        }
        check_point(x)?;
        Ok(self.eval_unchecked(k, x))
    }

    pub(crate) fn eval_unchecked(&self, k: usize, x: f64) -> f64 {
        let kf = k as f64;
        match self.kind {
            BasisKind::CosineWithConstant => {
                if k == 1 {
                    1.0
                } else {
                    SQRT_2 * (PI * (kf - 1.0) * x).cos()
                }
            }
            BasisKind::CosineCentered => SQRT_2 * (PI * kf * x).cos(),
            BasisKind::DirichletSine => SQRT_2 * (PI * kf * x).sin(),
        }
    }

    /// Writes `(e_1(x), …, e_p(x))` into `out`.
    pub fn values_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.p);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.eval_unchecked(k + 1, x);
        }
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        self.values_into(x, &mut out);
        out
    }

    /// `Φ(θ)(x) = Σ_{k ≤ p} θ_k e_k(x)`.
    pub fn phi(&self, theta: &[f64], x: f64) -> Result<f64> {
        check_len("theta", self.p, theta.len())?;
        check_point(x)?;
        Ok(self.phi_unchecked(theta, x))
    }

    pub(crate) fn phi_unchecked(&self, theta: &[f64], x: f64) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(k, t)| t * self.eval_unchecked(k + 1, x))
            .sum()
    }

    /// Dirichlet-Laplacian eigenvalue `π²k²` of the sine basis.
    pub fn laplacian_eigenvalue(&self, k: usize) -> Option<f64> {
        match self.kind {
            BasisKind::DirichletSine => Some(PI * PI * (k * k) as f64),
            _ => None,
        }
    }

    /// Row-major `points.len() × p` matrix of basis values, `e_k(points[i])`.
    pub fn design_matrix(&self, points: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; points.len() * self.p];
        for (row, &x) in out.chunks_mut(self.p).zip(points) {
            self.values_into(x, row);
        }
        out
    }
}

fn check_point(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("point {x} outside [0, 1]")))
    }
}
