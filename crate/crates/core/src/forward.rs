//! Forward operators `𝒢 : ℝ^p → functions on [0, 1]`.
//!
//! `LinearPhi` is the series map `θ ↦ Φ(θ)` of the GLM setting. `Darcy`
//! maps `θ` to the solution `u` of `(f_θ u′)′ = g₁` on `(0, 1)` with
//! Dirichlet data `g₂`, where `f_θ = f_min + exp(Φ(θ))`. The 1-D problem is
//! discretised by conservative central differences on `M` interior nodes
//! with arithmetic face averages; all derivatives are the exact derivatives
//! of that discrete map.

use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisKind};
use crate::error::{check_len, Error, Result};

/// Tridiagonal system `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`.
/// `sub[0]` and `sup[n-1]` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagSystem {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

/// Thomas factorisation of a [`TridiagSystem`], reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    sub: Vec<f64>,
    c_prime: Vec<f64>,
    inv_denom: Vec<f64>,
}

const MIN_PIVOT: f64 = 1e-14;

impl TridiagSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn factor(&self) -> Result<TridiagFactor> {
        let n = self.diag.len();
        if self.sub.len() != n || self.sup.len() != n {
            return Err(Error::Dimension {
                what: "tridiagonal bands",
                expected: n,
                got: self.sub.len().min(self.sup.len()),
            });
        }
        let mut c_prime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let a = if i == 0 { 0.0 } else { self.sub[i] };
            let denom = self.diag[i] - a * prev_c;
            if !(denom.abs() > MIN_PIVOT) {
                return Err(Error::Numeric(format!(
                    "singular tridiagonal system: pivot {denom:e} at row {i}"
                )));
            }
            inv_denom[i] = 1.0 / denom;
            prev_c = if i + 1 < n {
                self.sup[i] * inv_denom[i]
            } else {
                0.0
            };
            c_prime[i] = prev_c;
        }
        Ok(TridiagFactor {
            sub: self.sub.clone(),
            c_prime,
            inv_denom,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let f = self.factor()?;
        f.solve(rhs)
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * x[i + 1];
                }
                s
            })
            .collect()
    }
}

impl TridiagFactor {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.inv_denom.len();
        check_len("tridiagonal right-hand side", n, rhs.len())?;
        let mut d = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let a = if i == 0 { 0.0 } else { self.sub[i] };
            prev = (rhs[i] - a * prev) * self.inv_denom[i];
            d[i] = prev;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            d[i] -= self.c_prime[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Mesh width for `m` interior nodes on `[0, 1]`.
pub fn mesh_width(m: usize) -> f64 {
    1.0 / (m + 1) as f64
}

/// Interior operator `u ↦ L_f u` with zero boundary values, as a tridiagonal
/// matrix. `f` holds the `m + 2` node values including both boundary nodes.
pub fn divergence_matrix(f: &[f64]) -> TridiagSystem {
    let m = f.len() - 2;
    let h = mesh_width(m);
    let ih2 = 1.0 / (h * h);
    let face = |j: usize| 0.5 * (f[j] + f[j + 1]);
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    for i in 0..m {
        // interior unknown i sits at node i + 1
        let left = face(i);
        let right = face(i + 1);
        sub[i] = left * ih2;
        sup[i] = right * ih2;
        diag[i] = -(left + right) * ih2;
    }
    TridiagSystem { sub, diag, sup }
}

/// Interior values of `L_c u` for node coefficients `c` and node values `u`
/// (both of length `m + 2`).
pub fn apply_divergence(c: &[f64], u: &[f64]) -> Vec<f64> {
    let m = c.len() - 2;
    let h = mesh_width(m);
    let ih2 = 1.0 / (h * h);
    let flux = |j: usize| 0.5 * (c[j] + c[j + 1]) * (u[j + 1] - u[j]);
    (1..=m).map(|i| (flux(i) - flux(i - 1)) * ih2).collect()
}

/// Solves `(f u′)′ = g₁` on the interior nodes with `u(0) = g₂.0`,
/// `u(1) = g₂.1`. `f` has `m + 2` node values, `g1` has `m` interior values;
/// returns the `m + 2` node values of `u`.
pub fn darcy_solve(f: &[f64], g1: &[f64], g2: (f64, f64)) -> Result<Vec<f64>> {
    if f.len() < 3 {
        return Err(Error::Domain(
            "Darcy grid needs at least one interior node".into(),
        ));
    }
    let m = f.len() - 2;
    check_len("source g1", m, g1.len())?;
    if let Some(bad) = f.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "conductivity must be strictly positive, found {bad}"
        )));
    }
    let (u, _) = solve_with_factor(f, g1, g2)?;
    Ok(u)
}

fn solve_with_factor(f: &[f64], g1: &[f64], g2: (f64, f64)) -> Result<(Vec<f64>, TridiagFactor)> {
    let m = f.len() - 2;
    let h = mesh_width(m);
    let ih2 = 1.0 / (h * h);
    let sys = divergence_matrix(f);
    let mut rhs = g1.to_vec();
    rhs[0] -= 0.5 * (f[0] + f[1]) * ih2 * g2.0;
    rhs[m - 1] -= 0.5 * (f[m] + f[m + 1]) * ih2 * g2.1;
    let factor = sys.factor()?;
    let interior = factor.solve(&rhs)?;
    let mut u = Vec::with_capacity(m + 2);
    u.push(g2.0);
    u.extend(interior);
    u.push(g2.1);
    Ok((u, factor))
}

/// Parameters of the 1-D Darcy forward map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarcyParams {
    /// Number of interior grid nodes `M`.
    pub grid_points: usize,
    pub f_min: f64,
    /// Constant source `g₁`.
    pub source: f64,
    /// Boundary values `(g₂(0), g₂(1))`.
    pub boundary: (f64, f64),
}

impl Default for DarcyParams {
    fn default() -> Self {
        Self {
            grid_points: 256,
            f_min: 1.0,
            source: 4.0,
            boundary: (1.0, 1.0),
        }
    }
}

/// Discrete Darcy forward map on a uniform grid.
#[derive(Debug, Clone)]
pub struct DarcyOperator {
    pub basis: BasisFamily,
    pub f_min: f64,
    pub g1: Vec<f64>,
    pub g2: (f64, f64),
    nodes: Vec<f64>,
    /// `(m + 2) × p`, row-major.
    basis_nodes: Vec<f64>,
}

/// Solved forward state at one `θ`; derivative solves reuse its factorisation.
#[derive(Debug, Clone)]
pub struct DarcyState {
    /// `exp(Φ(θ))` at nodes.
    pub exp_phi: Vec<f64>,
    /// `f_θ` at nodes.
    pub conductivity: Vec<f64>,
    /// `u_{f_θ}` at nodes.
    pub u: Vec<f64>,
    factor: TridiagFactor,
}

impl DarcyOperator {
    pub fn new(basis: BasisFamily, params: &DarcyParams) -> Result<Self> {
        let m = params.grid_points;
        Self::with_source(basis, m, params.f_min, |_| params.source, params.boundary)
    }

    pub fn with_source(
        basis: BasisFamily,
        m: usize,
        f_min: f64,
        source: impl Fn(f64) -> f64,
        g2: (f64, f64),
    ) -> Result<Self> {
        if basis.kind != BasisKind::DirichletSine {
            return Err(Error::Config(format!(
                "darcy-1d requires the dirichlet-sine basis, got {}",
                basis.kind.name()
            )));
        }
        if !(f_min > 0.0) {
            return Err(Error::Domain(format!("f_min = {f_min} must be positive")));
        }
        if m < 2 {
            return Err(Error::Domain(
                "Darcy grid needs at least two interior nodes".into(),
            ));
        }
        let h = mesh_width(m);
        let nodes: Vec<f64> = (0..m + 2).map(|j| (j as f64 * h).min(1.0)).collect();
        let g1 = nodes[1..=m].iter().map(|&x| source(x)).collect();
        let basis_nodes = basis.design_matrix(&nodes);
        Ok(Self {
            basis,
            f_min,
            g1,
            g2,
            nodes,
            basis_nodes,
        })
    }

    /// Same grid and data with a different sine basis dimension.
    pub fn with_dim(&self, p: usize) -> Result<Self> {
        let basis = BasisFamily::new(self.basis.kind, p)?;
        let basis_nodes = basis.design_matrix(&self.nodes);
        Ok(Self {
            basis,
            basis_nodes,
            ..self.clone()
        })
    }

    pub fn grid_points(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn p(&self) -> usize {
        self.basis.p
    }

    /// `Φ(v)` at the nodes.
    pub fn phi_at_nodes(&self, v: &[f64]) -> Vec<f64> {
        let p = self.p();
        self.basis_nodes
            .chunks(p)
            .map(|row| crate::dot(row, v))
            .collect()
    }

    pub fn solve(&self, theta: &[f64]) -> Result<DarcyState> {
        check_len("theta", self.p(), theta.len())?;
        let exp_phi: Vec<f64> = self.phi_at_nodes(theta).into_iter().map(f64::exp).collect();
        let conductivity: Vec<f64> = exp_phi.iter().map(|e| self.f_min + e).collect();
        if conductivity.iter().any(|f| !f.is_finite()) {
            return Err(Error::Domain(
                "conductivity overflow: exp(Φ(θ)) is not finite".into(),
            ));
        }
        let (u, factor) = solve_with_factor(&conductivity, &self.g1, self.g2)?;
        Ok(DarcyState {
            exp_phi,
            conductivity,
            u,
            factor,
        })
    }

    /// `v^T ∇𝒢(θ)` at the nodes (zero on the boundary).
    pub fn dir_grad(&self, state: &DarcyState, v: &[f64]) -> Result<Vec<f64>> {
        check_len("direction", self.p(), v.len())?;
        let fv: Vec<f64> = self
            .phi_at_nodes(v)
            .iter()
            .zip(&state.exp_phi)
            .map(|(ph, e)| e * ph)
            .collect();
        let w = self.inverse_apply(state, &fv, &state.u)?;
        Ok(w.into_iter().map(|x| -x).collect())
    }

    /// `v^T ∇²𝒢(θ) v` at the nodes (zero on the boundary).
    pub fn dir_hess(&self, state: &DarcyState, v: &[f64]) -> Result<Vec<f64>> {
        check_len("direction", self.p(), v.len())?;
        let phv = self.phi_at_nodes(v);
        let fv: Vec<f64> = phv
            .iter()
            .zip(&state.exp_phi)
            .map(|(ph, e)| e * ph)
            .collect();
        let fv2: Vec<f64> = phv
            .iter()
            .zip(&state.exp_phi)
            .map(|(ph, e)| e * ph * ph)
            .collect();
        let first = self.inverse_apply(state, &fv, &state.u)?;
        let nested = self.inverse_apply(state, &fv, &first)?;
        let second = self.inverse_apply(state, &fv2, &state.u)?;
        Ok(nested
            .iter()
            .zip(&second)
            .map(|(a, b)| 2.0 * a - b)
            .collect())
    }

    /// Gradient in `θ` of `Σ_j w_j u_j` for node weights `w` (boundary
    /// weights are irrelevant since `u` is fixed there). One adjoint solve
    /// plus `O(M p)` work.
    pub fn vjp(&self, state: &DarcyState, weights: &[f64]) -> Result<Vec<f64>> {
        let m = self.grid_points();
        check_len("node weights", m + 2, weights.len())?;
        // divergence matrix is symmetric, so the adjoint reuses the factor
        let lambda_int = state.factor.solve(&weights[1..=m])?;
        let mut lambda = vec![0.0; m + 2];
        lambda[1..=m].copy_from_slice(&lambda_int);
        let h = mesh_width(m);
        let ih2 = 1.0 / (h * h);
        let face: Vec<f64> = (0..=m)
            .map(|j| (state.u[j + 1] - state.u[j]) * (lambda[j] - lambda[j + 1]) * ih2)
            .collect();
        let p = self.p();
        let mut grad = vec![0.0; p];
        for j in 0..m + 2 {
            let left = if j > 0 { face[j - 1] } else { 0.0 };
            let right = if j <= m { face[j] } else { 0.0 };
            let c = -0.5 * state.exp_phi[j] * (left + right);
            if c != 0.0 {
                let row = &self.basis_nodes[j * p..(j + 1) * p];
                for (g, e) in grad.iter_mut().zip(row) {
                    *g += c * e;
                }
            }
        }
        Ok(grad)
    }

    /// `L_{f_θ}^{-1} L_c w` with zero boundary values, returned on all nodes.
    fn inverse_apply(&self, state: &DarcyState, c: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let rhs = apply_divergence(c, w);
        let interior = state.factor.solve(&rhs)?;
        let mut out = Vec::with_capacity(interior.len() + 2);
        out.push(0.0);
        out.extend(interior);
        out.push(0.0);
        Ok(out)
    }

    /// Linear interpolation weights `(j, w)` with value `(1 − w) y_j + w y_{j+1}`.
    pub fn interpolation(&self, x: f64) -> Result<(usize, f64)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("point {x} outside [0, 1]")));
        }
        let m = self.grid_points();
        let h = mesh_width(m);
        let j = ((x / h).floor() as usize).min(m);
        let w = ((x - self.nodes[j]) / h).clamp(0.0, 1.0);
        Ok((j, w))
    }

    pub fn interpolate(&self, values: &[f64], x: f64) -> Result<f64> {
        let (j, w) = self.interpolation(x)?;
        Ok((1.0 - w) * values[j] + w * values[j + 1])
    }
}

/// The forward operator of a regression model.
#[derive(Debug, Clone)]
pub enum ForwardOperator {
    LinearPhi(BasisFamily),
    Darcy(DarcyOperator),
}

impl ForwardOperator {
    pub fn basis(&self) -> &BasisFamily {
        match self {
            ForwardOperator::LinearPhi(b) => b,
            ForwardOperator::Darcy(d) => &d.basis,
        }
    }

    pub fn p(&self) -> usize {
        self.basis().p
    }

    /// The same operator on a `p`-dimensional basis of the same kind.
    pub fn with_dim(&self, p: usize) -> Result<Self> {
        Ok(match self {
            ForwardOperator::LinearPhi(b) => {
                ForwardOperator::LinearPhi(BasisFamily::new(b.kind, p)?)
            }
            ForwardOperator::Darcy(d) => ForwardOperator::Darcy(d.with_dim(p)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForwardOperator::LinearPhi(_) => "linear-phi",
            ForwardOperator::Darcy(_) => "darcy-1d",
        }
    }

    /// `𝒢(θ)(x)` at each point.
    pub fn eval(&self, theta: &[f64], points: &[f64]) -> Result<Vec<f64>> {
        check_len("theta", self.p(), theta.len())?;
        match self {
            ForwardOperator::LinearPhi(b) => points.iter().map(|&x| b.phi(theta, x)).collect(),
            ForwardOperator::Darcy(d) => {
                let st = d.solve(theta)?;
                points.iter().map(|&x| d.interpolate(&st.u, x)).collect()
            }
        }
    }

    /// `v^T ∇𝒢(θ)` at each point.
    pub fn dir_grad(&self, theta: &[f64], v: &[f64], points: &[f64]) -> Result<Vec<f64>> {
        check_len("theta", self.p(), theta.len())?;
        check_len("direction", self.p(), v.len())?;
        match self {
            ForwardOperator::LinearPhi(b) => points.iter().map(|&x| b.phi(v, x)).collect(),
            ForwardOperator::Darcy(d) => {
                let st = d.solve(theta)?;
                let g = d.dir_grad(&st, v)?;
                points.iter().map(|&x| d.interpolate(&g, x)).collect()
            }
        }
    }

    /// `v^T ∇²𝒢(θ) v` at each point.
    pub fn dir_hess(&self, theta: &[f64], v: &[f64], points: &[f64]) -> Result<Vec<f64>> {
        check_len("theta", self.p(), theta.len())?;
        check_len("direction", self.p(), v.len())?;
        match self {
            ForwardOperator::LinearPhi(_) => points
                .iter()
                .map(|&x| {
                    if (0.0..=1.0).contains(&x) {
                        Ok(0.0)
                    } else {
                        Err(Error::Domain(format!("point {x} outside [0, 1]")))
                    }
                })
                .collect(),
            ForwardOperator::Darcy(d) => {
                let st = d.solve(theta)?;
                let g = d.dir_hess(&st, v)?;
                points.iter().map(|&x| d.interpolate(&g, x)).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn sine(p: usize) -> BasisFamily {
        BasisFamily::new(BasisKind::DirichletSine, p).unwrap()
    }

    fn grid(m: usize) -> Vec<f64> {
        let h = mesh_width(m);
        (0..m + 2).map(|j| j as f64 * h).collect()
    }

    #[test]
    fn thomas_solves_and_rejects_singular_systems() {
        let sys = TridiagSystem {
            sub: vec![0.0, 1.0, 1.0, 1.0],
            diag: vec![4.0, 4.0, 4.0, 4.0],
            sup: vec![1.0, 1.0, 1.0, 0.0],
        };
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = sys.apply(&x);
        let got = sys.solve(&b).unwrap();
        for (a, e) in got.iter().zip(&x) {
            assert!((a - e).abs() < 1e-14);
        }
        let singular = TridiagSystem {
            sub: vec![0.0, 1.0],
            diag: vec![1.0, 1.0],
            sup: vec![1.0, 0.0],
        };
        assert!(matches!(singular.factor(), Err(Error::Numeric(_))));
    }

    #[test]
    fn constant_conductivity_quadratic_is_exact() {
        for (fval, scale) in [(1.0, 1.0), (2.0, 0.5)] {
            let m = 255;
            let f = vec![fval; m + 2];
            let u = darcy_solve(&f, &vec![2.0; m], (0.0, 0.0)).unwrap();
            for (x, ui) in grid(m).iter().zip(&u) {
                assert!((ui - scale * (x * x - x)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        let mut f = vec![1.0; 10];
        f[4] = 0.0;
        assert!(matches!(
            darcy_solve(&f, &[1.0; 8], (0.0, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    fn manufactured_error(m: usize) -> f64 {
        // u = sin(πx), f = 1 + x ⇒ g1 = (f u')' = π cos(πx) − (1 + x) π² sin(πx)
        let xs = grid(m);
        let f: Vec<f64> = xs.iter().map(|x| 1.0 + x).collect();
        let g1: Vec<f64> = xs[1..=m]
            .iter()
            .map(|x| PI * (PI * x).cos() - (1.0 + x) * PI * PI * (PI * x).sin())
            .collect();
        let u = darcy_solve(&f, &g1, (0.0, 0.0)).unwrap();
        xs.iter()
            .zip(&u)
            .map(|(x, ui)| (ui - (PI * x).sin()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        // M+1 cells: 128 → 256 → 512 intervals
        let e1 = manufactured_error(127);
        let e2 = manufactured_error(255);
        let e3 = manufactured_error(511);
        for ratio in [e1 / e2, e2 / e3] {
            assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
        }
        assert!(e3 < 1e-5);
    }

    #[test]
    fn forward_eval_examples() {
        let op = DarcyOperator::with_source(sine(3), 255, 1.0, |_| 2.0, (0.0, 0.0)).unwrap();
        let fwd = ForwardOperator::Darcy(op);
        let u = fwd.eval(&[0.0; 3], &[0.5]).unwrap();
        assert!((u[0] + 0.125).abs() < 1e-10);
        let op = DarcyOperator::with_source(sine(3), 64, 1.0, |_| 0.0, (3.0, 3.0)).unwrap();
        let u = ForwardOperator::Darcy(op)
            .eval(&[0.3, -0.2, 0.1], &[0.0, 0.2, 0.77, 1.0])
            .unwrap();
        assert!(u.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let lin =
            ForwardOperator::LinearPhi(BasisFamily::new(BasisKind::CosineWithConstant, 4).unwrap());
        assert!(lin
            .eval(&[0.0; 4], &[0.1, 0.9])
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn conductivity_is_bounded_below_and_residual_is_small() {
        let op = DarcyOperator::new(sine(5), &DarcyParams::default()).unwrap();
        let theta = [0.8, -0.6, 0.4, -0.2, 0.1];
        let st = op.solve(&theta).unwrap();
        assert!(st.conductivity.iter().all(|&f| f >= op.f_min));
        let res = apply_divergence(&st.conductivity, &st.u);
        let worst = res
            .iter()
            .zip(&op.g1)
            .map(|(r, g)| (r - g).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-9, "residual {worst}");
    }

    #[test]
    fn darcy_requires_sine_basis() {
        let b = BasisFamily::new(BasisKind::CosineWithConstant, 3).unwrap();
        assert!(matches!(
            DarcyOperator::new(b, &DarcyParams::default()),
            Err(Error::Config(_))
        ));
    }

    fn l2(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    fn random_pair(rng: &mut impl Rng, p: usize) -> (Vec<f64>, Vec<f64>) {
        // ‖θ‖_α ≤ 1 for α = 1 and a unit direction
        let mut theta: Vec<f64> = (1..=p)
            .map(|k| rng.sample::<f64, _>(StandardNormal) / k as f64)
            .collect();
        let a: f64 = theta
            .iter()
            .enumerate()
            .map(|(k, t)| ((k + 1) as f64 * t).powi(2))
            .sum::<f64>()
            .sqrt();
        theta.iter_mut().for_each(|t| *t /= a.max(1.0));
        let mut v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let nv = crate::norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        (theta, v)
    }

    #[test]
    fn directional_derivatives_match_finite_differences() {
        let op = DarcyOperator::new(sine(4), &DarcyParams::default()).unwrap();
        let mut rng = rng_from_seed(41);
        for _ in 0..20 {
            let (theta, v) = random_pair(&mut rng, 4);
            let st = op.solve(&theta).unwrap();
            let shift =
                |s: f64| -> Vec<f64> { theta.iter().zip(&v).map(|(t, d)| t + s * d).collect() };
            let up = |s: f64| op.solve(&shift(s)).unwrap().u;

            let e = 1e-5;
            let fd: Vec<f64> = up(e)
                .iter()
                .zip(up(-e))
                .map(|(a, b)| (a - b) / (2.0 * e))
                .collect();
            let g = op.dir_grad(&st, &v).unwrap();
            let err: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
            assert!(l2(&err) <= 1e-5 * l2(&g), "grad rel {}", l2(&err) / l2(&g));

            // second derivative as the central difference of the exact first derivative
            let e = 1e-5;
            let gd = |s: f64| op.dir_grad(&op.solve(&shift(s)).unwrap(), &v).unwrap();
            let fd2: Vec<f64> = gd(e)
                .iter()
                .zip(gd(-e))
                .map(|(a, b)| (a - b) / (2.0 * e))
                .collect();
            let hs = op.dir_hess(&st, &v).unwrap();
            let err: Vec<f64> = hs.iter().zip(&fd2).map(|(a, b)| a - b).collect();
            assert!(
                l2(&err) <= 1e-4 * l2(&hs),
                "hess rel {}",
                l2(&err) / l2(&hs)
            );
        }
    }

    #[test]
    fn adjoint_gradient_matches_directional_derivatives() {
        let op = DarcyOperator::new(sine(5), &DarcyParams::default()).unwrap();
        let mut rng = rng_from_seed(8);
        let (theta, _) = random_pair(&mut rng, 5);
        let st = op.solve(&theta).unwrap();
        let w: Vec<f64> = (0..op.grid_points() + 2)
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let grad = op.vjp(&st, &w).unwrap();
        for k in 0..5 {
            let mut e = vec![0.0; 5];
            e[k] = 1.0;
            let d = op.dir_grad(&st, &e).unwrap();
            let expect: f64 = d.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((grad[k] - expect).abs() < 1e-10 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn linear_phi_derivatives() {
        let b = BasisFamily::new(BasisKind::CosineWithConstant, 3).unwrap();
        let op = ForwardOperator::LinearPhi(b);
        let pts = [0.0, 0.3, 0.8];
        let g = op
            .dir_grad(&[0.4, 0.1, -0.3], &[0.0, 1.0, 0.0], &pts)
            .unwrap();
        for (gi, &x) in g.iter().zip(&pts) {
            assert_eq!(*gi, b.eval(2, x).unwrap());
        }
        assert!(op
            .dir_grad(&[0.4, 0.1, -0.3], &[0.0; 3], &pts)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(op
            .dir_hess(&[0.4, 0.1, -0.3], &[1.0, 1.0, 0.0], &pts)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let darcy =
            ForwardOperator::Darcy(DarcyOperator::new(sine(3), &DarcyParams::default()).unwrap());
        assert!(darcy
            .dir_grad(&[0.1, 0.0, 0.2], &[0.0; 3], &pts)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(darcy
            .dir_hess(&[0.1, 0.0, 0.2], &[0.0; 3], &pts)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn larger_conductivity_shrinks_the_solution() {
        let mut rng = rng_from_seed(17);
        let m = 128;
        for _ in 0..20 {
            let f: Vec<f64> = (0..m + 2).map(|_| 0.5 + rng.random::<f64>()).collect();
            let bump: Vec<f64> = f.iter().map(|v| v + rng.random::<f64>()).collect();
            let g1: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let sup = |u: Vec<f64>| u.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let a = sup(darcy_solve(&f, &g1, (0.0, 0.0)).unwrap());
            let b = sup(darcy_solve(&bump, &g1, (0.0, 0.0)).unwrap());
            assert!(b <= a + 1e-14);
        }
    }

    #[test]
    fn forward_map_is_lipschitz_on_a_ball() {
        let op = DarcyOperator::new(sine(4), &DarcyParams::default()).unwrap();
        let mut rng = rng_from_seed(99);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (a, _) = random_pair(&mut rng, 4);
            let (b, _) = random_pair(&mut rng, 4);
            let ua = op.solve(&a).unwrap().u;
            let ub = op.solve(&b).unwrap().u;
            let diff: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| x - y).collect();
            worst = worst.max(l2(&diff) / crate::distance(&a, &b));
        }
        assert!(worst.is_finite() && worst < 10.0, "ratio {worst}");
    }
}
