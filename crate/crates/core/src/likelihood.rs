//! Log-likelihood engines, synthetic data generation and the local curvature
//! probe.
//!
//! Two model kinds are supported. Regression models observe `(X_i, Y_i)` with
//! `Y_i | X_i` in an exponential family whose natural parameter is
//! `b(𝒢(θ)(X_i))`. Density models observe `X_i ~ p_θ ∝ exp(Φ(θ))` on `[0, 1]`.
//!
//! Overflow never aborts an evaluation: `log_lik` returns `-∞` and gradients
//! are filled with `NaN`, which the samplers' guard interprets.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisKind};
use crate::error::{check_len, Error, Result};
use crate::family::{natural_param_with_derivs, ExpFamily, FamilyKind, LinkFunction};
use crate::forward::{DarcyOperator, DarcyState, ForwardOperator};
use crate::quadrature::composite_unit;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{dot, norm};

/// Default node count of the density-model quadrature.
pub const DEFAULT_QUADRATURE_NODES: usize = 256;

/// Dimension up to which the probe also assembles the full Hessian.
pub const FULL_HESSIAN_MAX_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Regression,
    Density,
}

/// Observations together with the coefficients that generated them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub kind: DataKind,
    pub x: Vec<f64>,
    /// Responses; empty for density data.
    pub y: Vec<f64>,
    pub truth_theta0: Vec<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.x.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Domain(format!("design point {bad} outside [0, 1]")));
        }
        match self.kind {
            DataKind::Regression => {
                check_len("responses", self.x.len(), self.y.len())?;
                if self.y.iter().any(|y| !y.is_finite()) {
                    return Err(Error::Domain("non-finite response".into()));
                }
            }
            DataKind::Density => check_len("responses (density data has none)", 0, self.y.len())?,
        }
        Ok(())
    }

    /// Observations sorted by `(x, y)`, which makes every likelihood sum
    /// independent of the input order.
    pub fn sorted(&self) -> Dataset {
        let mut out = self.clone();
        match self.kind {
            DataKind::Density => out.x.sort_by(f64::total_cmp),
            DataKind::Regression => {
                let mut pairs: Vec<(f64, f64)> =
                    self.x.iter().copied().zip(self.y.iter().copied()).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
                out.x = pairs.iter().map(|p| p.0).collect();
                out.y = pairs.iter().map(|p| p.1).collect();
            }
        }
        out
    }
}

/// Structural description of a model, independent of data.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Regression {
        family: ExpFamily,
        link: LinkFunction,
        forward: ForwardOperator,
    },
    Density {
        basis: BasisFamily,
        quadrature_nodes: usize,
    },
}

impl ModelSpec {
    pub fn basis(&self) -> &BasisFamily {
        match self {
            ModelSpec::Regression { forward, .. } => forward.basis(),
            ModelSpec::Density { basis, .. } => basis,
        }
    }

    pub fn p(&self) -> usize {
        self.basis().p
    }

    pub fn kind(&self) -> DataKind {
        match self {
            ModelSpec::Regression { .. } => DataKind::Regression,
            ModelSpec::Density { .. } => DataKind::Density,
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            ModelSpec::Density {
                basis,
                quadrature_nodes,
            } => {
                if basis.kind != BasisKind::CosineCentered {
                    return Err(Error::Config(format!(
                        "density model requires the cosine-centered basis, got {}",
                        basis.kind.name()
                    )));
                }
                if *quadrature_nodes == 0 {
                    return Err(Error::Config("quadrature_nodes must be positive".into()));
                }
                Ok(())
            }
            ModelSpec::Regression { forward, .. } => {
                if let ForwardOperator::Darcy(d) = forward {
                    if d.basis.kind != BasisKind::DirichletSine {
                        return Err(Error::Config(
                            "darcy-1d requires the dirichlet-sine basis".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Draws `n` observations from the model at `theta0`. `theta0` may be
    /// longer than `p`; the truth then uses a basis of dimension `theta0.len()`.
    pub fn generate(&self, theta0: &[f64], n: usize, seed: u64) -> Result<Dataset> {
        self.check()?;
        if theta0.is_empty() || theta0.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain(
                "theta0 must be a non-empty finite vector".into(),
            ));
        }
        let mut design_rng = rng_from_seed(derive_seed(seed, "design"));
        match self {
            ModelSpec::Regression {
                family,
                link,
                forward,
            } => {
                let truth = forward.with_dim(theta0.len())?;
                let x: Vec<f64> = (0..n).map(|_| design_rng.random::<f64>()).collect();
                let u = truth.eval(theta0, &x)?;
                let mut rng = rng_from_seed(derive_seed(seed, "response"));
                let mut y = Vec::with_capacity(n);
                for &ui in &u {
                    let (h, _, _) = natural_param_with_derivs(family, link, ui)?;
                    let yi = family.sample_response(h, &mut rng).map_err(|e| {
                        Error::Domain(format!(
                            "natural-parameter overflow while sampling responses ({e}); use a smaller ‖θ₀‖"
                        ))
                    })?;
                    y.push(yi);
                }
                Ok(Dataset {
                    kind: DataKind::Regression,
                    x,
                    y,
                    truth_theta0: theta0.to_vec(),
                    seed,
                })
            }
            ModelSpec::Density { basis, .. } => {
                let truth = BasisFamily::new(basis.kind, theta0.len())?;
                let sampler = InverseCdf::new(&truth, theta0)?;
                let x = (0..n)
                    .map(|_| sampler.sample(design_rng.random::<f64>()))
                    .collect();
                Ok(Dataset {
                    kind: DataKind::Density,
                    x,
                    y: Vec::new(),
                    truth_theta0: theta0.to_vec(),
                    seed,
                })
            }
        }
    }

    pub fn instantiate(self, data: Dataset) -> Result<ModelInstance> {
        ModelInstance::new(self, data)
    }
}

/// Draws from `p_θ ∝ exp(Φ(θ))` by inverting a tabulated CDF.
struct InverseCdf {
    cdf: Vec<f64>,
    h: f64,
}

impl InverseCdf {
    const CELLS: usize = 1 << 14;

    fn new(basis: &BasisFamily, theta: &[f64]) -> Result<Self> {
        let h = 1.0 / Self::CELLS as f64;
        let logd: Vec<f64> = (0..=Self::CELLS)
            .map(|j| basis.phi_unchecked(theta, j as f64 * h))
            .collect();
        let top = logd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::Domain(
                "density log-values overflow; use a smaller ‖θ₀‖".into(),
            ));
        }
        let dens: Vec<f64> = logd.iter().map(|l| (l - top).exp()).collect();
        let mut cdf = Vec::with_capacity(dens.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in dens.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * h;
            cdf.push(acc);
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self { cdf, h })
    }

    fn sample(&self, u: f64) -> f64 {
        let j = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1)
            - 1;
        let (lo, hi) = (self.cdf[j], self.cdf[j + 1]);
        let frac = if hi > lo {
            ((u - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        ((j as f64 + frac) * self.h).min(1.0)
    }
}

/// Draws a dataset; see [`ModelSpec::generate`].
pub fn generate_data(spec: &ModelSpec, theta0: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    spec.generate(theta0, n, seed)
}

#[derive(Debug, Clone)]
enum Engine {
    /// Gaussian family, canonical link, linear forward map: exact sufficient
    /// statistics `Eᵀy` and `EᵀE`.
    GaussianLinear { ety: Vec<f64>, gram: Vec<f64> },
    /// Distinct design rows with the response sum and multiplicity of the
    /// data sharing each row.
    Linear {
        design: Vec<f64>,
        ysum: Vec<f64>,
        count: Vec<f64>,
    },
    Darcy {
        op: DarcyOperator,
        interp: Vec<(usize, f64)>,
    },
    Density {
        stat: Vec<f64>,
        node_design: Vec<f64>,
        weights: Vec<f64>,
    },
}

/// A likelihood engine bound to a dataset. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    pub spec: ModelSpec,
    /// Data, sorted by `(x, y)`.
    pub dataset: Dataset,
    engine: Engine,
}

/// Merges bitwise-identical design rows, keeping first-occurrence order.
fn group_rows(design: &[f64], y: &[f64], p: usize) -> Engine {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut ysum = Vec::new();
    let mut count = Vec::new();
    for (row, &yi) in design.chunks(p).zip(y) {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&g) => {
                ysum[g] += yi;
                count[g] += 1.0;
            }
            None => {
                index.insert(key, count.len());
                rows.extend_from_slice(row);
                ysum.push(yi);
                count.push(1.0);
            }
        }
    }
    Engine::Linear {
        design: rows,
        ysum,
        count,
    }
}

/// Per-`θ` quantities from which directional curvatures follow cheaply.
enum Local {
    Gauss,
    Linear {
        coef: Vec<f64>,
    },
    Darcy {
        state: DarcyState,
        c1: Vec<f64>,
        c2: Vec<f64>,
    },
    Density {
        pi: Vec<f64>,
    },
    Overflow,
}

impl ModelInstance {
    pub fn new(spec: ModelSpec, dataset: Dataset) -> Result<Self> {
        Self::build(spec, dataset, true)
    }

    /// Like [`ModelInstance::new`] but always evaluates the regression sum
    /// datum by datum.
    pub fn generic(spec: ModelSpec, dataset: Dataset) -> Result<Self> {
        Self::build(spec, dataset, false)
    }

    fn build(spec: ModelSpec, dataset: Dataset, fast: bool) -> Result<Self> {
        spec.check()?;
        dataset.validate()?;
        if dataset.kind != spec.kind() {
            return Err(Error::Config(format!(
                "dataset kind {:?} does not match model kind {:?}",
                dataset.kind,
                spec.kind()
            )));
        }
        let dataset = dataset.sorted();
        let p = spec.p();
        let engine = match &spec {
            ModelSpec::Regression {
                family,
                link,
                forward,
            } => match forward {
                ForwardOperator::LinearPhi(basis) => {
                    let design = basis.design_matrix(&dataset.x);
                    if fast && family.kind == FamilyKind::Gaussian && link.is_canonical() {
                        let mut ety = vec![0.0; p];
                        let mut gram = vec![0.0; p * p];
                        for (row, &y) in design.chunks(p).zip(&dataset.y) {
                            for a in 0..p {
                                ety[a] += row[a] * y;
                                for b in 0..p {
                                    gram[a * p + b] += row[a] * row[b];
                                }
                            }
                        }
                        Engine::GaussianLinear { ety, gram }
                    } else if fast {
                        group_rows(&design, &dataset.y, p)
                    } else {
                        Engine::Linear {
                            design,
                            ysum: dataset.y.clone(),
                            count: vec![1.0; dataset.n()],
                        }
                    }
                }
                ForwardOperator::Darcy(op) => {
                    let interp = dataset
                        .x
                        .iter()
                        .map(|&x| op.interpolation(x))
                        .collect::<Result<Vec<_>>>()?;
                    Engine::Darcy {
                        op: op.clone(),
                        interp,
                    }
                }
            },
            ModelSpec::Density {
                basis,
                quadrature_nodes,
            } => {
                let rule = composite_unit(*quadrature_nodes);
                let mut stat = vec![0.0; p];
                let mut row = vec![0.0; p];
                for &x in &dataset.x {
                    basis.values_into(x, &mut row);
                    stat.iter_mut().zip(&row).for_each(|(s, e)| *s += e);
                }
                Engine::Density {
                    stat,
                    node_design: basis.design_matrix(&rule.nodes),
                    weights: {
                        let total: f64 = rule.weights.iter().sum();
                        rule.weights.iter().map(|w| w / total).collect()
                    },
                }
            }
        };
        Ok(Self {
            spec,
            dataset,
            engine,
        })
    }

    pub fn p(&self) -> usize {
        self.spec.p()
    }

    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub fn basis(&self) -> &BasisFamily {
        self.spec.basis()
    }

    pub fn kind(&self) -> DataKind {
        self.spec.kind()
    }

    /// `ℓ_n(θ)`, or `-∞` on overflow.
    pub fn log_lik(&self, theta: &[f64]) -> Result<f64> {
        check_len("theta", self.p(), theta.len())?;
        let value = match &self.engine {
            Engine::GaussianLinear { ety, gram } => {
                let p = self.p();
                let quad: f64 = gram
                    .chunks(p)
                    .zip(theta)
                    .map(|(row, t)| t * dot(row, theta))
                    .sum();
                dot(ety, theta) - 0.5 * quad
            }
            Engine::Density {
                stat,
                node_design,
                weights,
            } => match log_partition(node_design, weights, theta) {
                Some(a) => dot(stat, theta) - self.n() as f64 * a,
                None => f64::NEG_INFINITY,
            },
            _ => {
                let (family, link) = self.family_link();
                let u = match self.forward_at_data(theta) {
                    Ok(u) => u,
                    Err(Error::Domain(_)) | Err(Error::Numeric(_)) => return Ok(f64::NEG_INFINITY),
                    Err(e) => return Err(e),
                };
                let (ysum, count) = self.responses();
                let mut s = 0.0;
                for (i, (ui, y)) in u.iter().zip(ysum).enumerate() {
                    let c = count.map_or(1.0, |c| c[i]);
                    match natural_param_with_derivs(family, link, *ui) {
                        Ok((b, _, _)) => s += y * b - c * family.log_partition(b),
                        Err(_) => return Ok(f64::NEG_INFINITY),
                    }
                }
                s
            }
        };
        Ok(if value.is_finite() {
            value
        } else {
            f64::NEG_INFINITY
        })
    }

    /// `∇ℓ_n(θ)`; entries are `NaN` where `ℓ_n(θ) = -∞`.
    pub fn grad_log_lik(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.p()];
        self.grad_into(theta, &mut out)?;
        Ok(out)
    }

    /// Writes `∇ℓ_n(θ)` into `out`; returns `false` (and fills `NaN`) on overflow.
    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) -> Result<bool> {
        let p = self.p();
        check_len("theta", p, theta.len())?;
        check_len("gradient buffer", p, out.len())?;
        let ok = match &self.engine {
            Engine::GaussianLinear { ety, gram } => {
                for (a, o) in out.iter_mut().enumerate() {
                    *o = ety[a] - dot(&gram[a * p..(a + 1) * p], theta);
                }
                true
            }
            Engine::Density {
                stat,
                node_design,
                weights,
            } => match tilt(node_design, weights, theta) {
                Some(pi) => {
                    let n = self.n() as f64;
                    out.copy_from_slice(stat);
                    for (row, w) in node_design.chunks(p).zip(&pi) {
                        for (o, e) in out.iter_mut().zip(row) {
                            *o -= n * w * e;
                        }
                    }
                    true
                }
                None => false,
            },
            Engine::Linear { design, .. } => match self.residual_terms(theta)? {
                Some(terms) => {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for (row, t) in design.chunks(p).zip(&terms) {
                        let r = t.resid * t.b1;
                        for (o, e) in out.iter_mut().zip(row) {
                            *o += r * e;
                        }
                    }
                    true
                }
                None => false,
            },
            Engine::Darcy { op, interp } => match self.darcy_terms(op, theta)? {
                Some((state, terms)) => {
                    let mut node_weights = vec![0.0; op.grid_points() + 2];
                    for (&(j, w), t) in interp.iter().zip(&terms) {
                        let r = t.resid * t.b1;
                        node_weights[j] += r * (1.0 - w);
                        node_weights[j + 1] += r * w;
                    }
                    let g = op.vjp(&state, &node_weights)?;
                    out.copy_from_slice(&g);
                    true
                }
                None => false,
            },
        };
        let ok = ok && out.iter().all(|g| g.is_finite());
        if !ok {
            out.iter_mut().for_each(|o| *o = f64::NAN);
        }
        Ok(ok)
    }

    /// `vᵀ∇²ℓ_n(θ)v`; `NaN` on overflow.
    pub fn hess_dir(&self, theta: &[f64], v: &[f64]) -> Result<f64> {
        check_len("direction", self.p(), v.len())?;
        let local = self.local(theta)?;
        self.local_quad(&local, v)
    }

    /// Full Hessian `∇²ℓ_n(θ)`, `p × p`. Intended for small `p`.
    pub fn hessian_matrix(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.p();
        let local = self.local(theta)?;
        let mut h = DMatrix::zeros(p, p);
        match (&local, &self.engine) {
            (Local::Overflow, _) => h.fill(f64::NAN),
            (Local::Gauss, Engine::GaussianLinear { gram, .. }) => {
                for a in 0..p {
                    for b in 0..p {
                        h[(a, b)] = -gram[a * p + b];
                    }
                }
            }
            (Local::Linear { coef }, Engine::Linear { design, .. }) => {
                for (row, c) in design.chunks(p).zip(coef) {
                    for a in 0..p {
                        for b in 0..p {
                            h[(a, b)] += c * row[a] * row[b];
                        }
                    }
                }
            }
            (Local::Density { pi }, Engine::Density { node_design, .. }) => {
                let n = self.n() as f64;
                let mut mean = vec![0.0; p];
                for (row, w) in node_design.chunks(p).zip(pi) {
                    mean.iter_mut().zip(row).for_each(|(m, e)| *m += w * e);
                }
                for (row, w) in node_design.chunks(p).zip(pi) {
                    for a in 0..p {
                        for b in 0..p {
                            h[(a, b)] -= n * w * (row[a] - mean[a]) * (row[b] - mean[b]);
                        }
                    }
                }
            }
            _ => {
                // polarisation of the exact directional second derivative
                let unit = |a: usize| {
                    let mut e = vec![0.0; p];
                    e[a] = 1.0;
                    e
                };
                let diag: Vec<f64> = (0..p)
                    .map(|a| self.local_quad(&local, &unit(a)))
                    .collect::<Result<_>>()?;
                for a in 0..p {
                    h[(a, a)] = diag[a];
                    for b in a + 1..p {
                        let mut e = unit(a);
                        e[b] = 1.0;
                        let q = self.local_quad(&local, &e)?;
                        let off = 0.5 * (q - diag[a] - diag[b]);
                        h[(a, b)] = off;
                        h[(b, a)] = off;
                    }
                }
            }
        }
        Ok(h)
    }

    fn family_link(&self) -> (&ExpFamily, &LinkFunction) {
        match &self.spec {
            ModelSpec::Regression { family, link, .. } => (family, link),
            ModelSpec::Density { .. } => unreachable!("density models have no family"),
        }
    }

    fn forward_at_data(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match &self.engine {
            Engine::Linear { design, .. } => {
                Ok(design.chunks(self.p()).map(|row| dot(row, theta)).collect())
            }
            Engine::GaussianLinear { .. } => {
                let ModelSpec::Regression { forward, .. } = &self.spec else {
                    unreachable!()
                };
                forward.eval(theta, &self.dataset.x)
            }
            Engine::Darcy { op, interp } => {
                let st = op.solve(theta)?;
                Ok(interpolate(&st.u, interp))
            }
            Engine::Density { .. } => unreachable!("density models have no forward map"),
        }
    }

    /// Response sums and multiplicities aligned with the forward output.
    fn responses(&self) -> (&[f64], Option<&[f64]>) {
        match &self.engine {
            Engine::Linear { ysum, count, .. } => (ysum, Some(count)),
            _ => (&self.dataset.y, None),
        }
    }

    fn terms_from_u(&self, u: &[f64]) -> Option<Vec<Terms>> {
        let (family, link) = self.family_link();
        let (ysum, count) = self.responses();
        u.iter()
            .zip(ysum)
            .enumerate()
            .map(|(i, (&ui, &y))| {
                let c = count.map_or(1.0, |c| c[i]);
                let (b, b1, b2) = natural_param_with_derivs(family, link, ui).ok()?;
                let resid = y - c * family.mean(b);
                let curv = c * family.variance(b);
                if resid.is_finite() && curv.is_finite() {
                    Some(Terms {
                        resid,
                        b1,
                        b2,
                        curv,
                    })
                } else {
                    None
                }
            })
            .collect()
    }

    fn residual_terms(&self, theta: &[f64]) -> Result<Option<Vec<Terms>>> {
        let u = self.forward_at_data(theta)?;
        Ok(self.terms_from_u(&u))
    }

    fn darcy_terms(
        &self,
        op: &DarcyOperator,
        theta: &[f64],
    ) -> Result<Option<(DarcyState, Vec<Terms>)>> {
        let Engine::Darcy { interp, .. } = &self.engine else {
            unreachable!()
        };
        let state = match op.solve(theta) {
            Ok(s) => s,
            Err(Error::Domain(_)) | Err(Error::Numeric(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let u = interpolate(&state.u, interp);
        Ok(self.terms_from_u(&u).map(|t| (state, t)))
    }

    fn local(&self, theta: &[f64]) -> Result<Local> {
        check_len("theta", self.p(), theta.len())?;
        Ok(match &self.engine {
            Engine::GaussianLinear { .. } => Local::Gauss,
            Engine::Linear { .. } => match self.residual_terms(theta)? {
                Some(terms) => Local::Linear {
                    coef: terms
                        .iter()
                        .map(|t| t.resid * t.b2 - t.curv * t.b1 * t.b1)
                        .collect(),
                },
                None => Local::Overflow,
            },
            Engine::Darcy { op, .. } => match self.darcy_terms(op, theta)? {
                Some((state, terms)) => Local::Darcy {
                    state,
                    c1: terms.iter().map(|t| t.resid * t.b1).collect(),
                    c2: terms
                        .iter()
                        .map(|t| t.resid * t.b2 - t.curv * t.b1 * t.b1)
                        .collect(),
                },
                None => Local::Overflow,
            },
            Engine::Density {
                node_design,
                weights,
                ..
            } => match tilt(node_design, weights, theta) {
                Some(pi) => Local::Density { pi },
                None => Local::Overflow,
            },
        })
    }

    fn local_quad(&self, local: &Local, v: &[f64]) -> Result<f64> {
        let p = self.p();
        Ok(match (local, &self.engine) {
            (Local::Overflow, _) => f64::NAN,
            (Local::Gauss, Engine::GaussianLinear { gram, .. }) => -gram
                .chunks(p)
                .zip(v)
                .map(|(row, a)| a * dot(row, v))
                .sum::<f64>(),
            (Local::Linear { coef }, Engine::Linear { design, .. }) => design
                .chunks(p)
                .zip(coef)
                .map(|(row, c)| {
                    let du = dot(row, v);
                    c * du * du
                })
                .sum(),
            (Local::Darcy { state, c1, c2 }, Engine::Darcy { op, interp }) => {
                let du = interpolate(&op.dir_grad(state, v)?, interp);
                let d2u = interpolate(&op.dir_hess(state, v)?, interp);
                du.iter()
                    .zip(&d2u)
                    .zip(c1.iter().zip(c2))
                    .map(|((g, h), (a, b))| b * g * g + a * h)
                    .sum()
            }
            (Local::Density { pi }, Engine::Density { node_design, .. }) => {
                let phv: Vec<f64> = node_design.chunks(p).map(|row| dot(row, v)).collect();
                let mean: f64 = phv.iter().zip(pi).map(|(f, w)| w * f).sum();
                let var: f64 = phv
                    .iter()
                    .zip(pi)
                    .map(|(f, w)| w * (f - mean) * (f - mean))
                    .sum();
                -(self.n() as f64) * var
            }
            _ => unreachable!("local state does not match engine"),
        })
    }

    /// Estimates local curvature on the ball `B(center, eta)`; see
    /// [`CurvatureReport`].
    pub fn curvature_probe(
        &self,
        center: &[f64],
        eta: f64,
        n_probes: usize,
        seed: u64,
    ) -> Result<CurvatureReport> {
        let p = self.p();
        check_len("probe center", p, center.len())?;
        if !(eta > 0.0) {
            return Err(Error::Domain(format!(
                "probe radius {eta} must be positive"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut excluded = 0;
        let mut used = 0;
        let full = p <= FULL_HESSIAN_MAX_DIM;
        for _ in 0..n_probes {
            let theta = uniform_in_ball(&mut rng, center, eta);
            let local = self.local(&theta)?;
            let mut vals = Vec::with_capacity(3 * p);
            for _ in 0..2 * p {
                vals.push(-self.local_quad(&local, &random_unit(&mut rng, p))?);
            }
            for a in 0..p {
                let mut e = vec![0.0; p];
                e[a] = 1.0;
                vals.push(-self.local_quad(&local, &e)?);
            }
            if full && !matches!(local, Local::Overflow) {
                let h = self.hessian_matrix(&theta)?;
                if h.iter().all(|x| x.is_finite()) {
                    let eig = SymmetricEigen::new(-h).eigenvalues;
                    vals.extend(eig.iter().copied());
                }
            }
            if vals.iter().any(|v| !v.is_finite()) {
                excluded += 1;
                continue;
            }
            used += 1;
            for v in vals {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if excluded > 0 {
            log::warn!("curvature probe excluded {excluded} of {n_probes} points with overflowing likelihood");
        }
        if used == 0 {
            lo = 0.0;
            hi = 0.0;
        }
        let grad = self.grad_log_lik(center)?;
        Ok(CurvatureReport {
            lambda_min_est: lo,
            lambda_max_est: hi,
            grad_norm_at_center: norm(&grad),
            n_probes: used,
            excluded,
            center: center.to_vec(),
            radius: eta,
            full_spectrum: full,
        })
    }

    /// Log-likelihood increments integrated along a segment. Used as a
    /// consistency check of value and gradient.
    pub fn segment_integral(&self, a: &[f64], b: &[f64], nodes: usize) -> Result<f64> {
        let rule =
            crate::quadrature::on_interval(&crate::quadrature::gauss_legendre(nodes), 0.0, 1.0);
        let dir: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let mut total = 0.0;
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let pt: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + s * d).collect();
            total += w * dot(&self.grad_log_lik(&pt)?, &dir);
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy)]
struct Terms {
    /// `Y − A′(b)`.
    resid: f64,
    b1: f64,
    b2: f64,
    /// `A″(b)`.
    curv: f64,
}

fn interpolate(values: &[f64], interp: &[(usize, f64)]) -> Vec<f64> {
    interp
        .iter()
        .map(|&(j, w)| (1.0 - w) * values[j] + w * values[j + 1])
        .collect()
}

fn phi_at_nodes(node_design: &[f64], theta: &[f64]) -> Vec<f64> {
    node_design
        .chunks(theta.len())
        .map(|row| dot(row, theta))
        .collect()
}

/// `log ∫ exp(Φ(θ))` over quadrature weights normalised to unit sum,
/// written as `max Φ + log1p(Σ_q w_q expm1(Φ_q − max Φ))` so that `θ = 0`
/// gives exactly 0.
fn log_partition(node_design: &[f64], weights: &[f64], theta: &[f64]) -> Option<f64> {
    let z = phi_at_nodes(node_design, theta);
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let s: f64 = z
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - top).exp_m1())
        .sum();
    let a = top + s.ln_1p();
    a.is_finite().then_some(a)
}

/// Quadrature weights of `p_θ`: `w_q exp(Φ(θ)(x_q) − A(θ))`.
fn tilt(node_design: &[f64], weights: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
    let a = log_partition(node_design, weights, theta)?;
    Some(
        phi_at_nodes(node_design, theta)
            .iter()
            .zip(weights)
            .map(|(f, w)| w * (f - a).exp())
            .collect(),
    )
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let nv = norm(&v);
        if nv > 1e-300 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

/// A uniform draw from the Euclidean ball `B(center, radius)`.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let p = center.len();
    let dir = random_unit(rng, p);
    let r = radius * rng.random::<f64>().powf(1.0 / p as f64);
    center.iter().zip(dir).map(|(c, d)| c + r * d).collect()
}

/// Empirical curvature of `ℓ_n` on a ball around a centre.
///
/// Extremes are over `-vᵀ∇²ℓ_n(θ)v` for `2p` random unit directions and the
/// `p` coordinate directions at each probe point, plus the exact spectrum of
/// `-∇²ℓ_n(θ)` when `p ≤ 16`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub lambda_min_est: f64,
    pub lambda_max_est: f64,
    pub grad_norm_at_center: f64,
    /// Probe points that entered the estimates.
    pub n_probes: usize,
    /// Probe points discarded because the likelihood overflowed.
    pub excluded: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub full_spectrum: bool,
}
