//! Ground truth and empirical checks: tensor-grid posteriors for `p ≤ 2`,
//! exact empirical Wasserstein-2, contraction and recovery metrics,
//! condition numbers and exit-time summaries.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::rng_from_seed;
use crate::sampler::ChainTrace;
use crate::surrogate::{LogTarget, SurrogateSpec};
use crate::{distance, dot};
use rand::Rng;

/// Largest sample count accepted by [`empirical_w2`].
pub const MAX_W2_SAMPLES: usize = 2048;

/// Mass allowed on the outer nodes of a grid posterior.
pub const BOUNDARY_MASS_TOL: f64 = 1e-8;

/// A posterior tabulated on a tensor grid with trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
    /// Unnormalised log-density at the nodes, first axis slowest.
    pub log_values: Vec<f64>,
    /// Normalised trapezoid weights; sum to 1.
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    /// Row-major `p × p`.
    pub cov: Vec<f64>,
    /// Total weight on the outer nodes.
    pub boundary_mass: f64,
}

fn axis(bounds: (f64, f64), n: usize) -> Vec<f64> {
    let h = (bounds.1 - bounds.0) / (n - 1) as f64;
    (0..n).map(|i| bounds.0 + i as f64 * h).collect()
}

fn trapezoid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i == 0 || i + 1 == n { 0.5 } else { 1.0 })
        .collect()
}

impl GridPosterior {
    /// Evaluates `target` on the grid. Fails with suggested wider bounds if
    /// more than [`BOUNDARY_MASS_TOL`] of the mass sits on the boundary.
    pub fn new(
        target: &dyn LogTarget,
        bounds: &[(f64, f64)],
        resolution: &[usize],
    ) -> Result<Self> {
        let p = target.dim();
        if !(1..=2).contains(&p) {
            return Err(Error::Config(format!(
                "grid posterior supports p ≤ 2, got p = {p}"
            )));
        }
        check_len("grid bounds", p, bounds.len())?;
        check_len("grid resolution", p, resolution.len())?;
        for (&(lo, hi), &r) in bounds.iter().zip(resolution) {
            if !(hi > lo) || r < 3 {
                return Err(Error::Config(format!(
                    "bad grid axis [{lo}, {hi}] with {r} nodes"
                )));
            }
        }
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .zip(resolution)
            .map(|(&b, &r)| axis(b, r))
            .collect();
        let trap: Vec<Vec<f64>> = resolution.iter().map(|&r| trapezoid(r)).collect();
        let total: usize = resolution.iter().product();
        let mut log_values = Vec::with_capacity(total);
        let mut log_w = Vec::with_capacity(total);
        let mut points = Vec::with_capacity(total);
        let mut on_edge = Vec::with_capacity(total);
        for idx in 0..total {
            let (i, j) = if p == 1 {
                (idx, 0)
            } else {
                (idx / resolution[1], idx % resolution[1])
            };
            let pt: Vec<f64> = if p == 1 {
                vec![axes[0][i]]
            } else {
                vec![axes[0][i], axes[1][j]]
            };
            let lv = target.log_density(&pt)?;
            let tw = if p == 1 {
                trap[0][i]
            } else {
                trap[0][i] * trap[1][j]
            };
            let edge =
                i == 0 || i + 1 == resolution[0] || (p == 2 && (j == 0 || j + 1 == resolution[1]));
            log_values.push(lv);
            log_w.push(lv + tw.ln());
            points.push(pt);
            on_edge.push(edge);
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::Numeric(
                "grid posterior has no finite log-density values".into(),
            ));
        }
        let mut weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        let boundary_mass: f64 = weights
            .iter()
            .zip(&on_edge)
            .filter(|(_, e)| **e)
            .map(|(w, _)| w)
            .sum();
        let mut mean = vec![0.0; p];
        for (pt, w) in points.iter().zip(&weights) {
            mean.iter_mut().zip(pt).for_each(|(m, x)| *m += w * x);
        }
        let mut cov = vec![0.0; p * p];
        for (pt, w) in points.iter().zip(&weights) {
            for a in 0..p {
                for b in 0..p {
                    cov[a * p + b] += w * (pt[a] - mean[a]) * (pt[b] - mean[b]);
                }
            }
        }
        if boundary_mass >= BOUNDARY_MASS_TOL {
            let suggested = bounds
                .iter()
                .map(|&(lo, hi)| {
                    let c = 0.5 * (lo + hi);
                    let w = hi - lo;
                    (c - w, c + w)
                })
                .collect();
            return Err(Error::GridBounds {
                boundary_mass,
                suggested,
            });
        }
        Ok(Self {
            bounds: bounds.to_vec(),
            resolution: resolution.to_vec(),
            log_values,
            weights,
            mean,
            cov,
            boundary_mass,
        })
    }

    pub fn p(&self) -> usize {
        self.bounds.len()
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.cov[k * self.p() + k]
    }

    /// Cell masses: average of the normalised corner densities times the
    /// cell volume, renormalised.
    fn cell_masses(&self) -> Vec<f64> {
        let density: Vec<f64> = {
            let top = self
                .log_values
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            self.log_values.iter().map(|l| (l - top).exp()).collect()
        };
        let mut cells = Vec::new();
        if self.p() == 1 {
            for w in density.windows(2) {
                cells.push(0.5 * (w[0] + w[1]));
            }
        } else {
            let (r0, r1) = (self.resolution[0], self.resolution[1]);
            for i in 0..r0 - 1 {
                for j in 0..r1 - 1 {
                    let d = |a: usize, b: usize| density[a * r1 + b];
                    cells.push(0.25 * (d(i, j) + d(i + 1, j) + d(i, j + 1) + d(i + 1, j + 1)));
                }
            }
        }
        let z: f64 = cells.iter().sum();
        cells.iter_mut().for_each(|c| *c /= z);
        cells
    }

    /// Inverse-CDF draws driven by the given uniforms (`p` per draw). Equal
    /// uniforms give coupled draws across grids with the same layout.
    pub fn sample_from_uniforms(&self, uniforms: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let cells = self.cell_masses();
        let p = self.p();
        let h: Vec<f64> = self
            .bounds
            .iter()
            .zip(&self.resolution)
            .map(|(&(lo, hi), &r)| (hi - lo) / (r - 1) as f64)
            .collect();
        if p == 1 {
            let cdf = cumulative(&cells);
            uniforms
                .iter()
                .map(|u| {
                    let (i, frac) = invert(&cdf, u[0]);
                    vec![self.bounds[0].0 + (i as f64 + frac) * h[0]]
                })
                .collect()
        } else {
            let c1 = self.resolution[1] - 1;
            let marginal: Vec<f64> = cells.chunks(c1).map(|row| row.iter().sum()).collect();
            let mcdf = cumulative(&marginal);
            let conditional: Vec<Vec<f64>> = cells
                .chunks(c1)
                .map(|row| {
                    let z: f64 = row.iter().sum();
                    cumulative(
                        &row.iter()
                            .map(|c| c / z.max(f64::MIN_POSITIVE))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            uniforms
                .iter()
                .map(|u| {
                    let (i, fi) = invert(&mcdf, u[0]);
                    let (j, fj) = invert(&conditional[i], u[1]);
                    vec![
                        self.bounds[0].0 + (i as f64 + fi) * h[0],
                        self.bounds[1].0 + (j as f64 + fj) * h[1],
                    ]
                })
                .collect()
        }
    }

    /// `count` inverse-CDF draws, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        self.sample_from_uniforms(&uniforms(count, self.p(), seed))
    }
}

/// `count × dim` uniforms on `[0, 1)`, deterministic in `seed`.
pub fn uniforms(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

fn cumulative(masses: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(masses.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for m in masses {
        acc += m;
        out.push(acc);
    }
    let total = acc;
    out.iter_mut().for_each(|c| *c /= total);
    out
}

/// Cell index and fractional position of quantile `u` under a piecewise
/// uniform law with cumulative table `cdf`.
fn invert(cdf: &[f64], u: f64) -> (usize, f64) {
    let cells = cdf.len() - 1;
    let i = cdf.partition_point(|&c| c <= u).clamp(1, cells) - 1;
    let (lo, hi) = (cdf[i], cdf[i + 1]);
    let frac = if hi > lo {
        ((u - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    (i, frac)
}

/// Total-variation distance `½ Σ |w_a − w_b|` between grids of equal layout.
pub fn tv_distance(a: &GridPosterior, b: &GridPosterior) -> Result<f64> {
    if a.bounds != b.bounds || a.resolution != b.resolution {
        return Err(Error::Config(
            "total variation needs identical grids".into(),
        ));
    }
    Ok(0.5
        * a.weights
            .iter()
            .zip(&b.weights)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>())
}

/// Minimum-cost perfect matching of a square cost matrix (row-major) by the
/// Hungarian algorithm with potentials, `O(N³)`. Returns `assignment[row] = col`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials formulation; column 0 is a sentinel
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched[j] > 0 {
            assignment[matched[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exact `W₂` between two empirical measures with `N` atoms each:
/// `(min_σ (1/N) Σ ‖a_i − b_σ(i)‖²)^{1/2}`.
pub fn empirical_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    check_len("second sample set", n, b.len())?;
    if n == 0 {
        return Err(Error::Config(
            "empirical W2 needs at least one sample".into(),
        ));
    }
    if n > MAX_W2_SAMPLES {
        return Err(Error::Config(format!(
            "empirical W2 supports N ≤ {MAX_W2_SAMPLES}, got {n}"
        )));
    }
    let mut cost = Vec::with_capacity(n * n);
    for x in a {
        for y in b {
            let d = distance(x, y);
            cost.push(d * d);
        }
    }
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Fraction of samples with `‖θ − center‖^β > L δ_n`.
pub fn contraction_metric(
    samples: &[Vec<f64>],
    center: &[f64],
    beta: f64,
    l: f64,
    delta_n: f64,
) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let thr = l * delta_n;
    let out = samples
        .iter()
        .filter(|s| distance(s, center).powf(beta) > thr)
        .count();
    out as f64 / samples.len() as f64
}

/// Post-burn-in stored states of a trace.
pub fn post_burn_in(trace: &ChainTrace) -> Vec<Vec<f64>> {
    if trace.stride == 0 {
        return Vec::new();
    }
    trace
        .states
        .iter()
        .enumerate()
        .filter(|(i, _)| i * trace.stride > trace.j_in)
        .map(|(_, s)| s.clone())
        .collect()
}

/// `(Λ/m, Λ_π/m_π)` for a surrogate posterior.
pub fn condition_numbers(spec: &SurrogateSpec) -> (f64, f64) {
    (
        spec.constants.lambda / spec.constants.m,
        spec.prior.condition_number(),
    )
}

/// Exit-time summary of an ensemble of chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeStats {
    pub n_traces: usize,
    pub n_exited: usize,
    /// Fraction of chains that left `B̃` within their `J_in + J` steps.
    pub fraction_exited: f64,
    /// Fraction that left within the first `J` steps.
    pub fraction_exited_by_j: f64,
    pub min: Option<usize>,
    pub median: Option<f64>,
    pub q90: Option<f64>,
    pub max: Option<usize>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn exit_time_stats(traces: &[ChainTrace]) -> Result<ExitTimeStats> {
    if traces.len() < 10 {
        return Err(Error::Config(format!(
            "exit-time statistics need at least 10 traces, got {}",
            traces.len()
        )));
    }
    let mut steps: Vec<usize> = traces.iter().filter_map(|t| t.exit_step).collect();
    steps.sort_unstable();
    let n = traces.len();
    let by_j = traces
        .iter()
        .filter(|t| t.exit_step.is_some_and(|k| k <= t.j))
        .count();
    let sorted: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    Ok(ExitTimeStats {
        n_traces: n,
        n_exited: steps.len(),
        fraction_exited: steps.len() as f64 / n as f64,
        fraction_exited_by_j: by_j as f64 / n as f64,
        min: steps.first().copied(),
        median: (!sorted.is_empty()).then(|| quantile(&sorted, 0.5)),
        q90: (!sorted.is_empty()).then(|| quantile(&sorted, 0.9)),
        max: steps.last().copied(),
    })
}

/// Least-squares slope and intercept of `log y` against `log x`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_len("log-log ordinates", x.len(), y.len())?;
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain(
            "log-log fit needs at least two positive points".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("log-log fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Posterior-mean recovery across a grid of sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_grid: Vec<usize>,
    /// `‖posterior mean − θ₀‖` per `n`.
    pub errors: Vec<f64>,
    /// Fitted slope of `log error` against `log n`.
    pub slope: f64,
    pub intercept: f64,
    /// `α/(2α+1)`; the errors should decay like `n^{-target_rate}`.
    pub target_rate: f64,
}

impl RecoveryReport {
    pub fn fit(n_grid: &[usize], errors: &[f64], alpha: f64) -> Result<Self> {
        let x: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
        let (slope, intercept) = log_log_fit(&x, errors)?;
        Ok(Self {
            n_grid: n_grid.to_vec(),
            errors: errors.to_vec(),
            slope,
            intercept,
            target_rate: alpha / (2.0 * alpha + 1.0),
        })
    }
}

/// Sample mean and the standard error of the mean from independent replicates.
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `‖a − b‖` helper for reports.
pub fn error_norm(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    dot(&d, &d).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::sampler::Functional;
    use rand_distr::StandardNormal;

    struct Normal1 {
        mu: f64,
        var: f64,
    }

    impl LogTarget for Normal1 {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, t: &[f64]) -> Result<f64> {
            Ok(-(t[0] - self.mu).powi(2) / (2.0 * self.var))
        }
        fn grad_into(&self, t: &[f64], out: &mut [f64]) -> Result<bool> {
            out[0] = -(t[0] - self.mu) / self.var;
            Ok(true)
        }
    }

    struct Normal2;

    impl LogTarget for Normal2 {
        fn dim(&self) -> usize {
            2
        }
        fn log_density(&self, t: &[f64]) -> Result<f64> {
            // correlation 0.5, unit variances
            let (x, y) = (t[0] - 1.0, t[1] + 0.5);
            Ok(-(x * x - x * y + y * y) / (2.0 * 0.75))
        }
        fn grad_into(&self, _: &[f64], _: &mut [f64]) -> Result<bool> {
            unimplemented!()
        }
    }

    #[test]
    fn grid_moments_of_gaussians() {
        let g =
            GridPosterior::new(&Normal1 { mu: 0.3, var: 0.04 }, &[(-1.5, 2.1)], &[1024]).unwrap();
        assert!((g.mean[0] - 0.3).abs() < 1e-10);
        assert!((g.variance(0) - 0.04).abs() < 1e-8);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let coarse =
            GridPosterior::new(&Normal1 { mu: 0.3, var: 0.04 }, &[(-1.5, 2.1)], &[512]).unwrap();
        assert!((coarse.mean[0] - g.mean[0]).abs() < 1e-8);

        let g2 = GridPosterior::new(&Normal2, &[(-8.0, 10.0), (-9.5, 8.5)], &[301, 301]).unwrap();
        assert!((g2.mean[0] - 1.0).abs() < 1e-8 && (g2.mean[1] + 0.5).abs() < 1e-8);
        assert!((g2.cov[1] - 0.5).abs() < 1e-6 && (g2.cov[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn narrow_grid_suggests_wider_bounds() {
        let err =
            GridPosterior::new(&Normal1 { mu: 0.0, var: 1.0 }, &[(-1.0, 1.0)], &[101]).unwrap_err();
        match err {
            Error::GridBounds {
                boundary_mass,
                suggested,
            } => {
                assert!(boundary_mass > 1e-8);
                assert_eq!(suggested, vec![(-2.0, 2.0)]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn grid_sampling_reproduces_moments() {
        let g = GridPosterior::new(
            &Normal1 {
                mu: -0.2,
                var: 0.25,
            },
            &[(-4.0, 4.0)],
            &[801],
        )
        .unwrap();
        let s = g.sample(20_000, 3);
        let m = s.iter().map(|x| x[0]).sum::<f64>() / 2e4;
        assert!((m + 0.2).abs() < 3.0 * 0.5 / 2e4f64.sqrt());
        let g2 = GridPosterior::new(&Normal2, &[(-8.0, 10.0), (-9.5, 8.5)], &[201, 201]).unwrap();
        let s = g2.sample(20_000, 4);
        let mx = s.iter().map(|x| x[0]).sum::<f64>() / 2e4;
        let my = s.iter().map(|x| x[1]).sum::<f64>() / 2e4;
        assert!((mx - 1.0).abs() < 0.03 && (my + 0.5).abs() < 0.03);
        let cxy = s.iter().map(|x| (x[0] - mx) * (x[1] - my)).sum::<f64>() / 2e4;
        assert!((cxy - 0.5).abs() < 0.05);
    }

    #[test]
    fn tv_of_identical_and_shifted_grids() {
        let a = GridPosterior::new(&Normal1 { mu: 0.0, var: 0.1 }, &[(-3.0, 3.0)], &[601]).unwrap();
        let b = GridPosterior::new(&Normal1 { mu: 0.0, var: 0.1 }, &[(-3.0, 3.0)], &[601]).unwrap();
        assert_eq!(tv_distance(&a, &b).unwrap(), 0.0);
        let c = GridPosterior::new(&Normal1 { mu: 0.1, var: 0.1 }, &[(-3.0, 3.0)], &[601]).unwrap();
        let tv = tv_distance(&a, &c).unwrap();
        // 2Φ(δ/(2σ)) − 1 for a mean shift δ
        assert!((tv - 0.12563).abs() < 1e-3, "{tv}");
    }

    fn normals(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    fn sorted_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut x: Vec<f64> = a.iter().map(|v| v[0]).collect();
        let mut y: Vec<f64> = b.iter().map(|v| v[0]).collect();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        (x.iter().zip(&y).map(|(s, t)| (s - t).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn w2_examples() {
        let a = normals(64, 2, 1);
        assert_eq!(empirical_w2(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 0.3, v[1] - 0.4]).collect();
        assert!((empirical_w2(&a, &shifted).unwrap() - 0.5).abs() < 1e-12);
        assert!(empirical_w2(&a, &a[..10]).is_err());
    }

    #[test]
    fn w2_matches_sorted_coupling_in_one_dimension() {
        let mut below = 0;
        for seed in 0..10 {
            let a = normals(1024, 1, 100 + seed);
            let b = normals(1024, 1, 200 + seed);
            let w = empirical_w2(&a, &b).unwrap();
            assert!((w - sorted_w2(&a, &b)).abs() < 1e-12);
            if w < 0.1 {
                below += 1;
            }
        }
        assert_eq!(below, 10);
    }

    #[test]
    fn w2_is_a_metric_on_samples() {
        for seed in 0..10 {
            let a = normals(40, 2, seed);
            let b = normals(40, 2, seed + 50);
            let c: Vec<Vec<f64>> = normals(40, 2, seed + 99)
                .iter()
                .map(|v| vec![v[0] * 2.0, v[1] + 1.0])
                .collect();
            let ab = empirical_w2(&a, &b).unwrap();
            assert!((ab - empirical_w2(&b, &a).unwrap()).abs() < 1e-12);
            let bc = empirical_w2(&b, &c).unwrap();
            let ac = empirical_w2(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn contraction_metric_limits_and_monotonicity() {
        let center = vec![0.0, 0.0];
        let at_center = vec![center.clone(); 10];
        assert_eq!(contraction_metric(&at_center, &center, 1.0, 1.0, 0.1), 0.0);
        let s = normals(500, 2, 7);
        assert_eq!(contraction_metric(&s, &center, 1.0, 1e-300, 0.1), 1.0);
        let mut last = 1.0;
        for l in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0] {
            let f = contraction_metric(&s, &center, 1.0, l, 0.1);
            assert!(f <= last);
            last = f;
        }
    }

    #[test]
    fn exit_stats_on_ensembles() {
        let base = ChainTrace::from_states(vec![vec![0.0]; 3], 1, &[Functional::Identity]).unwrap();
        let none: Vec<ChainTrace> = (0..10).map(|_| base.clone()).collect();
        let s = exit_time_stats(&none).unwrap();
        assert_eq!(s.fraction_exited, 0.0);
        assert_eq!(s.median, None);
        let all: Vec<ChainTrace> = (0..10)
            .map(|k| ChainTrace {
                exit_step: Some(k + 1),
                ..base.clone()
            })
            .collect();
        let s = exit_time_stats(&all).unwrap();
        assert_eq!(s.fraction_exited, 1.0);
        assert_eq!(s.median, Some(5.5));
        assert!(exit_time_stats(&all[..5]).is_err());
    }

    #[test]
    fn log_log_slope_recovers_power_laws() {
        let x = [4.0, 16.0, 64.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.5)).collect();
        let (s, c) = log_log_fit(&x, &y).unwrap();
        assert!((s - 0.5).abs() < 1e-12 && (c - 3f64.ln()).abs() < 1e-12);
        let r =
            RecoveryReport::fit(&[100, 1000], &[0.1, 0.1 * 10f64.powf(-1.0 / 3.0)], 1.0).unwrap();
        assert!((r.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!((r.target_rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn replicate_standard_error() {
        let (m, se) = mean_and_standard_error(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
