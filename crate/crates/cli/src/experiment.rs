//! The experiment pipeline.
//!
//! Each `(n, data seed)` cell generates data, builds the model, probes the
//! curvature, builds the surrogate, resolves `γ` and `J_in`, runs its chains
//! and computes diagnostics. Cells run on a thread pool and write one JSON
//! record each under `cells/`; a single-threaded reducer then merges the
//! records in cell order into `report.csv`, `recovery.csv` and
//! `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use langevin_surrogate::basis::BasisFamily;
use langevin_surrogate::diagnostics::{
    contraction_metric, empirical_w2, mean_and_standard_error, quantile, tv_distance, uniforms,
    GridPosterior, RecoveryReport,
};
use langevin_surrogate::family::{ExpFamily, LinkFunction};
use langevin_surrogate::forward::{DarcyOperator, ForwardOperator};
use langevin_surrogate::likelihood::{CurvatureReport, Dataset, ModelInstance, ModelSpec};
use langevin_surrogate::prior::SievePrior;
use langevin_surrogate::rng::derive_seed;
use langevin_surrogate::sampler::{
    burn_in_steps, discretization_bias, ergodic_average, precision_floor, run_chain,
    step_size_bound, ChainTrace, ExitRegion, Functional, Guard, SamplerConfig, Variant,
};
use langevin_surrogate::surrogate::{
    c_max_hat, contraction_rate, k_from_c_max, CutoffV, LogTarget, SurrogateSpec,
};
use langevin_surrogate::{distance, Error};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    BurnInRule, ExperimentConfig, GammaRule, InitSpec, ModelKind, StepBound, VariantSelection,
};
use crate::error::{CliError, CliResult};
use crate::init::{oracle_perturbed, oracle_projection, pilot_ascent};

/// Which parts of the pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub chains: bool,
    pub diagnostics: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        chains: true,
        diagnostics: true,
    };
}

/// One point of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub p: usize,
    pub data_seed: u64,
}

/// The `n_grid × data_seeds` matrix in row-major order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in &cfg.experiment.n_grid {
        let p = cfg.experiment.p.resolve(n, cfg.prior.alpha);
        for &data_seed in &cfg.experiment.data_seeds {
            out.push(Cell {
                index: out.len(),
                n,
                p,
                data_seed,
            });
        }
    }
    out
}

/// Summary of the curvature probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub lambda_min_est: f64,
    pub lambda_max_est: f64,
    pub grad_norm_at_center: f64,
    pub n_probes: usize,
    pub excluded: usize,
}

impl From<&CurvatureReport> for ProbeSummary {
    fn from(r: &CurvatureReport) -> Self {
        Self {
            lambda_min_est: r.lambda_min_est,
            lambda_max_est: r.lambda_max_est,
            grad_norm_at_center: r.grad_norm_at_center,
            n_probes: r.n_probes,
            excluded: r.excluded,
        }
    }
}

/// Every number a cell's formulas use, fixed before any chain starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCell {
    pub cell: Cell,
    pub alpha: f64,
    pub delta_n: f64,
    pub eta: f64,
    pub exit_radius: f64,
    pub probe: ProbeSummary,
    pub c_max_hat: f64,
    pub k_floor: f64,
    pub k: f64,
    pub m_tilde: f64,
    pub lambda_tilde: f64,
    pub m_pi: f64,
    pub lambda_pi: f64,
    pub m: f64,
    pub lambda: f64,
    pub gamma_sampling_bound: f64,
    pub gamma_exit_bound: f64,
    pub gamma: f64,
    pub epsilon: Option<f64>,
    pub precision_floor: f64,
    pub discretization_bias: f64,
    pub j_in: usize,
    pub j: usize,
    pub init_mode: String,
    /// `‖θ_init − θ_{*,p}‖/η`.
    pub init_offset_ratio: f64,
    pub theta_init: Vec<f64>,
    pub center: Vec<f64>,
    pub chain_seeds: Vec<u64>,
    pub contraction_beta: f64,
}

/// A cell ready to sample.
pub struct PreparedCell {
    pub resolved: ResolvedCell,
    pub truth: Vec<f64>,
    pub spec: SurrogateSpec,
}

/// The structural model for dimension `p`.
pub fn model_spec(cfg: &ExperimentConfig, p: usize) -> CliResult<ModelSpec> {
    let m = &cfg.model;
    let basis = BasisFamily::new(m.basis_kind(), p)?;
    Ok(match m.kind {
        ModelKind::Glm => ModelSpec::Regression {
            family: ExpFamily::new(m.family),
            link: LinkFunction { kind: m.link },
            forward: ForwardOperator::LinearPhi(basis),
        },
        ModelKind::Darcy => ModelSpec::Regression {
            family: ExpFamily::new(m.family),
            link: LinkFunction { kind: m.link },
            forward: ForwardOperator::Darcy(DarcyOperator::new(basis, &m.darcy.params())?),
        },
        ModelKind::Density => ModelSpec::Density {
            basis,
            quadrature_nodes: m.quadrature_nodes,
        },
    })
}

/// The cell's dataset.
pub fn generate_cell_data(cfg: &ExperimentConfig, cell: &Cell) -> CliResult<Dataset> {
    let spec = model_spec(cfg, cell.p)?;
    Ok(spec.generate(&cfg.model.theta0.resolve(), cell.n, cell.data_seed)?)
}

/// Seed of replicate `r` in `cell`; shared by the surrogate and vanilla chains.
pub fn chain_seed(cfg: &ExperimentConfig, cell: &Cell, r: usize) -> u64 {
    let base = derive_seed(
        cfg.sampler.chain_seed,
        &format!("cell:{}:{}", cell.n, cell.data_seed),
    );
    derive_seed(base, &format!("replicate:{r}"))
}

/// Shape exponent `β` of the contraction metric.
pub fn contraction_beta(kind: ModelKind, alpha: f64) -> f64 {
    match kind {
        ModelKind::Darcy if alpha > 1.0 => (alpha + 1.0) / (alpha - 1.0),
        _ => 1.0,
    }
}

/// Builds data, model, probe and surrogate for `cell` and resolves every rule.
pub fn resolve_cell(cfg: &ExperimentConfig, cell: &Cell) -> CliResult<PreparedCell> {
    let (n, p) = (cell.n, cell.p);
    let alpha = cfg.prior.alpha;
    let preset = cfg.model.kind.preset();
    let truth = cfg.model.theta0.resolve();
    let spec = model_spec(cfg, p)?;
    let data = spec.generate(&truth, n, cell.data_seed)?;
    let model = Arc::new(ModelInstance::new(spec, data)?);
    let prior = SievePrior::new(alpha, n, p)?;
    let center = oracle_projection(&truth, p);
    let s = &cfg.surrogate;
    let eta = s.eta.unwrap_or_else(|| preset.eta(p)) * s.eta_scale;
    let delta_n = contraction_rate(n, alpha);
    let probe = model.curvature_probe(
        &center,
        eta,
        s.probe_points,
        derive_seed(cell.data_seed, "probe"),
    )?;
    let exps = preset.exponents();
    let c_max = match s.c_max {
        Some(c) => c,
        None => c_max_hat(&probe, n, p, delta_n, exps)?,
    };
    let cutoff = CutoffV::new();
    let kc = k_from_c_max(c_max, &cutoff, n, p, exps, s.k_override);
    let (theta_init, init_mode) = match s.init {
        InitSpec::OracleProjection => (center.clone(), "oracle-projection".to_string()),
        InitSpec::OraclePerturbed { rho_fraction } => (
            oracle_perturbed(
                &center,
                eta,
                rho_fraction,
                derive_seed(cell.data_seed, "init"),
            ),
            format!("oracle-perturbed(rho_fraction={rho_fraction})"),
        ),
        InitSpec::PilotAscent { steps, rate } => {
            let vanilla = langevin_surrogate::surrogate::VanillaPosterior {
                model: model.clone(),
                prior: prior.clone(),
            };
            let r = pilot_ascent(&vanilla, steps, rate)?;
            let ratio = r.offset_ratio(&center, eta);
            if ratio > 0.125 {
                log::warn!(
                    "cell {}: pilot ascent lands at ‖θ_init − θ_*‖/η = {ratio:.3} > 1/8",
                    cell.index
                );
            }
            (r.theta, format!("pilot-ascent(steps={steps}, rate={rate})"))
        }
    };
    let surrogate = SurrogateSpec::new(
        model,
        prior,
        theta_init.clone(),
        center.clone(),
        eta,
        kc.k,
        probe.lambda_min_est,
    )?;
    let c = surrogate.constants;
    let (b_sampling, b_exit) = step_size_bound(c.m, c.lambda)?;
    let GammaRule::FractionOfBound { bound, fraction } = cfg.sampler.gamma;
    let gamma = fraction
        * match bound {
            StepBound::Sampling => b_sampling,
            StepBound::ExitTime => b_exit,
        };
    let bias = discretization_bias(gamma, p, c.m, c.lambda);
    let floor = precision_floor(n, delta_n, bias);
    let (j_in, epsilon) = match cfg.sampler.j_in {
        BurnInRule::Fixed { steps } => (steps, None),
        BurnInRule::Precision { epsilon, c_w } => {
            if epsilon < floor {
                log::warn!(
                    "cell {}: precision ε = {epsilon:e} is below the attainable floor {floor:e}",
                    cell.index
                );
            }
            (
                burn_in_steps(epsilon, c.m, gamma, eta, surrogate.prior.lambda_pi, p, c_w)?,
                Some(epsilon),
            )
        }
    };
    let resolved = ResolvedCell {
        cell: *cell,
        alpha,
        delta_n,
        eta,
        exit_radius: surrogate.exit_radius(),
        probe: ProbeSummary::from(&probe),
        c_max_hat: c_max,
        k_floor: kc.floor,
        k: kc.k,
        m_tilde: c.m_tilde,
        lambda_tilde: c.lambda_tilde,
        m_pi: surrogate.prior.m_pi,
        lambda_pi: surrogate.prior.lambda_pi,
        m: c.m,
        lambda: c.lambda,
        gamma_sampling_bound: b_sampling,
        gamma_exit_bound: b_exit,
        gamma,
        epsilon,
        precision_floor: floor,
        discretization_bias: bias,
        j_in,
        j: cfg.sampler.j,
        init_mode,
        init_offset_ratio: distance(&theta_init, &center) / eta,
        theta_init,
        center,
        chain_seeds: (0..cfg.sampler.replicates)
            .map(|r| chain_seed(cfg, cell, r))
            .collect(),
        contraction_beta: contraction_beta(cfg.model.kind, alpha),
    };
    Ok(PreparedCell {
        resolved,
        truth,
        spec: surrogate,
    })
}

/// `‖Φ(θ) − Φ(θ₀)‖_{L²}` for a truth that may be longer than `θ`.
pub fn function_error(theta: &[f64], truth: &[f64]) -> f64 {
    let len = theta.len().max(truth.len());
    (0..len)
        .map(|k| {
            let d = theta.get(k).copied().unwrap_or(0.0) - truth.get(k).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: usize,
    pub n: usize,
    pub p: usize,
    pub data_seed: u64,
    pub variant: String,
    pub status: String,
    pub replicates: usize,
    pub gamma: Option<f64>,
    pub j_in: Option<usize>,
    pub j: Option<usize>,
    pub eta: Option<f64>,
    pub k: Option<f64>,
    pub m: Option<f64>,
    pub lambda: Option<f64>,
    pub condition_number: Option<f64>,
    pub prior_condition_number: Option<f64>,
    /// Ergodic mean pooled over replicates, `;`-separated.
    pub posterior_mean: Option<String>,
    /// Largest between-replicate standard error over coordinates.
    pub mc_standard_error: Option<f64>,
    pub error_l2: Option<f64>,
    pub exited_chains: Option<usize>,
    pub median_exit_step: Option<f64>,
    pub guard_triggers: Option<usize>,
    pub contraction_fraction: Option<f64>,
    /// Largest coordinate gap to the grid mean in standard errors.
    pub grid_z: Option<f64>,
    pub grid_mean: Option<String>,
    pub grid_sd: Option<f64>,
    pub grid_tv: Option<f64>,
    pub grid_w2: Option<f64>,
    pub grid_w2_over_sd: Option<f64>,
    /// Largest gap between seed-matched surrogate and vanilla iterates up
    /// to the surrogate exit step.
    pub coincidence_max_gap: Option<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// A cell's record as written under `cells/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: Cell,
    pub resolved: Option<ResolvedCell>,
    pub rows: Vec<ReportRow>,
    pub error: Option<String>,
    /// Posterior-mean error of the surrogate chains, for the recovery fit.
    pub recovery_error: Option<f64>,
    pub trace_files: Vec<String>,
}

/// Grid ground truth of a prepared cell.
pub struct GridSummary {
    pub surrogate: GridPosterior,
    pub truth: Option<GridPosterior>,
    pub tv: Option<f64>,
    pub w2: Option<f64>,
}

fn total_sd(g: &GridPosterior) -> f64 {
    (0..g.p()).map(|k| g.variance(k)).sum::<f64>().sqrt()
}

/// Grids of the surrogate and true posteriors on common bounds, widening the
/// bounds until the surrogate grid holds its mass.
pub fn grid_summary(cfg: &ExperimentConfig, prepared: &PreparedCell) -> CliResult<GridSummary> {
    let d = &cfg.experiment.diagnostics;
    let spec = &prepared.spec;
    let half = d.grid_halfwidth / spec.constants.m.sqrt();
    let mut bounds: Vec<(f64, f64)> = spec
        .theta_init
        .iter()
        .map(|&c| (c - half, c + half))
        .collect();
    let res = vec![d.grid_resolution; spec.p()];
    let mut attempt = 0;
    let surrogate = loop {
        match GridPosterior::new(spec, &bounds, &res) {
            Ok(g) => break g,
            Err(Error::GridBounds { suggested, .. }) if attempt < 6 => {
                bounds = suggested;
                attempt += 1;
            }
            Err(e) => return Err(e.into()),
        }
    };
    let vanilla = spec.vanilla();
    let truth = match GridPosterior::new(&vanilla, &bounds, &res) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("true-posterior grid unavailable on the surrogate bounds: {e}");
            None
        }
    };
    let tv = truth
        .as_ref()
        .map(|t| tv_distance(&surrogate, t))
        .transpose()?;
    let w2 = match (&truth, d.w2_samples) {
        (Some(t), n) if n > 0 => {
            let u = uniforms(
                n,
                spec.p(),
                derive_seed(prepared.resolved.cell.data_seed, "w2"),
            );
            Some(empirical_w2(
                &surrogate.sample_from_uniforms(&u),
                &t.sample_from_uniforms(&u),
            )?)
        }
        _ => None,
    };
    Ok(GridSummary {
        surrogate,
        truth,
        tv,
        w2,
    })
}

/// Runs one replicate of `variant`.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    prepared: &PreparedCell,
    variant: Variant,
    replicate: usize,
) -> CliResult<ChainTrace> {
    let r = &prepared.resolved;
    let mut sc = SamplerConfig::new(variant, r.gamma, r.j_in, r.j, r.chain_seeds[replicate]);
    sc.thinning_budget = cfg.output.thinning_budget;
    sc.guard = match variant {
        Variant::Surrogate => cfg.sampler.guard.unwrap_or(Guard::None),
        Variant::Vanilla => cfg
            .sampler
            .guard
            .expect("validated: vanilla chains declare a guard"),
    };
    let exit = ExitRegion {
        center: r.center.clone(),
        radius: r.exit_radius,
    };
    let vanilla;
    let target: &dyn LogTarget = match variant {
        Variant::Surrogate => &prepared.spec,
        Variant::Vanilla => {
            vanilla = prepared.spec.vanilla();
            &vanilla
        }
    };
    Ok(run_chain(
        target,
        &r.theta_init,
        &sc,
        &[Functional::Identity],
        Some(&exit),
    )?)
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Surrogate => "surrogate",
        Variant::Vanilla => "vanilla",
    }
}

fn post_burn_in(trace: &ChainTrace) -> impl Iterator<Item = &Vec<f64>> {
    let stride = trace.stride.max(1);
    let j_in = trace.j_in;
    trace
        .states
        .iter()
        .enumerate()
        .filter(move |(i, _)| i * stride > j_in)
        .map(|(_, s)| s)
}

/// Largest gap between stored iterates of two chains up to step `limit`.
pub fn max_gap_until(a: &ChainTrace, b: &ChainTrace, limit: Option<usize>) -> f64 {
    let stride = a.stride.max(1);
    a.states
        .iter()
        .zip(&b.states)
        .enumerate()
        .take_while(|(i, _)| limit.is_none_or(|l| i * stride <= l))
        .map(|(_, (x, y))| {
            x.iter()
                .zip(y)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn trace_csv(path: &Path, trace: &ChainTrace) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = trace.final_state.len();
    let mut header = vec!["step".to_string()];
    header.extend((1..=p).map(|k| format!("theta_{k}")));
    w.write_record(&header)?;
    for (i, s) in trace.states.iter().enumerate() {
        let mut rec = vec![(i * trace.stride).to_string()];
        rec.extend(s.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn base_row(cell: &Cell, variant: &str) -> ReportRow {
    ReportRow {
        cell: cell.index,
        n: cell.n,
        p: cell.p,
        data_seed: cell.data_seed,
        variant: variant.to_string(),
        ..Default::default()
    }
}

/// Runs every stage for one cell. Errors inside are reported in the record.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, stages: Stages, out: &Path) -> CellRecord {
    match run_cell_inner(cfg, cell, stages, out) {
        Ok(rec) => rec,
        Err(e) => {
            let msg = e.to_string();
            log::error!("cell {} failed: {msg}", cell.index);
            let mut row = base_row(cell, "surrogate");
            row.status = format!("error: {}", msg.replace('\n', " "));
            CellRecord {
                cell: *cell,
                resolved: None,
                rows: vec![row],
                error: Some(msg),
                recovery_error: None,
                trace_files: Vec::new(),
            }
        }
    }
}

fn run_cell_inner(
    cfg: &ExperimentConfig,
    cell: &Cell,
    stages: Stages,
    out: &Path,
) -> CliResult<CellRecord> {
    let prepared = resolve_cell(cfg, cell)?;
    let r = &prepared.resolved;
    let grid = if stages.diagnostics && cfg.experiment.diagnostics.grid {
        Some(grid_summary(cfg, &prepared)?)
    } else {
        None
    };
    let variants: Vec<Variant> = match cfg.sampler.variant {
        VariantSelection::Surrogate => vec![Variant::Surrogate],
        VariantSelection::Vanilla => vec![Variant::Vanilla],
        VariantSelection::Both => vec![Variant::Surrogate, Variant::Vanilla],
    };
    let mut rows = Vec::new();
    let mut trace_files = Vec::new();
    let mut recovery_error = None;
    let mut surrogate_traces: Vec<ChainTrace> = Vec::new();
    for &variant in &variants {
        let mut row = base_row(cell, variant_name(variant));
        row.status = "ok".into();
        row.replicates = cfg.sampler.replicates;
        row.gamma = Some(r.gamma);
        row.j_in = Some(r.j_in);
        row.j = Some(r.j);
        row.eta = Some(r.eta);
        row.k = Some(r.k);
        row.m = Some(r.m);
        row.lambda = Some(r.lambda);
        row.condition_number = Some(r.lambda / r.m);
        row.prior_condition_number = Some(prepared.spec.prior.condition_number());
        if let Some(g) = &grid {
            row.grid_mean = Some(join(&g.surrogate.mean));
            row.grid_sd = Some(total_sd(&g.surrogate));
            row.grid_tv = g.tv;
            row.grid_w2 = g.w2;
            row.grid_w2_over_sd = g.w2.map(|w| w / total_sd(&g.surrogate));
        }
        if stages.chains {
            let traces: Vec<ChainTrace> = (0..cfg.sampler.replicates)
                .map(|k| run_replicate(cfg, &prepared, variant, k))
                .collect::<CliResult<_>>()?;
            let p = cell.p;
            let means: Vec<Vec<f64>> = traces
                .iter()
                .map(|t| ergodic_average(t, "identity"))
                .collect::<Result<_, _>>()?;
            let mut pooled = vec![0.0; p];
            let mut se_max: Option<f64> = None;
            for k in 0..p {
                let col: Vec<f64> = means.iter().map(|m| m[k]).collect();
                let (mu, se) = mean_and_standard_error(&col);
                pooled[k] = mu;
                if se.is_finite() {
                    se_max = Some(se_max.map_or(se, |s: f64| s.max(se)));
                }
            }
            let err = function_error(&pooled, &prepared.truth);
            row.posterior_mean = Some(join(&pooled));
            row.mc_standard_error = se_max;
            row.error_l2 = Some(err);
            let mut exits: Vec<f64> = traces
                .iter()
                .filter_map(|t| t.exit_step.map(|s| s as f64))
                .collect();
            exits.sort_by(f64::total_cmp);
            row.exited_chains = Some(exits.len());
            row.median_exit_step = (!exits.is_empty()).then(|| quantile(&exits, 0.5));
            row.guard_triggers = Some(traces.iter().map(|t| t.guard_trigger_count).sum());
            if stages.diagnostics {
                let samples: Vec<Vec<f64>> = traces
                    .iter()
                    .flat_map(|t| post_burn_in(t).cloned())
                    .collect();
                if !samples.is_empty() {
                    row.contraction_fraction = Some(contraction_metric(
                        &samples,
                        &r.center,
                        r.contraction_beta,
                        cfg.experiment.diagnostics.contraction_l,
                        r.delta_n,
                    ));
                }
                if let (Some(g), Some(se)) = (&grid, se_max) {
                    let z = pooled
                        .iter()
                        .zip(&g.surrogate.mean)
                        .map(|(a, b)| (a - b).abs() / se)
                        .fold(0.0, f64::max);
                    row.grid_z = Some(z);
                }
            }
            if cfg.output.traces {
                let dir = out.join("traces");
                fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                for (k, t) in traces.iter().enumerate() {
                    let name = format!(
                        "cell_{:04}_{}_r{:02}.csv",
                        cell.index,
                        variant_name(variant),
                        k
                    );
                    trace_csv(&dir.join(&name), t)?;
                    trace_files.push(format!("traces/{name}"));
                }
            }
            match variant {
                Variant::Surrogate => {
                    recovery_error = Some(err);
                    surrogate_traces = traces;
                }
                Variant::Vanilla if !surrogate_traces.is_empty() => {
                    let gap = surrogate_traces
                        .iter()
                        .zip(&traces)
                        .map(|(s, v)| max_gap_until(s, v, s.exit_step))
                        .fold(0.0, f64::max);
                    row.coincidence_max_gap = Some(gap);
                }
                Variant::Vanilla => {}
            }
        }
        rows.push(row);
    }
    Ok(CellRecord {
        cell: *cell,
        resolved: Some(prepared.resolved),
        rows,
        error: None,
        recovery_error,
        trace_files,
    })
}

/// One line of `recovery.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub n: usize,
    pub p: usize,
    pub seeds: usize,
    pub median_error: f64,
    pub slope: f64,
    pub intercept: f64,
    pub target_rate: f64,
}

/// Build identity recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub package: String,
    pub version: String,
    pub target_os: String,
    pub target_arch: String,
}

impl BuildInfo {
    pub fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            target_os: std::env::consts::OS.into(),
            target_arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub build: BuildInfo,
    pub stages: Stages,
    pub config: ExperimentConfig,
    pub cells: Vec<ResolvedCell>,
    pub failed_cells: Vec<(usize, String)>,
    pub recovery: Option<RecoveryReport>,
    pub files: Vec<String>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub directory: PathBuf,
    pub records: Vec<CellRecord>,
    pub recovery: Option<RecoveryReport>,
    pub failed: usize,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.failed == 0
    }
}

/// Runs the configuration with `jobs` worker threads (0 uses all cores)
/// and writes everything under `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    stages: Stages,
    jobs: usize,
) -> CliResult<RunSummary> {
    cfg.validate()?;
    let cell_dir = out.join("cells");
    fs::create_dir_all(&cell_dir).map_err(|e| CliError::io(&cell_dir, e))?;
    let matrix = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| {
            CliError::Invalid(vec![format!("--jobs: cannot start the worker pool: {e}")])
        })?;
    let written: Vec<CliResult<()>> = pool.install(|| {
        matrix
            .par_iter()
            .map(|cell| {
                let rec = run_cell(cfg, cell, stages, out);
                let path = cell_dir.join(format!("cell_{:04}.json", cell.index));
                let text = serde_json::to_string_pretty(&rec)?;
                fs::write(&path, text).map_err(|e| CliError::io(&path, e))
            })
            .collect()
    });
    written.into_iter().collect::<CliResult<Vec<()>>>()?;
    reduce(cfg, out, stages, matrix.len())
}

/// Merges the per-cell records in cell order.
pub fn reduce(
    cfg: &ExperimentConfig,
    out: &Path,
    stages: Stages,
    count: usize,
) -> CliResult<RunSummary> {
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let path = out.join("cells").join(format!("cell_{i:04}.json"));
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        records.push(serde_json::from_str::<CellRecord>(&text)?);
    }
    let report = out.join("report.csv");
    let mut w = csv::Writer::from_path(&report)?;
    for row in records.iter().flat_map(|r| &r.rows) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(&report, e))?;
    let mut files = vec!["report.csv".to_string()];
    let recovery = if cfg.experiment.diagnostics.recovery && stages.chains {
        let summary = recovery_summary(cfg, &records)?;
        if let Some((rows, _)) = &summary {
            let path = out.join("recovery.csv");
            let mut w = csv::Writer::from_path(&path)?;
            for row in rows {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
            files.push("recovery.csv".into());
        }
        summary.map(|(_, r)| r)
    } else {
        None
    };
    files.extend(records.iter().flat_map(|r| r.trace_files.iter().cloned()));
    let failed: Vec<(usize, String)> = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| (r.cell.index, e.clone())))
        .collect();
    let manifest = Manifest {
        build: BuildInfo::current(),
        stages,
        config: cfg.clone(),
        cells: records.iter().filter_map(|r| r.resolved.clone()).collect(),
        failed_cells: failed.clone(),
        recovery: recovery.clone(),
        files,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| CliError::io(&path, e))?;
    Ok(RunSummary {
        directory: out.to_path_buf(),
        records,
        recovery,
        failed: failed.len(),
    })
}

/// Median error per `n` and the log-log slope against `n`. `None` when some
/// sample size has no successful cell.
fn recovery_summary(
    cfg: &ExperimentConfig,
    records: &[CellRecord],
) -> CliResult<Option<(Vec<RecoveryRow>, RecoveryReport)>> {
    let mut ns = Vec::new();
    let mut medians = Vec::new();
    let mut meta = Vec::new();
    for &n in &cfg.experiment.n_grid {
        let mut errs: Vec<f64> = records
            .iter()
            .filter(|r| r.cell.n == n)
            .filter_map(|r| r.recovery_error)
            .collect();
        if errs.is_empty() {
            return Ok(None);
        }
        errs.sort_by(f64::total_cmp);
        ns.push(n);
        medians.push(quantile(&errs, 0.5));
        meta.push((cfg.experiment.p.resolve(n, cfg.prior.alpha), errs.len()));
    }
    let report = RecoveryReport::fit(&ns, &medians, cfg.prior.alpha)?;
    let rows = ns
        .iter()
        .zip(&medians)
        .zip(&meta)
        .map(|((&n, &median_error), &(p, seeds))| RecoveryRow {
            n,
            p,
            seeds,
            median_error,
            slope: report.slope,
            intercept: report.intercept,
            target_rate: report.target_rate,
        })
        .collect();
    Ok(Some((rows, report)))
}

/// Writes every cell's dataset as `data/cell_XXXX.csv` plus a JSON sidecar.
pub fn write_datasets(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let dir = out.join("data");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut written = Vec::new();
    for cell in cells(cfg) {
        let data = generate_cell_data(cfg, &cell)?;
        let path = dir.join(format!("cell_{:04}.csv", cell.index));
        let mut w = csv::Writer::from_path(&path)?;
        if data.y.is_empty() {
            w.write_record(["x"])?;
            for x in &data.x {
                w.write_record([x.to_string()])?;
            }
        } else {
            w.write_record(["x", "y"])?;
            for (x, y) in data.x.iter().zip(&data.y) {
                w.write_record([x.to_string(), y.to_string()])?;
            }
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        let side = DatasetSidecar {
            cell,
            kind: format!("{:?}", data.kind).to_lowercase(),
            n: data.n(),
            seed: data.seed,
            truth_theta0: data.truth_theta0.clone(),
        };
        let meta = path.with_extension("json");
        fs::write(&meta, serde_json::to_string_pretty(&side)?)
            .map_err(|e| CliError::io(&meta, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub cell: Cell,
    pub kind: String,
    pub n: usize,
    pub seed: u64,
    pub truth_theta0: Vec<f64>,
}
