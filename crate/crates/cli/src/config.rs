//! Experiment configuration: a TOML document with `[model]`, `[prior]`,
//! `[surrogate]`, `[sampler]`, `[experiment]` and `[output]` tables.
//!
//! Every rule in the file resolves to plain numbers per cell before any chain
//! starts; see [`crate::experiment::resolve_cell`].

use std::path::{Path, PathBuf};

use langevin_surrogate::basis::BasisKind;
use langevin_surrogate::family::{FamilyKind, LinkKind};
use langevin_surrogate::forward::DarcyParams;
use langevin_surrogate::sampler::{Guard, DEFAULT_THINNING_BUDGET};
use langevin_surrogate::surrogate::ModelPreset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Names of the shipped presets.
pub const PRESETS: [&str; 5] = [
    "glm-gaussian",
    "glm-poisson",
    "glm-logistic",
    "density",
    "darcy-1d",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelBlock,
    #[serde(default)]
    pub prior: PriorBlock,
    #[serde(default)]
    pub surrogate: SurrogateBlock,
    pub sampler: SamplerBlock,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Glm,
    Density,
    Darcy,
}

impl ModelKind {
    pub fn preset(self) -> ModelPreset {
        match self {
            ModelKind::Glm => ModelPreset::Glm,
            ModelKind::Density => ModelPreset::Density,
            ModelKind::Darcy => ModelPreset::Darcy,
        }
    }

    pub fn default_basis(self) -> BasisKind {
        match self {
            ModelKind::Glm => BasisKind::CosineWithConstant,
            ModelKind::Density => BasisKind::CosineCentered,
            ModelKind::Darcy => BasisKind::DirichletSine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    #[serde(default = "default_family")]
    pub family: FamilyKind,
    #[serde(default = "default_link")]
    pub link: LinkKind,
    /// Defaults per kind: cosine-with-constant, cosine-centered, dirichlet-sine.
    pub basis: Option<BasisKind>,
    pub theta0: Theta0Spec,
    #[serde(default = "default_quadrature")]
    pub quadrature_nodes: usize,
    #[serde(default)]
    pub darcy: DarcyBlock,
}

fn default_family() -> FamilyKind {
    FamilyKind::Gaussian
}

fn default_link() -> LinkKind {
    LinkKind::Canonical
}

fn default_quadrature() -> usize {
    langevin_surrogate::likelihood::DEFAULT_QUADRATURE_NODES
}

impl ModelBlock {
    pub fn basis_kind(&self) -> BasisKind {
        self.basis.unwrap_or_else(|| self.kind.default_basis())
    }
}

/// Truth coefficients: explicit `values`, or `scale · k^{-decay}` for
/// `k = 1..=length`, with alternating signs if `alternate` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta0Spec {
    pub values: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "two")]
    pub decay: f64,
    #[serde(default = "default_truth_len")]
    pub length: usize,
    #[serde(default)]
    pub alternate: bool,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn default_truth_len() -> usize {
    100
}

impl Theta0Spec {
    pub fn resolve(&self) -> Vec<f64> {
        match &self.values {
            Some(v) => v.clone(),
            None => (1..=self.length)
                .map(|k| {
                    let sign = if self.alternate && k % 2 == 0 {
                        -1.0
                    } else {
                        1.0
                    };
                    sign * self.scale * (k as f64).powf(-self.decay)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcyBlock {
    pub grid_points: usize,
    pub f_min: f64,
    pub source: f64,
    pub boundary: (f64, f64),
}

impl Default for DarcyBlock {
    fn default() -> Self {
        let d = DarcyParams::default();
        Self {
            grid_points: d.grid_points,
            f_min: d.f_min,
            source: d.source,
            boundary: d.boundary,
        }
    }
}

impl DarcyBlock {
    pub fn params(&self) -> DarcyParams {
        DarcyParams {
            grid_points: self.grid_points,
            f_min: self.f_min,
            source: self.source,
            boundary: self.boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBlock {
    #[serde(default = "one")]
    pub alpha: f64,
}

impl Default for PriorBlock {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// How `θ_init` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", deny_unknown_fields)]
pub enum InitSpec {
    /// The truth projection `θ_{*,p}`. Synthetic data only.
    OracleProjection,
    /// `θ_{*,p}` moved by `rho_fraction · η/8` in a seeded random direction.
    OraclePerturbed { rho_fraction: f64 },
    /// Backtracking gradient ascent on the posterior from 0.
    PilotAscent {
        #[serde(default = "default_pilot_steps")]
        steps: usize,
        #[serde(default = "default_pilot_rate")]
        rate: f64,
    },
}

fn default_pilot_steps() -> usize {
    2000
}

fn default_pilot_rate() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateBlock {
    /// Multiplier on the preset radius `η`.
    #[serde(default = "one")]
    pub eta_scale: f64,
    /// Replaces the preset radius when set (before `eta_scale`).
    pub eta: Option<f64>,
    /// Lower bound on `K`; the data-driven floor still applies.
    pub k_override: Option<f64>,
    /// Replaces the probe estimate `ĉ_max` when set.
    pub c_max: Option<f64>,
    #[serde(default = "default_probe_points")]
    pub probe_points: usize,
    #[serde(default = "default_init")]
    pub init: InitSpec,
}

fn default_probe_points() -> usize {
    8
}

fn default_init() -> InitSpec {
    InitSpec::OracleProjection
}

impl Default for SurrogateBlock {
    fn default() -> Self {
        Self {
            eta_scale: 1.0,
            eta: None,
            k_override: None,
            c_max: None,
            probe_points: default_probe_points(),
            init: default_init(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantSelection {
    Surrogate,
    Vanilla,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepBound {
    /// `2/(m + Λ)`.
    Sampling,
    /// `m/(√54 Λ²)`.
    ExitTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", deny_unknown_fields)]
pub enum GammaRule {
    /// `γ = fraction × bound`, `fraction ∈ (0, 1]`.
    FractionOfBound { bound: StepBound, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", deny_unknown_fields)]
pub enum BurnInRule {
    Fixed {
        steps: usize,
    },
    /// The burn-in bound for precision `epsilon`.
    Precision {
        epsilon: f64,
        #[serde(default = "one")]
        c_w: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    #[serde(default = "default_variant")]
    pub variant: VariantSelection,
    pub gamma: GammaRule,
    pub j_in: BurnInRule,
    pub j: usize,
    /// Independent chains per cell; their spread gives the Monte-Carlo error.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub chain_seed: u64,
    /// Required when vanilla chains run.
    pub guard: Option<Guard>,
}

fn default_variant() -> VariantSelection {
    VariantSelection::Surrogate
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", deny_unknown_fields)]
pub enum PRule {
    Fixed {
        value: usize,
    },
    /// `p = max(1, round(scale · n^{1/(2α+1)}))`.
    Rate {
        #[serde(default = "one")]
        scale: f64,
    },
}

impl PRule {
    pub fn resolve(&self, n: usize, alpha: f64) -> usize {
        match *self {
            PRule::Fixed { value } => value,
            PRule::Rate { scale } => {
                ((scale * (n as f64).powf(1.0 / (2.0 * alpha + 1.0))).round() as usize).max(1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsBlock {
    /// Tensor-grid ground truth (`p ≤ 2` only).
    #[serde(default)]
    pub grid: bool,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    /// Initial half-width of the grid in units of `1/√m`.
    #[serde(default = "default_grid_halfwidth")]
    pub grid_halfwidth: f64,
    /// Grid sample sets for surrogate-versus-true `W₂`; 0 disables.
    #[serde(default)]
    pub w2_samples: usize,
    /// Contraction threshold multiplier `L`.
    #[serde(default = "one")]
    pub contraction_l: f64,
    /// Fit the recovery slope across `n_grid`.
    #[serde(default)]
    pub recovery: bool,
}

fn default_grid_resolution() -> usize {
    2001
}

fn default_grid_halfwidth() -> f64 {
    12.0
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self {
            grid: false,
            grid_resolution: default_grid_resolution(),
            grid_halfwidth: default_grid_halfwidth(),
            w2_samples: 0,
            contraction_l: 1.0,
            recovery: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub n_grid: Vec<usize>,
    pub p: PRule,
    pub data_seeds: Vec<u64>,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out")]
    pub directory: PathBuf,
    #[serde(default = "default_budget")]
    pub thinning_budget: usize,
    /// Write per-chain trace CSVs.
    #[serde(default = "yes")]
    pub traces: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_budget() -> usize {
    DEFAULT_THINNING_BUDGET
}

fn yes() -> bool {
    true
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_out(),
            thinning_budget: default_budget(),
            traces: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// One of [`PRESETS`].
    pub fn preset(name: &str) -> CliResult<Self> {
        let text = match name {
            "glm-gaussian" => include_str!("../presets/glm-gaussian.toml"),
            "glm-poisson" => include_str!("../presets/glm-poisson.toml"),
            "glm-logistic" => include_str!("../presets/glm-logistic.toml"),
            "density" => include_str!("../presets/density.toml"),
            "darcy-1d" => include_str!("../presets/darcy-1d.toml"),
            other => {
                return Err(CliError::Invalid(vec![format!(
                    "unknown preset `{other}`; available: {}",
                    PRESETS.join(", ")
                )]))
            }
        };
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> CliResult<()> {
        let mut bad = Vec::new();
        let m = &self.model;
        let basis = m.basis_kind();
        match m.kind {
            ModelKind::Darcy if basis != BasisKind::DirichletSine => {
                bad.push("model.basis: the Darcy model needs the dirichlet-sine basis".to_string())
            }
            ModelKind::Density if basis != BasisKind::CosineCentered => {
                bad.push("model.basis: density models need the cosine-centered basis".to_string())
            }
            _ => {}
        }
        if m.kind == ModelKind::Darcy && m.family != FamilyKind::Gaussian {
            bad.push("model.family: the Darcy model uses gaussian observations".to_string());
        }
        match &m.theta0.values {
            Some(v) if v.is_empty() || v.iter().any(|x| !x.is_finite()) => bad.push(
                "model.theta0.values: must be a non-empty list of finite numbers".to_string(),
            ),
            None if m.theta0.length == 0 => {
                bad.push("model.theta0.length: must be at least 1".to_string())
            }
            None if !m.theta0.scale.is_finite() || !(m.theta0.decay.is_finite()) => {
                bad.push("model.theta0: scale and decay must be finite".to_string())
            }
            _ => {}
        }
        if m.kind == ModelKind::Density && m.quadrature_nodes < 2 {
            bad.push("model.quadrature_nodes: need at least 2 nodes".to_string());
        }
        if m.kind == ModelKind::Darcy {
            let d = &m.darcy;
            if d.grid_points < 2 {
                bad.push("model.darcy.grid_points: need at least 2 interior nodes".to_string());
            }
            if !(d.f_min > 0.0) {
                bad.push("model.darcy.f_min: must be positive".to_string());
            }
        }
        if !(self.prior.alpha > 0.5) || !self.prior.alpha.is_finite() {
            bad.push(format!("prior.alpha: {} must exceed 1/2", self.prior.alpha));
        }
        let s = &self.surrogate;
        if !(s.eta_scale > 0.0) || !s.eta_scale.is_finite() {
            bad.push(format!(
                "surrogate.eta_scale: {} must be positive",
                s.eta_scale
            ));
        }
        if let Some(e) = s.eta {
            if !(e > 0.0) || !e.is_finite() {
                bad.push(format!("surrogate.eta: {e} must be positive"));
            }
        }
        if let Some(k) = s.k_override {
            if !(k >= 0.0) || !k.is_finite() {
                bad.push(format!(
                    "surrogate.k_override: {k} must be finite and nonnegative"
                ));
            }
        }
        if let Some(c) = s.c_max {
            if !(c > 0.0) || !c.is_finite() {
                bad.push(format!("surrogate.c_max: {c} must be positive"));
            }
        }
        if s.probe_points == 0 {
            bad.push("surrogate.probe_points: must be at least 1".to_string());
        }
        match s.init {
            InitSpec::OraclePerturbed { rho_fraction } if !(rho_fraction > 0.0 && rho_fraction <= 1.0) => {
                bad.push(format!(
                    "surrogate.init.rho_fraction: {rho_fraction} outside (0, 1]; the offset must stay within η/8"
                ))
            }
            InitSpec::PilotAscent { steps, rate } if steps == 0 || !(rate > 0.0) => {
                bad.push("surrogate.init: pilot ascent needs steps ≥ 1 and rate > 0".to_string())
            }
            _ => {}
        }
        let sm = &self.sampler;
        let GammaRule::FractionOfBound { bound, fraction } = sm.gamma;
        if !(fraction > 0.0) || !fraction.is_finite() {
            bad.push(format!(
                "sampler.gamma: fraction {fraction} must be positive"
            ));
        } else if fraction > 1.0 {
            let b = match bound {
                StepBound::Sampling => "γ ≤ 2/(m+Λ)",
                StepBound::ExitTime => "γ ≤ m/(√54 Λ²)",
            };
            bad.push(format!(
                "sampler.gamma: fraction {fraction} exceeds the step bound {b}"
            ));
        }
        if let BurnInRule::Precision { epsilon, c_w } = sm.j_in {
            if !(epsilon > 0.0) || !(c_w > 0.0) {
                bad.push("sampler.j_in: epsilon and c_w must be positive".to_string());
            }
        }
        if sm.j == 0 {
            bad.push("sampler.j: must be at least 1".to_string());
        }
        if sm.replicates == 0 {
            bad.push("sampler.replicates: must be at least 1".to_string());
        }
        if sm.variant != VariantSelection::Surrogate && sm.guard.is_none() {
            bad.push("sampler.guard: vanilla chains need a declared guard policy".to_string());
        }
        if let Some(Guard::Reflect { radius }) = sm.guard {
            if !(radius > 0.0) || !radius.is_finite() {
                bad.push(format!("sampler.guard.radius: {radius} must be positive"));
            }
        }
        let e = &self.experiment;
        if e.n_grid.is_empty() || e.n_grid.contains(&0) {
            bad.push("experiment.n_grid: must list positive sample sizes".to_string());
        }
        if e.data_seeds.is_empty() {
            bad.push("experiment.data_seeds: must list at least one seed".to_string());
        }
        match e.p {
            PRule::Fixed { value: 0 } => {
                bad.push("experiment.p: fixed dimension must be at least 1".to_string())
            }
            PRule::Rate { scale } if !(scale > 0.0) => {
                bad.push("experiment.p: rate scale must be positive".to_string())
            }
            _ => {}
        }
        let d = &e.diagnostics;
        if d.grid || d.w2_samples > 0 {
            let too_big: Vec<usize> = e
                .n_grid
                .iter()
                .map(|&n| e.p.resolve(n, self.prior.alpha))
                .filter(|&p| p > 2)
                .collect();
            if !too_big.is_empty() {
                bad.push(format!(
                    "experiment.diagnostics.grid: grid posteriors need p ≤ 2, the p rule gives {too_big:?}"
                ));
            }
            if d.grid_resolution < 3 {
                bad.push(
                    "experiment.diagnostics.grid_resolution: need at least 3 nodes".to_string(),
                );
            }
            if !(d.grid_halfwidth > 0.0) {
                bad.push("experiment.diagnostics.grid_halfwidth: must be positive".to_string());
            }
        }
        if d.w2_samples > langevin_surrogate::diagnostics::MAX_W2_SAMPLES {
            bad.push(format!(
                "experiment.diagnostics.w2_samples: at most {} samples",
                langevin_surrogate::diagnostics::MAX_W2_SAMPLES
            ));
        }
        if d.recovery && e.n_grid.len() < 2 {
            bad.push(
                "experiment.diagnostics.recovery: the slope fit needs at least two sample sizes"
                    .to_string(),
            );
        }
        if !(d.contraction_l > 0.0) {
            bad.push("experiment.diagnostics.contraction_l: must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(bad))
        }
    }

    /// Adds `offset` to every data and chain seed.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in &mut self.experiment.data_seeds {
            *s = s.wrapping_add(offset);
        }
        self.sampler.chain_seed = self.sampler.chain_seed.wrapping_add(offset);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn gamma_beyond_the_bound_is_named() {
        let mut cfg = ExperimentConfig::preset("glm-gaussian").unwrap();
        cfg.sampler.gamma = GammaRule::FractionOfBound {
            bound: StepBound::ExitTime,
            fraction: 1.5,
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(
            err.contains("sampler.gamma") && err.contains("√54"),
            "{err}"
        );
    }

    #[test]
    fn every_violation_is_listed() {
        let mut cfg = ExperimentConfig::preset("glm-gaussian").unwrap();
        cfg.prior.alpha = 0.2;
        cfg.sampler.j = 0;
        cfg.experiment.n_grid.clear();
        cfg.sampler.variant = VariantSelection::Both;
        cfg.sampler.guard = None;
        match cfg.validate().unwrap_err() {
            CliError::Invalid(list) => {
                for field in [
                    "prior.alpha",
                    "sampler.j",
                    "experiment.n_grid",
                    "sampler.guard",
                ] {
                    assert!(
                        list.iter().any(|l| l.starts_with(field)),
                        "{field} missing from {list:?}"
                    );
                }
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn p_rule_rounds_the_rate() {
        let r = PRule::Rate { scale: 1.0 };
        assert_eq!(r.resolve(200, 1.0), 6);
        assert_eq!(r.resolve(800, 1.0), 9);
        assert_eq!(r.resolve(3200, 1.0), 15);
        assert_eq!(PRule::Fixed { value: 3 }.resolve(10_000, 1.0), 3);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = ExperimentConfig::preset("glm-gaussian").unwrap().to_toml() + "\nbogus = 1\n";
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn power_law_truth() {
        let t = Theta0Spec {
            values: None,
            scale: 2.0,
            decay: 2.0,
            length: 3,
            alternate: true,
        };
        assert_eq!(t.resolve(), vec![2.0, -0.5, 2.0 / 9.0]);
    }
}
