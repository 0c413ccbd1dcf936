use std::fs;
use std::process::Command;

use langevin_surrogate::basis::{BasisFamily, BasisKind};
use langevin_surrogate::distance;
use langevin_surrogate::family::{ExpFamily, FamilyKind, LinkFunction};
use langevin_surrogate::forward::ForwardOperator;
use langevin_surrogate::likelihood::{ModelInstance, ModelSpec};
use langevin_surrogate::prior::SievePrior;
use langevin_surrogate::surrogate::{ModelPreset, VanillaPosterior};
use langevin_surrogate_cli::config::GammaRule;
use langevin_surrogate_cli::experiment::{run_experiment, Manifest, Stages};
use langevin_surrogate_cli::init::pilot_ascent;
use langevin_surrogate_cli::ExperimentConfig;
use std::sync::Arc;

const CONJUGATE: &str = r#"
name = "conjugate"

[model]
kind = "glm"
family = "gaussian"
theta0 = { values = [0.8] }

[prior]
alpha = 1.0

[surrogate]
init = { mode = "oracle-projection" }

[sampler]
variant = "surrogate"
gamma = { rule = "fraction-of-bound", bound = "sampling", fraction = 1.0 }
j_in = { rule = "fixed", steps = 0 }
j = 2000
replicates = 1
chain_seed = 0

[experiment]
n_grid = [500]
p = { rule = "fixed", value = 1 }
data_seeds = [1]
diagnostics = { grid = true, w2_samples = 64 }

[output]
directory = "out/conjugate"
thinning_budget = 10000000
traces = true
"#;

fn read_report(path: &std::path::Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn one_cell_conjugate_run_writes_report_traces_and_manifest() {
    let cfg = ExperimentConfig::from_toml(CONJUGATE).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, dir.path(), Stages::ALL, 1).unwrap();
    assert!(summary.all_ok());
    assert_eq!(read_report(&dir.path().join("report.csv")).len(), 1);
    assert!(dir
        .path()
        .join("traces/cell_0000_surrogate_r00.csv")
        .exists());
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let cell = &manifest.cells[0];
    assert!(cell.gamma > 0.0 && cell.k > 0.0 && cell.eta == 1.0);
    assert!(cell.m > 0.0 && cell.lambda > cell.m && cell.delta_n > 0.0);
    assert_eq!(cell.j_in, 0);
    assert_eq!(cell.j, 2000);
    // the raw JSON names every resolved constant used by the formulas
    let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    for key in [
        "\"gamma\"",
        "\"j_in\"",
        "\"k\"",
        "\"eta\"",
        "\"m\"",
        "\"lambda\"",
        "\"delta_n\"",
    ] {
        assert!(text.contains(key), "manifest lacks {key}");
    }
}

#[test]
fn recovery_study_reports_three_rows_and_a_slope() {
    let mut cfg = ExperimentConfig::preset("glm-gaussian").unwrap();
    cfg.experiment.n_grid = vec![200, 800, 3200];
    cfg.experiment.diagnostics.recovery = true;
    cfg.sampler.j = 1000;
    cfg.output.traces = false;
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, dir.path(), Stages::ALL, 0).unwrap();
    assert!(summary.all_ok());
    let mut r = csv::Reader::from_path(dir.path().join("recovery.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "slope"));
    assert_eq!(r.records().count(), 3);
    assert!(summary.recovery.unwrap().slope.is_finite());
}

#[test]
fn gamma_above_the_bound_names_the_field() {
    let mut cfg = ExperimentConfig::from_toml(CONJUGATE).unwrap();
    let GammaRule::FractionOfBound { fraction, .. } = &mut cfg.sampler.gamma;
    *fraction = 1.5;
    let err = cfg.validate().unwrap_err().to_string();
    assert!(
        err.contains("sampler.gamma") && err.contains("γ ≤"),
        "{err}"
    );
}

#[test]
fn reruns_are_byte_identical_and_worker_count_is_irrelevant() {
    let mut cfg = ExperimentConfig::preset("glm-poisson").unwrap();
    cfg.experiment.data_seeds = vec![1, 2, 3];
    cfg.sampler.replicates = 2;
    cfg.sampler.j = 500;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path(), Stages::ALL, 1).unwrap();
    run_experiment(&cfg, b.path(), Stages::ALL, 3).unwrap();
    assert_eq!(
        fs::read(a.path().join("report.csv")).unwrap(),
        fs::read(b.path().join("report.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.path().join("traces/cell_0002_surrogate_r01.csv")).unwrap(),
        fs::read(b.path().join("traces/cell_0002_surrogate_r01.csv")).unwrap()
    );
}

#[test]
fn every_preset_runs_end_to_end() {
    for name in [
        "glm-gaussian",
        "glm-poisson",
        "glm-logistic",
        "density",
        "darcy-1d",
    ] {
        let mut cfg = ExperimentConfig::preset(name).unwrap();
        cfg.sampler.j = 200;
        cfg.output.traces = false;
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path(), Stages::ALL, 1).unwrap();
        assert!(summary.all_ok(), "{name}: {:?}", summary.records[0].error);
    }
}

#[test]
fn binary_exit_codes_follow_the_outcome() {
    let bin = env!("CARGO_BIN_EXE_langevin-surrogate");
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, CONJUGATE).unwrap();
    let out = Command::new(bin)
        .args(["experiment", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("run/report.csv").exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, CONJUGATE.replace("fraction = 1.0", "fraction = 2.0")).unwrap();
    let out = Command::new(bin)
        .args(["sample", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampler.gamma"));

    let out = Command::new(bin)
        .args(["generate", "--config", "preset:density", "--out"])
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("data/data/cell_0000.csv").exists());
}

fn posterior(family: FamilyKind, n: usize, p: usize, truth: &[f64], seed: u64) -> VanillaPosterior {
    let ms = ModelSpec::Regression {
        family: ExpFamily::new(family),
        link: LinkFunction::canonical(),
        forward: ForwardOperator::LinearPhi(
            BasisFamily::new(BasisKind::CosineWithConstant, p).unwrap(),
        ),
    };
    let data = ms.generate(truth, n, seed).unwrap();
    VanillaPosterior {
        model: Arc::new(ModelInstance::new(ms, data).unwrap()),
        prior: SievePrior::new(1.0, n, p).unwrap(),
    }
}

#[test]
fn pilot_ascent_finds_the_conjugate_mode() {
    let post = posterior(FamilyKind::Gaussian, 500, 1, &[0.8], 4);
    let sum_y: f64 = post.model.dataset.y.iter().sum();
    let s0 = post.prior.variance(1);
    let mode = s0 * sum_y / (1.0 + 500.0 * s0);
    let r = pilot_ascent(&post, 2000, 1e-2).unwrap();
    assert!(
        (r.theta[0] - mode).abs() <= 1e-6,
        "{} vs {mode}",
        r.theta[0]
    );
}

fn pilot_offsets(truth: &[f64]) -> Vec<f64> {
    let (n, p) = (2000, truth.len());
    let eta = ModelPreset::Glm.eta(p);
    (0..20)
        .map(|seed| {
            let post = posterior(FamilyKind::Poisson, n, p, truth, 100 + seed);
            let r = pilot_ascent(&post, 2000, 1e-2).unwrap();
            distance(&r.theta, truth) / eta
        })
        .collect()
}

#[test]
fn pilot_ascent_lands_near_the_truth_for_poisson() {
    // the offset is the MAP's own sampling error, so it hinges on the
    // Fisher information; at intercept 0.5 it sits right at η/8
    let weak: Vec<f64> = (1..=8).map(|k| 0.5 / (k * k) as f64).collect();
    let mut strong = weak.clone();
    strong[0] = 1.5;
    let weak = pilot_offsets(&weak);
    let strong = pilot_offsets(&strong);
    let within = |r: &[f64]| r.iter().filter(|x| **x <= 0.125).count();
    println!(
        "pilot ascent within η/8 (n = 2000, p = 8): intercept 0.5 {}/20, intercept 1.5 {}/20",
        within(&weak),
        within(&strong)
    );
    assert!(within(&strong) >= 18, "{strong:.3?}");
}
