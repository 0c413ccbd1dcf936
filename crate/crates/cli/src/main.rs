use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use langevin_surrogate_cli::experiment::{run_experiment, write_datasets, Stages};
use langevin_surrogate_cli::{CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "langevin-surrogate",
    version,
    about = "Surrogate-posterior Langevin experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every cell's synthetic dataset (CSV plus JSON sidecar).
    Generate(Common),
    /// Run the chains and write traces and a report without grid diagnostics.
    Sample(Common),
    /// Resolve every cell and compute grid diagnostics without running chains.
    Diagnose(Common),
    /// Run the full pipeline.
    Experiment(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file, or `preset:<name>` for a shipped preset.
    #[arg(long)]
    config: String,
    /// Output directory; defaults to `output.directory` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Added to every data and chain seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> CliResult<(ExperimentConfig, PathBuf)> {
        let cfg = match self.config.strip_prefix("preset:") {
            Some(name) => ExperimentConfig::preset(name)?,
            None => ExperimentConfig::load(&PathBuf::from(&self.config))?,
        }
        .with_seed_offset(self.seed_offset);
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| cfg.output.directory.clone());
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> CliResult<bool> {
    let (common, stages) = match &cli.command {
        Command::Generate(c) => {
            let (cfg, out) = c.load()?;
            for path in write_datasets(&cfg, &out)? {
                println!("{}", path.display());
            }
            return Ok(true);
        }
        Command::Sample(c) => (
            c,
            Stages {
                chains: true,
                diagnostics: false,
            },
        ),
        Command::Diagnose(c) => (
            c,
            Stages {
                chains: false,
                diagnostics: true,
            },
        ),
        Command::Experiment(c) => (c, Stages::ALL),
    };
    let (cfg, out) = common.load()?;
    let summary = run_experiment(&cfg, &out, stages, common.jobs)?;
    println!(
        "{}: {} cells, {} failed",
        summary.directory.display(),
        summary.records.len(),
        summary.failed
    );
    if let Some(r) = &summary.recovery {
        println!(
            "recovery slope {:.4} (target {:.4})",
            r.slope, -r.target_rate
        );
    }
    Ok(summary.all_ok())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
