use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyperwalk::harness::{render_report, run_stages, write_outputs, ExperimentConfig, Failure, Stage};

#[derive(Parser)]
#[command(name = "hyperwalk", version, about = "Random walks on hyperbolic spaces: drift, Laplace transform and rate function")]
struct Cli {
    /// TOML experiment config; defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset (uniform or biased) instead of the defaults.
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories and estimate drift and CLT variance.
    Simulate,
    /// Solve the centering equation and check the pathwise bounds.
    SolvePsi,
    /// Estimate the log-Laplace transform and its curvature at zero.
    Laplace,
    /// Legendre transform of the Laplace estimate.
    Rate,
    /// Fuzz the scalar inequalities and check the exponential submartingale.
    VerifyTransforms,
    /// Quadratic variation, variance routes and the deviation probe.
    VerifyQv,
    /// Compare Azuma, block and Laplace-control bounds with empirical tails.
    VerifyBounds,
    /// Every stage in order.
    Run,
    /// Re-render the summary and plot data from an output directory.
    Report {
        /// Directory holding report.json; defaults to --out.
        dir: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ExperimentConfig::from_toml(&text).map_err(|e| e.to_string())?
        }
        (None, Some(name)) => ExperimentConfig::preset(name).map_err(|e| e.to_string())?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn stages(command: &Command) -> Vec<Stage> {
    match command {
        Command::Simulate => vec![Stage::Validate, Stage::Simulate],
        Command::SolvePsi => vec![Stage::Validate, Stage::SolvePsi],
        Command::Laplace => vec![Stage::Validate, Stage::Laplace],
        Command::Rate => vec![Stage::Validate, Stage::Laplace, Stage::Rate],
        Command::VerifyTransforms => vec![Stage::Validate, Stage::Transforms],
        Command::VerifyQv => vec![Stage::Validate, Stage::Qv],
        Command::VerifyBounds => vec![Stage::Validate, Stage::Bounds],
        Command::Run => Stage::ALL.to_vec(),
        Command::Report { .. } => Vec::new(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Report { dir } = &cli.command {
        let Some(dir) = dir.clone().or_else(|| cli.out.clone()) else {
            eprintln!("report: no directory given");
            return ExitCode::from(2);
        };
        return match render_report(&dir) {
            Ok(r) => {
                print!("{}", std::fs::read_to_string(dir.join("summary.txt")).unwrap_or_default());
                ExitCode::from(if r.failed().is_empty() { 0 } else { 1 })
            }
            Err(e) => {
                eprintln!("report: {e}");
                ExitCode::from(2)
            }
        };
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let resolved = match cfg.resolve() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}", Failure::Config(e));
            return ExitCode::from(2);
        }
    };
    let out = match run_stages(&resolved, &stages(&cli.command)) {
        Ok(o) => o,
        Err(f) => {
            eprintln!("{f}");
            return ExitCode::from(f.exit_code() as u8);
        }
    };
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = write_outputs(&dir, &out) {
        eprintln!("writing {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    print!("{}", hyperwalk::harness::render_summary(&out.report));
    let failed = out.report.failed();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("{} assertion(s) failed", failed.len());
        ExitCode::from(1)
    }
}
