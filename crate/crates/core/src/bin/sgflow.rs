use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sgflow::experiments::{execute, ExperimentKind, RunConfig};
use sgflow::FluxMode;

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Riemann1d,
    LineInjection,
    FiveSpot,
    Bench,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Quad,
    Trip,
}

/// Stochastic Galerkin two-phase transport experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    experiment: Kind,
    /// TOML file overriding the desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Reduction threshold; 0 runs the full operators.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    flux_mode: Option<Mode>,
    #[arg(long)]
    paper_scale: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = match cli.experiment {
        Kind::Riemann1d => ExperimentKind::Riemann1d,
        Kind::LineInjection => ExperimentKind::LineInjection,
        Kind::FiveSpot => ExperimentKind::FiveSpot,
        Kind::Bench => ExperimentKind::Bench,
    };
    let cfg = match &cli.config {
        Some(path) => RunConfig::from_file(kind, path),
        None => Ok(RunConfig::defaults(kind)),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(e) = cli.epsilon {
        cfg.epsilon = e;
    }
    if let Some(m) = cli.flux_mode {
        cfg.flux_mode = match m {
            Mode::Quad => FluxMode::Quad,
            Mode::Trip => FluxMode::Trip,
        };
    }
    if cli.paper_scale {
        cfg.apply_paper_scale();
    }
    match execute(&cfg, &cli.out) {
        Ok(o) => {
            println!("{} finished; outputs in {}", kind.name(), cli.out.display());
            for f in &o.manifest.files {
                println!("  {f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e} (manifest written to {})", cli.out.display());
            ExitCode::FAILURE
        }
    }
}
