use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::ConfigError;
use output::Output;

/// Batch experiments for boundary-control density reconstruction.
#[derive(Parser)]
#[command(name = "elastobcm", version)]
struct Cli {
    /// Experiment config (sectioned TOML).
    #[arg(short, long, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    /// Override a config key, e.g. `--set grid.n=32`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory; falls back to `output_dir` in the config, then `out`.
    #[arg(long, global = true, env = "BCM_OUT_DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Homogeneous Dirichlet evolution of random smooth data; energy series.
    Forward,
    /// Assemble the displacement-to-traction operator on the source basis.
    Dtn {
        /// Write the dense operator (JSON header and binary matrix).
        #[arg(long, value_name = "PATH")]
        dump_operator: Option<PathBuf>,
    },
    /// Build and certify the exponential probes on the frequency lattice.
    Probe,
    /// Measure boundary data and reconstruct the density.
    Reconstruct,
    /// Empirical observability ratios over a seeded ensemble.
    Observability,
    /// Carleman constants, the illuminated boundary, and the decomposition defect.
    CarlemanCheck,
    /// Density perturbation experiment over the epsilon schedule.
    Stability,
    /// Run the built-in oracle suite.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Dtn { .. } => "dtn",
            Command::Probe => "probe",
            Command::Reconstruct => "reconstruct",
            Command::Observability => "observability",
            Command::CarlemanCheck => "carleman-check",
            Command::Stability => "stability",
            Command::Verify => "verify",
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let (cfg, digest) = config::load(&cli.config, &cli.overrides)?;
    let dir = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut out = Output::new(&dir, cli.command.name(), digest)?;
    let passed = match &cli.command {
        Command::Forward => commands::forward(&cfg, &mut out),
        Command::Dtn { dump_operator } => commands::dtn(&cfg, &mut out, dump_operator.as_deref()),
        Command::Probe => commands::probe(&cfg, &mut out),
        Command::Reconstruct => commands::reconstruct(&cfg, &mut out),
        Command::Observability => commands::observability(&cfg, &mut out),
        Command::CarlemanCheck => commands::carleman_check(&cfg, &mut out),
        Command::Stability => commands::stability(&cfg, &mut out),
        Command::Verify => commands::verify(&cfg, &mut out),
    };
    match &passed {
        Ok(p) => out.log(&format!("done passed={p}"))?,
        Err(e) => out.log(&format!("failed: {e:#}"))?,
    }
    passed
}

/// Config and precondition errors are usage errors.
fn is_usage(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<ConfigError>().is_some() {
        return true;
    }
    matches!(
        e.downcast_ref::<elastobcm::Error>(),
        Some(
            elastobcm::Error::Config(_)
                | elastobcm::Error::Shape(_)
                | elastobcm::Error::Lattice { .. }
                | elastobcm::Error::Parse(_)
                | elastobcm::Error::Cfl { .. }
                | elastobcm::Error::Threshold { .. }
        )
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
