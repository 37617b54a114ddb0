mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use sdemor::ErrorCategory;

use crate::artifacts::{Artifacts, Report};
use crate::commands::Pipeline;
use crate::config::{ExperimentConfig, Overrides};

/// Environment variable holding the worker-thread count.
const WORKERS_ENV: &str = "SDEMOR_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "sdemor", version, about = "Balanced truncation for controlled SDEs with polynomial drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML). Defaults describe the n = 20 reaction-diffusion model.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Only warnings and errors on stderr; no summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Spectral abscissa of the mean-square operator, unshifted and at c1.
    StabilityCheck,
    /// Gramian pair with certificates.
    Gramians,
    /// Monotonicity gap over a grid (n = 2) or random samples.
    GapScan,
    /// Classify the Gramian pair from gap scans and averaged checks.
    CheckGramians,
    /// Hankel singular values, balancing transform and reduced models.
    Balance,
    /// Output moments and sample paths of full and reduced models.
    Simulate,
    /// Relative errors against the bounds on shared noise.
    ErrorTable,
    /// stability-check, gramians, balance, simulate and error-table in one go.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::StabilityCheck => "stability-check",
            Command::Gramians => "gramians",
            Command::GapScan => "gap-scan",
            Command::CheckGramians => "check-gramians",
            Command::Balance => "balance",
            Command::Simulate => "simulate",
            Command::ErrorTable => "error-table",
            Command::Run => "run",
        }
    }
}

fn configure_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("{WORKERS_ENV} must be a positive integer"))?;
        if n == 0 {
            anyhow::bail!("{WORKERS_ENV} must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    configure_workers()?;
    let ov = Overrides { out: cli.out.clone(), seed: cli.seed, paths: cli.paths, dt: cli.dt };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &ov)?;
    let mut art = Artifacts::create(&cfg.output.dir)?;
    art.write_text("config.toml", &toml::to_string(&cfg)?)?;
    let mut rep = Report::default();
    let mut pipe = Pipeline::new(&cfg);
    match cli.command {
        Command::StabilityCheck => pipe.stability_check(&mut art, &mut rep)?,
        Command::Gramians => pipe.gramians_stage(&mut art, &mut rep)?,
        Command::GapScan => pipe.gap_scan(&mut art, &mut rep)?,
        Command::CheckGramians => {
            pipe.gramians_stage(&mut art, &mut rep)?;
            pipe.check_gramians(&mut art, &mut rep)?;
        }
        Command::Balance => pipe.balance_stage(&mut art, &mut rep)?,
        Command::Simulate => pipe.simulate_stage(&mut art, &mut rep)?,
        Command::ErrorTable => pipe.error_table_stage(&mut art, &mut rep)?,
        Command::Run => {
            pipe.stability_check(&mut art, &mut rep)?;
            pipe.gramians_stage(&mut art, &mut rep)?;
            pipe.balance_stage(&mut art, &mut rep)?;
            pipe.simulate_stage(&mut art, &mut rep)?;
            pipe.error_table_stage(&mut art, &mut rep)?;
        }
    }
    let name = cli.command.name();
    art.write_text("report.txt", &rep.text())?;
    let dir = art.dir().to_path_buf();
    let files = art.finish(name, cfg.simulation.seed)?;
    if !cli.quiet {
        print!("{}", rep.text());
        println!("\n{} files written to {}", files.len() + 1, dir.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let category = err.chain().find_map(|e| e.downcast_ref::<sdemor::Error>()).map(|e| e.category());
    match category {
        Some(ErrorCategory::Numerical) => 3,
        Some(ErrorCategory::Divergence) => 4,
        Some(ErrorCategory::Config) | None => 2,
    }
}

fn hint(code: u8) -> &'static str {
    match code {
        3 => "the problem is numerically infeasible as posed; try smaller shifts c1/c2 or check mean-square stability",
        4 => "simulated paths blew up; reduce dt or the control amplitude",
        _ => "check the configuration file and command-line values",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            eprintln!("hint: {}", hint(code));
            ExitCode::from(code)
        }
    }
}
