//! `ksmf`: batch driver for the PDE, ε-convergence, coupling and chaos studies.

mod commands;
mod config;
mod error;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::{Outcome, DIAGNOSTICS_FILE, DISTANCES_FILE};
use crate::config::{Command, ExperimentConfig};
use crate::error::CliError;
use crate::manifest::{prepare_dir, write_text, RunManifest, ValidityFlags, CONFIG_ECHO_FILE};

#[derive(Debug, Parser)]
#[command(name = "ksmf", version, about = "Keller-Segel mean-field experiments")]
struct Cli {
    /// TOML configuration (or JSON with a `.json` extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `particles.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Solve the PDE and write snapshots and diagnostics.
    SolvePde,
    /// Compare nonlocal solutions against the local one over an ε list.
    EpsConvergence,
    /// Couple intermediate and limiting particle systems over an ε list.
    CouplingStudy,
    /// Sweep the ensemble size at fixed ε (or λ-scaled ε).
    ChaosStudy,
    /// Recompute diagnostics for stored density snapshots.
    Diagnose {
        /// One snapshot header, or two for pairwise distances.
        #[arg(required = true, num_args = 1..=2)]
        snapshots: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ksmf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let (command, name) = match &cli.command {
        Sub::SolvePde => (Command::SolvePde, "solve-pde"),
        Sub::EpsConvergence => (Command::EpsConvergence, "eps-convergence"),
        Sub::CouplingStudy => (Command::CouplingStudy, "coupling-study"),
        Sub::ChaosStudy => (Command::ChaosStudy, "chaos-study"),
        Sub::Diagnose { snapshots } => return diagnose(snapshots, cli.out.as_deref()),
    };
    let mut config = config.resolve(command);
    if let Some(s) = cli.seed {
        config.particles.seed = s;
    }
    if let Some(o) = &cli.out {
        config.output_dir = Some(o.clone());
    }
    let out = config
        .output_dir
        .get_or_insert_with(|| Path::new("runs").join(name))
        .clone();
    let mut warnings = config.validate(command)?;
    for w in &warnings {
        eprintln!("ksmf: warning: {w}");
    }

    let start = Instant::now();
    let result = match command {
        Command::SolvePde => commands::solve_pde(&config, &out),
        Command::EpsConvergence => commands::eps_convergence(&config, &out),
        Command::CouplingStudy => commands::coupling_study(&config, &out),
        Command::ChaosStudy => commands::chaos_study(&config, &out),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(CliError::BlowUp(msg)) => Outcome {
            flags: ValidityFlags {
                blow_up: true,
                ..Default::default()
            },
            summary: json!({ "error": msg }),
            failure: Some(CliError::BlowUp(msg)),
            ..Default::default()
        },
        Err(e) => return Err(e),
    };
    for w in &outcome.warnings {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    let manifest = RunManifest {
        command: name.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.particles.seed,
        threads: cli.threads,
        config: config.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        status: outcome.flags.status(),
        flags: outcome.flags,
        warnings,
        summary: outcome.summary,
    };
    prepare_dir(&out, &[])?;
    write_text(out.join(CONFIG_ECHO_FILE), &config.to_toml())?;
    manifest.write(&out)?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn diagnose(paths: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let (records, distances, _) = commands::diagnose(paths)?;
    match out {
        Some(dir) => {
            prepare_dir(dir, &[])?;
            write_text(dir.join(DIAGNOSTICS_FILE), &records)?;
            if let Some(d) = distances {
                write_text(dir.join(DISTANCES_FILE), &d)?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            let mut emit = |s: &str| stdout.write_all(s.as_bytes()).map_err(CliError::io("<stdout>"));
            emit(&records)?;
            if let Some(d) = distances {
                emit(&d)?;
            }
        }
    }
    Ok(())
}
