//! `swlab`: batch front end. Exit status 0 on success, 1 on validation
//! errors, 2 on numerical failure (a `diagnostics.json` is left in the run
//! directory).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use serde_json::json;
use swlab_core::Exec;

use commands::{execute, Failure, Setup, Subcommand};
use output::RunDir;

#[derive(Parser, Debug)]
#[command(name = "swlab", version, about = "Stochastic wave equation laboratory")]
enum Cli {
    /// Simulate one trajectory of the stochastic equation.
    Simulate(RunArgs),
    /// Solve the controlled equation without noise for the [control] section.
    Skeleton(RunArgs),
    /// Minimise the rate functional over controls reaching the [event] set.
    RateMin(RunArgs),
    /// Monte Carlo estimates of -ε log P along the [ladder] and their extrapolation.
    LdpSlope(RunArgs),
    /// Hölder norm, modulus and increment exponent of simulated trajectories.
    Holder(RunArgs),
    /// Empirical noise covariance against the lattice covariance.
    NoiseCheck(RunArgs),
    /// Dalang integral over a (β, t) grid with its scaling fit.
    KernelCheck(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment configuration; defaults apply without one.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(short, long)]
    workers: Option<usize>,
    /// Parent of the run directory, overriding `output.directory`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// `section.key=value` overrides, applied left to right.
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (sub, args) = match cli {
        Cli::Simulate(a) => (Subcommand::Simulate, a),
        Cli::Skeleton(a) => (Subcommand::Skeleton, a),
        Cli::RateMin(a) => (Subcommand::RateMin, a),
        Cli::LdpSlope(a) => (Subcommand::LdpSlope, a),
        Cli::Holder(a) => (Subcommand::Holder, a),
        Cli::NoiseCheck(a) => (Subcommand::NoiseCheck, a),
        Cli::KernelCheck(a) => (Subcommand::KernelCheck, a),
    };
    if let Some(w) = args.workers {
        if w == 0 {
            eprintln!("validation error: --workers must be positive");
            return ExitCode::from(1);
        }
        swlab_core::exec::init_workers(w);
    }
    let cfg = match config::load(args.config.as_deref(), &args.overrides) {
        Ok(c) => c,
        Err(m) => {
            eprintln!("validation error: {m}");
            return ExitCode::from(1);
        }
    };
    let setup = match Setup::new(cfg, Exec::Parallel).and_then(|s| s.validate_for(sub).map(|_| s)) {
        Ok(s) => s,
        Err(f) => return report(sub, f, None),
    };
    let dir = match RunDir::create(&setup.cfg, args.out.as_deref()) {
        Ok(d) => d,
        Err(e) => return report(sub, Failure::Io(e), None),
    };
    match execute(sub, &setup, &dir) {
        Ok(()) => {
            println!("{}", dir.path.display());
            ExitCode::SUCCESS
        }
        Err(f) => report(sub, f, Some(&dir)),
    }
}

fn report(sub: Subcommand, failure: Failure, dir: Option<&RunDir>) -> ExitCode {
    let (kind, message, details, code) = match failure {
        Failure::Validation(m) => ("validation", m, serde_json::Value::Null, 1),
        Failure::Numerical { message, details } => ("numerical", message, details, 2),
        Failure::Io(e) => ("io", e.to_string(), serde_json::Value::Null, 1),
    };
    eprintln!("{kind} error: {message}");
    if let Some(d) = dir {
        let body = json!({ "subcommand": sub.name(), "kind": kind, "message": message, "details": details });
        if d.json_always("diagnostics.json", body).is_ok() {
            eprintln!("diagnostics written to {}", d.path.join("diagnostics.json").display());
        }
    }
    ExitCode::from(code)
}
