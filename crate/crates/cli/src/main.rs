//! `lumitomo` command-line front end.
//!
//! Every verb reads a flat `key = value` config (`--config`) with
//! `--set key=value` overrides on top, prints the run report to stdout and
//! writes files when `output.dir` is set. Exit codes: 0 success, 2 invalid
//! config or input, 3 stability violation, 4 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lumitomo::pipeline::{self, ExperimentConfig, RunOutput};
use lumitomo::Error;

#[derive(Parser)]
#[command(name = "lumitomo", version, about = "X-ray excited luminescence tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the phantom and write it.
    Phantom(Common),
    /// Solve for the weight v = Vh.
    Weight(Common),
    /// Simulate noisy measurements (cone scan or sinogram).
    Scan(Common),
    /// Reconstruct from measurements written by `scan`.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Scan manifest (`.ltscan`) or sinogram file.
        #[arg(long)]
        data: PathBuf,
    },
    /// Report the ellipticity margin of the configured cone family.
    CheckStability(Common),
    /// End-to-end cone-excitation experiment.
    RunXmlt(Common),
    /// End-to-end single-line X-ray experiment.
    RunXlct(Common),
}

#[derive(Args)]
struct Common {
    /// Config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Reconstruct even if the cone family fails the stability check.
    #[arg(long)]
    force_pseudo: bool,
}

impl Common {
    fn load(&self) -> lumitomo::Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if self.force_pseudo {
            overrides.push("recon.force_pseudo=true".into());
        }
        let mut raw = match &self.config {
            Some(p) => pipeline::RawConfig::from_file(p)?,
            None => pipeline::RawConfig::default(),
        };
        for o in &overrides {
            raw.set(o)?;
        }
        ExperimentConfig::from_raw(&raw)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::StabilityViolation { .. } => 3,
        Error::SolverFailure { .. } | Error::InvalidOperator(_) => 4,
        _ => 2,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("LUMITOMO_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("LUMITOMO_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: &Command) -> lumitomo::Result<String> {
    let output = |out: RunOutput| out.report.render();
    match command {
        Command::Phantom(c) => pipeline::run_phantom(&c.load()?).map(output),
        Command::Weight(c) => pipeline::run_weight(&c.load()?).map(output),
        Command::Scan(c) => pipeline::run_scan(&c.load()?).map(output),
        Command::Reconstruct { common, data } => pipeline::run_reconstruct(&common.load()?, data).map(output),
        Command::CheckStability(c) => pipeline::check_stability(&c.load()?).map(|r| r.render()),
        Command::RunXmlt(c) => pipeline::run_xmlt(&c.load()?).map(output),
        Command::RunXlct(c) => pipeline::run_xlct(&c.load()?).map(output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let started = Instant::now();
    let result = run(&cli.command);
    eprintln!("wall-clock: {:.3} s", started.elapsed().as_secs_f64());
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::StabilityViolation { margin: 0.0 }), 3);
        assert_eq!(exit_code(&Error::SolverFailure { iterations: 3, residual: 1.0 }), 4);
        assert_eq!(exit_code(&Error::InvalidOperator(1.0)), 4);
    }
}
