//! Command-line driver for the graybox pipeline.
//!
//! `generate` simulates datasets, `train` fits one model per coupling,
//! `optimize` designs and verifies pulses, `report` prints the tables and
//! `selftest` runs the oracle checks.

pub mod checks;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod selftest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use graybox::NoiseKind;

use crate::config::{Profile, RunConfig};
use crate::error::{CliError, CliResult};

/// Environment variable that fixes the worker thread count.
pub const THREADS_ENV: &str = "GRAYBOX_THREADS";

#[derive(Debug, Parser)]
#[command(name = "graybox", version, about = "Graybox noise emulation and pulse control for a dephased qubit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Noise process: rtn or ou (spectrum-matched to the RTN rate).
    #[arg(long, global = true, value_parser = parse_noise)]
    pub noise: Option<NoiseKind>,

    /// Comma-separated couplings, e.g. 0.1,0.3,0.5.
    #[arg(long, global = true, value_delimiter = ',')]
    pub g: Option<Vec<f64>>,

    /// Root seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Scale preset; explicit sizes in the config file take precedence.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,

    /// Output directory for data/, models/, metrics/ and results/.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate a labelled dataset per coupling.
    Generate,
    /// Train one model per coupling; writes checkpoints, metrics and tables.
    Train,
    /// Optimize pulses for every gate and verify them by simulation.
    Optimize,
    /// Run the oracle checks and print a pass/fail table.
    Selftest,
    /// Rebuild and print the result tables.
    Report,
}

fn parse_noise(s: &str) -> Result<NoiseKind, String> {
    s.parse().map_err(|e: graybox::Error| e.to_string())
}

impl Cli {
    /// The configuration file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(noise) = self.noise {
            cfg.noise = noise;
        }
        if let Some(g) = &self.g {
            cfg.couplings = g.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(profile) = self.profile {
            cfg.profile = profile;
        }
        cfg.out = self.out.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Builds the global thread pool from [`THREADS_ENV`] if it is set.
pub fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

/// Runs one command; text for stdout on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    let cfg = cli.resolve()?;
    match cli.command {
        Command::Generate => {
            let paths = pipeline::generate(&cfg)?;
            Ok(paths.iter().map(|p| format!("wrote {}\n", p.display())).collect())
        }
        Command::Train => {
            let metrics = pipeline::train(&cfg)?;
            Ok(cfg
                .couplings
                .iter()
                .zip(&metrics)
                .map(|(g, m)| {
                    format!(
                        "g = {g}: mean test MSE {:.3e}, prediction error {:.4}\n",
                        m.mean_test_mse(),
                        m.prediction_error
                    )
                })
                .collect())
        }
        Command::Optimize => {
            let results = pipeline::optimize(&cfg)?;
            let mut out = String::new();
            for (g, rs) in cfg.couplings.iter().zip(&results) {
                for r in rs {
                    out.push_str(&format!(
                        "g = {g} {:<8} emulator {:.4}  verified {:.4}\n",
                        r.gate.name(),
                        r.emulator_fidelity,
                        r.verified_fidelity.unwrap_or(f64::NAN)
                    ));
                }
            }
            Ok(out)
        }
        Command::Report => pipeline::report(&cfg),
        Command::Selftest => {
            let opts = selftest::SelftestOptions { seed: graybox::RngSeed(cfg.seed), ..Default::default() };
            let report = selftest::run(&opts)?;
            let table = report.render();
            if report.passed() {
                Ok(table)
            } else {
                print!("{table}");
                Err(CliError::Check(format!("failed: {}", report.failed().join(", "))))
            }
        }
    }
}
