//! `graybox selftest`: the oracle suite as a pass/fail table.

use graybox::whitebox::assemble_vo;
use graybox::{NoiseKind, NoiseModel, RngSeed};

use crate::checks::{self, VoAssembler};
use crate::error::CliResult;

#[derive(Clone, Debug)]
pub struct SelftestOptions {
    pub vo_assembler: VoAssembler,
    pub seed: RngSeed,
    /// Noise trajectories per statistical check.
    pub trajectories: usize,
    pub evolutions: usize,
    pub gradient_points: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            vo_assembler: assemble_vo,
            seed: RngSeed(0),
            trajectories: 100_000,
            evolutions: 10_000,
            gradient_points: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelftestReport {
    pub rows: Vec<CheckRow>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for r in &self.rows {
            let status = if r.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{status}  {:<width$}  {}\n", r.name, r.detail));
        }
        out
    }
}

fn row(name: impl Into<String>, passed: bool, detail: String) -> CheckRow {
    CheckRow { name: name.into(), passed, detail }
}

pub fn run(opts: &SelftestOptions) -> CliResult<SelftestReport> {
    let mut rows = Vec::new();
    let seed = opts.seed;

    for (n, kind) in [NoiseKind::Rtn, NoiseKind::Ou].into_iter().enumerate() {
        let model = NoiseModel::from_kind(kind, 1.0)?;
        let est = checks::autocorrelation(&model, opts.trajectories, seed.derive(10 + n as u64))?;
        let worst = est.iter().map(|e| e.sigmas()).fold(0.0, f64::max);
        rows.push(row(
            format!("{} autocorrelation", kind.name()),
            est.iter().all(|e| e.within(3.0)),
            format!("3 lags, worst {worst:.2} sigma"),
        ));

        let est = checks::free_coherence(&model, &[0.1, 0.5], &[0.8, 1.6, 3.2], opts.trajectories, seed.derive(20 + n as u64))?;
        let worst = est.iter().map(|(_, e)| e.sigmas()).fold(0.0, f64::max);
        rows.push(row(
            format!("{} coherence vs closed form", kind.name()),
            est.iter().all(|(_, e)| e.within(3.0)),
            format!("6 (g, t) pairs, worst {worst:.2} sigma"),
        ));
    }

    let unitaries = checks::random_evolutions(opts.evolutions, 3000, seed.derive(30))?;
    let err = checks::max_unitarity_error(&unitaries);
    rows.push(row("unitarity", err < 1e-10, format!("{} evolutions, max |U†U - 1| {err:.1e}", unitaries.len())));

    let sample = &unitaries[..unitaries.len().min(100)];
    let err = checks::chi_round_trip_error(sample, opts.vo_assembler)?;
    rows.push(row("chi round trip", err < 1e-9, format!("{} channels, max |F - 1| {err:.1e}", sample.len())));

    let err = checks::noiseless_vo_error(opts.vo_assembler)?;
    rows.push(row("noiseless V_O = 1", err < 1e-6, format!("max entry error {err:.1e}")));

    let err = checks::noiseless_expectation_error(sample, opts.vo_assembler)?;
    rows.push(row("noiseless expectations", err < 1e-6, format!("max error {err:.1e}")));

    let report = checks::gradient_check(opts.gradient_points, seed.derive(40))?;
    let detail = match &report.first_failure {
        Some(f) => f.clone(),
        None => format!("{} entries, worst relative {:.1e}", report.compared, report.worst_relative),
    };
    rows.push(row("gradients vs finite differences", report.passed(), detail));

    Ok(SelftestReport { rows })
}
