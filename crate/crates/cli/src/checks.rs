//! Oracle checks shared by `graybox selftest` and the acceptance suite.

use graybox::blackbox::{backward, forward, forward_with_mask, ControlContext};
use graybox::linalg::pairwise_sum;
use graybox::noise::analytic_free_coherence;
use graybox::pulses::{INPUT_DIM, TOTAL_TIME};
use graybox::simulator::evolve;
use graybox::whitebox::{
    chi_of_unitary, expectation, ideal_expectations, process_overlap, reconstruct_chi, OBSERVABLE_COUNT, PREP_COUNT,
};
use graybox::{
    ExpectationSet, Mat2, Mode, ModelConfig, ModelParameters, NoiseModel, NormalizedInput, PulseTrain, Result,
    RngSeed, TimeGrid, VOParams,
};
use rand::Rng;
use rayon::prelude::*;

/// Builds V_O from its parameters; injectable so a faulty assembly can be
/// shown to fail the checks.
pub type VoAssembler = fn(&VOParams, usize) -> Result<Mat2>;

/// Trajectories per parallel work unit; fixed so sums do not depend on the
/// thread count.
const CHUNK: usize = 1000;

/// Sum and sum of squares of `f` over trajectories 0..n, per output slot.
fn streamed_moments<F>(n: usize, slots: usize, f: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; slots];
            let mut sq = vec![0.0; slots];
            let mut buf = vec![0.0; slots];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(i, &mut buf)?;
                for s in 0..slots {
                    sum[s] += buf[s];
                    sq[s] += buf[s] * buf[s];
                }
            }
            Ok((sum, sq))
        })
        .collect::<Result<_>>()?;
    let column = |s: usize, sq: bool| {
        pairwise_sum(&chunks.iter().map(|c| if sq { c.1[s] } else { c.0[s] }).collect::<Vec<_>>())
    };
    let sums = (0..slots).map(|s| column(s, false)).collect();
    let sqs = (0..slots).map(|s| column(s, true)).collect();
    Ok((sums, sqs))
}

fn mean_and_stderr(sum: f64, sq: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let mean = sum / n;
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

/// A Monte-Carlo estimate next to its closed-form value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub at: f64,
    pub value: f64,
    pub stderr: f64,
    pub expected: f64,
}

impl Estimate {
    pub fn sigmas(&self) -> f64 {
        (self.value - self.expected).abs() / self.stderr
    }

    pub fn within(&self, sigmas: f64) -> bool {
        (self.value - self.expected).abs() <= sigmas * self.stderr
    }
}

/// Stationary autocorrelation written out from the model parameters.
pub fn closed_form_correlation(model: &NoiseModel, tau: f64) -> f64 {
    match *model {
        NoiseModel::Rtn { gamma } => (-2.0 * gamma * tau).exp(),
        NoiseModel::Ou { k, d } => d / (2.0 * k) * (-k * tau).exp(),
    }
}

pub const AUTOCORR_STEPS: usize = 320;
pub const AUTOCORR_ORIGIN: usize = 20;
pub const AUTOCORR_LAGS: [usize; 3] = [25, 50, 100];

/// ⟨β(t₀)β(t₀ + τ)⟩ at three lags on a 0.01 µs grid.
pub fn autocorrelation(model: &NoiseModel, trajectories: usize, seed: RngSeed) -> Result<Vec<Estimate>> {
    let grid = TimeGrid::new(TOTAL_TIME, AUTOCORR_STEPS)?;
    let (sum, sq) = streamed_moments(trajectories, AUTOCORR_LAGS.len(), |i, out| {
        let beta = model.sample(&grid, seed.derive(i as u64))?;
        let b0 = beta.values[AUTOCORR_ORIGIN];
        for (slot, lag) in AUTOCORR_LAGS.iter().enumerate() {
            out[slot] = b0 * beta.values[AUTOCORR_ORIGIN + lag];
        }
        Ok(())
    })?;
    Ok(AUTOCORR_LAGS
        .iter()
        .enumerate()
        .map(|(slot, &lag)| {
            let tau = lag as f64 * grid.dt();
            let (value, stderr) = mean_and_stderr(sum[slot], sq[slot], trajectories);
            Estimate { at: tau, value, stderr, expected: closed_form_correlation(model, tau) }
        })
        .collect())
}

pub const COHERENCE_STEPS: usize = 3000;

/// ⟨cos(2g∫₀ᵗβ)⟩ for every (g, t) pair, from one shared set of trajectories.
/// Times must be multiples of the 3000-step grid spacing.
pub fn free_coherence(
    model: &NoiseModel,
    couplings: &[f64],
    times: &[f64],
    trajectories: usize,
    seed: RngSeed,
) -> Result<Vec<(f64, Estimate)>> {
    let grid = TimeGrid::new(TOTAL_TIME, COHERENCE_STEPS)?;
    let cells: Vec<usize> = times.iter().map(|t| (t / grid.dt()).round() as usize).collect();
    let slots = couplings.len() * times.len();
    let (sum, sq) = streamed_moments(trajectories, slots, |i, out| {
        let beta = model.sample(&grid, seed.derive(i as u64))?;
        for (ti, &n) in cells.iter().enumerate() {
            let phase = beta.integral_upto(n);
            for (gi, g) in couplings.iter().enumerate() {
                out[gi * times.len() + ti] = (2.0 * g * phase).cos();
            }
        }
        Ok(())
    })?;
    let mut out = Vec::with_capacity(slots);
    for (gi, &g) in couplings.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            let s = gi * times.len() + ti;
            let (value, stderr) = mean_and_stderr(sum[s], sq[s], trajectories);
            out.push((g, Estimate { at: t, value, stderr, expected: analytic_free_coherence(model, g, t)? }));
        }
    }
    Ok(out)
}

/// Closed-loop unitaries from random pulses under random noise.
pub fn random_evolutions(count: usize, steps: usize, seed: RngSeed) -> Result<Vec<Mat2>> {
    let grid = TimeGrid::new(TOTAL_TIME, steps)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = seed.derive(i as u64);
            let train = PulseTrain::random(s.derive(0));
            let noise = if i % 2 == 0 { NoiseModel::Rtn { gamma: 1.0 } } else { NoiseModel::Ou { k: 2.0, d: 4.0 } };
            let g = s.derive(1).rng().random_range(0.0..1.0);
            evolve(&train, &noise.sample(&grid, s.derive(2))?, g, &grid)
        })
        .collect()
}

pub fn max_unitarity_error(unitaries: &[Mat2]) -> f64 {
    unitaries.iter().map(Mat2::unitarity_error).fold(0.0, f64::max)
}

/// Expectations of ρ ↦ UρU† computed through noiseless V_O operators.
pub fn expectations_via_vo(u: &Mat2, assembler: VoAssembler) -> Result<ExpectationSet> {
    let mut flat = [0.0; PREP_COUNT * OBSERVABLE_COUNT];
    for o in 0..OBSERVABLE_COUNT {
        let vo = assembler(&VOParams::noiseless(o), o)?;
        for p in 0..PREP_COUNT {
            flat[p * OBSERVABLE_COUNT + o] = expectation(&vo, u, p, o);
        }
    }
    Ok(ExpectationSet::from_flat(&flat))
}

/// Largest |F − 1| when each unitary channel is measured through V_O,
/// reconstructed as χ and compared with its exact χ.
pub fn chi_round_trip_error(unitaries: &[Mat2], assembler: VoAssembler) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for u in unitaries {
        let chi = reconstruct_chi(&expectations_via_vo(u, assembler)?);
        worst = worst.max((process_overlap(&chi, &chi_of_unitary(u)) - 1.0).abs());
    }
    Ok(worst)
}

/// Largest entry of V_O − 1 over the three noiseless operators.
pub fn noiseless_vo_error(assembler: VoAssembler) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for o in 0..OBSERVABLE_COUNT {
        worst = worst.max(assembler(&VOParams::noiseless(o), o)?.max_abs_diff(&Mat2::identity()));
    }
    Ok(worst)
}

/// Largest deviation between V_O-based and direct noiseless expectations.
pub fn noiseless_expectation_error(unitaries: &[Mat2], assembler: VoAssembler) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for u in unitaries {
        let via = expectations_via_vo(u, assembler)?.flat();
        let direct = ideal_expectations(u).flat();
        for (a, b) in via.iter().zip(&direct) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub points: usize,
    pub compared: usize,
    pub failures: usize,
    /// Largest |analytic − FD| / max(|analytic|, |FD|) among entries above the
    /// absolute floor.
    pub worst_relative: f64,
    pub first_failure: Option<String>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

const FD_STEP: f64 = 1e-5;
const FD_RELATIVE: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-8;

/// Central finite differences of a random weighted sum of fidelities against
/// reverse mode, for all parameters and inputs of a d_model = 8 model.
/// Half the points run in train mode with the dropout mask held fixed.
pub fn gradient_check(points: usize, seed: RngSeed) -> Result<GradientReport> {
    let mut report =
        GradientReport { points, compared: 0, failures: 0, worst_relative: 0.0, first_failure: None };
    for point in 0..points {
        let s = seed.derive(point as u64);
        let mut params = ModelParameters::init(ModelConfig::reduced(8), s)?;
        let mut rng = s.derive(1).rng();
        for v in params.values_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let input = NormalizedInput(std::array::from_fn(|_| rng.random_range(0.02..0.98)));
        let w: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mode = if point % 2 == 0 { Mode::Eval } else { Mode::Train };

        let out = forward(&params, &input, mode, s.derive(2))?;
        let grads = backward(&params, &out.trace, &w)?;
        let mask = out.trace.dropout_mask().to_vec();
        let steps = params.config().whitebox_steps;
        let ctx = ControlContext::new(&input, steps, false)?;
        let loss = |p: &ModelParameters, u: &NormalizedInput, c: &ControlContext| -> Result<f64> {
            let f = forward_with_mask(p, u, c, &mask)?.fidelities;
            Ok(f.iter().zip(&w).map(|(a, b)| a * b).sum())
        };

        let mut record = |what: String, analytic: f64, fd: f64| {
            report.compared += 1;
            let scale = analytic.abs().max(fd.abs());
            let diff = (analytic - fd).abs();
            if diff > FD_FLOOR {
                report.worst_relative = report.worst_relative.max(diff / scale);
            }
            if diff > (FD_RELATIVE * scale).max(FD_FLOOR) {
                report.failures += 1;
                report.first_failure.get_or_insert(format!("point {point} {what}: analytic {analytic} vs fd {fd}"));
            }
        };

        let base = params.to_flat();
        let mut probe = params.clone();
        let mut values = base.clone();
        for i in 0..base.len() {
            values[i] = base[i] + FD_STEP;
            probe.set_values(&values)?;
            let up = loss(&probe, &input, &ctx)?;
            values[i] = base[i] - FD_STEP;
            probe.set_values(&values)?;
            let down = loss(&probe, &input, &ctx)?;
            values[i] = base[i];
            record(format!("param {i}"), grads.params[i], (up - down) / (2.0 * FD_STEP));
        }
        for j in 0..INPUT_DIM {
            let mut u = input;
            u.0[j] += FD_STEP;
            let up = loss(&params, &u, &ControlContext::new(&u, steps, false)?)?;
            u.0[j] -= 2.0 * FD_STEP;
            let down = loss(&params, &u, &ControlContext::new(&u, steps, false)?)?;
            record(format!("input {j}"), grads.input[j], (up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}
