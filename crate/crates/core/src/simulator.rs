//! Monte-Carlo ground truth: evolve the qubit under H(t) = f_x σx + f_y σy +
//! g β(t) σz for sampled noise trajectories and average Pauli expectations.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::linalg::{pairwise_sum_rows, Mat2, C64, I};
use crate::noise::{NoiseKind, NoiseModel, RngSeed, TimeGrid, Trajectory};
use crate::pulses::{NormalizedInput, PulseTrain, Waveforms, TOTAL_TIME};
use crate::whitebox::{
    gate_fidelity, observable, prep_state, ExpectationSet, Gate, EXPECTATION_COUNT, OBSERVABLE_COUNT,
    PREP_COUNT,
};

pub use crate::linalg::Unitary2;

#[inline]
fn sinc(a: f64) -> f64 {
    if a.abs() < 1e-4 {
        let a2 = a * a;
        1.0 - a2 / 6.0 + a2 * a2 / 120.0
    } else {
        a.sin() / a
    }
}

/// (a cos a − sin a) / a³, the derivative kernel of sinc.
#[inline]
fn sinc_kernel(a: f64) -> f64 {
    if a.abs() < 1e-2 {
        let a2 = a * a;
        -1.0 / 3.0 + a2 / 30.0 - a2 * a2 / 840.0
    } else {
        (a * a.cos() - a.sin()) / (a * a * a)
    }
}

#[inline]
fn su2(c: f64, sx: f64, sy: f64, sz: f64) -> Mat2 {
    // c·I − i(sx σx + sy σy + sz σz)
    Mat2::new(C64::new(c, -sz), C64::new(-sy, -sx), C64::new(sy, -sx), C64::new(c, sz))
}

/// exp(−i (h·σ) dt) in closed form.
#[inline]
pub fn step_exponential(hx: f64, hy: f64, hz: f64, dt: f64) -> Unitary2 {
    let norm = (hx * hx + hy * hy + hz * hz).sqrt();
    let a = norm * dt;
    let s = dt * sinc(a);
    su2(a.cos(), hx * s, hy * s, hz * s)
}

/// Step exponential and its partial derivatives with respect to (hx, hy, hz).
pub fn step_exponential_with_grad(hx: f64, hy: f64, hz: f64, dt: f64) -> (Unitary2, [Mat2; 3]) {
    let h = [hx, hy, hz];
    let norm = (hx * hx + hy * hy + hz * hz).sqrt();
    let a = norm * dt;
    let sn = sinc(a);
    let q = sinc_kernel(a);
    let s = dt * sn;
    let u = su2(a.cos(), hx * s, hy * s, hz * s);
    let dt3 = dt * dt * dt;
    let grads = std::array::from_fn(|l| {
        let dc = -dt * dt * h[l] * sn;
        let ds: [f64; 3] = std::array::from_fn(|j| {
            let diag = if j == l { dt * sn } else { 0.0 };
            diag + dt3 * h[j] * h[l] * q
        });
        su2(dc, ds[0], ds[1], ds[2])
    });
    (u, grads)
}

/// Time-ordered product over the grid: earliest step acts first.
pub fn evolve_waveforms(waveforms: &Waveforms, beta: &Trajectory, g: f64) -> Result<Unitary2> {
    let steps = beta.grid.steps();
    if waveforms.fx.len() != steps || waveforms.fy.len() != steps {
        return Err(param_err("waveforms and noise trajectory are on different grids"));
    }
    let dt = beta.grid.dt();
    let mut u = Mat2::identity();
    for k in 0..steps {
        u = step_exponential(waveforms.fx[k], waveforms.fy[k], g * beta.values[k], dt) * u;
    }
    Ok(u)
}

pub fn evolve(train: &PulseTrain, beta: &Trajectory, g: f64, grid: &TimeGrid) -> Result<Unitary2> {
    if beta.grid != *grid {
        return Err(param_err("noise trajectory does not live on the requested grid"));
    }
    let waveforms = train.render(grid)?;
    evolve_waveforms(&waveforms, beta, g)
}

/// Monte-Carlo configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: TimeGrid,
    pub realizations: usize,
    pub coupling: f64,
    pub noise: NoiseModel,
    pub seed: RngSeed,
}

impl SimConfig {
    /// T = 3.2 µs, M = 3000, K = 2000.
    pub fn paper(noise: NoiseModel, coupling: f64) -> Self {
        SimConfig {
            grid: TimeGrid::new(TOTAL_TIME, 3000).expect("static grid"),
            realizations: 2000,
            coupling,
            noise,
            seed: RngSeed(0),
        }
    }

    /// Reduced grid and ensemble (M = 1000, K = 500).
    pub fn desk(noise: NoiseModel, coupling: f64) -> Self {
        SimConfig {
            grid: TimeGrid::new(TOTAL_TIME, 1000).expect("static grid"),
            realizations: 500,
            ..SimConfig::paper(noise, coupling)
        }
    }

    pub fn with_seed(mut self, seed: RngSeed) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations < 1 {
            return Err(param_err("need at least one noise realization"));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(param_err(format!("coupling must be non-negative, got {}", self.coupling)));
        }
        self.noise.validate()
    }
}

/// The 18 values tr[U ρ₀ U† σ_α] for one unitary.
fn trajectory_expectations(u: &Mat2) -> [f64; EXPECTATION_COUNT] {
    let mut out = [0.0; EXPECTATION_COUNT];
    for p in 0..PREP_COUNT {
        let rho = *u * prep_state(p) * u.adjoint();
        for o in 0..OBSERVABLE_COUNT {
            out[p * OBSERVABLE_COUNT + o] = rho.trace_mul(&observable(o)).re;
        }
    }
    out
}

fn per_trajectory(train: &PulseTrain, config: &SimConfig) -> Result<Vec<[f64; EXPECTATION_COUNT]>> {
    config.validate()?;
    let waveforms = train.render(&config.grid)?;
    (0..config.realizations)
        .into_par_iter()
        .map(|i| {
            let beta = config.noise.sample(&config.grid, config.seed.derive(i as u64))?;
            let u = evolve_waveforms(&waveforms, &beta, config.coupling)?;
            Ok(trajectory_expectations(&u))
        })
        .collect()
}

/// Noise-averaged expectations over K trajectories.
pub fn expectations_mc(train: &PulseTrain, config: &SimConfig) -> Result<ExpectationSet> {
    Ok(expectations_mc_with_stderr(train, config)?.0)
}

/// Mean expectations together with their Monte-Carlo standard errors.
pub fn expectations_mc_with_stderr(
    train: &PulseTrain,
    config: &SimConfig,
) -> Result<(ExpectationSet, ExpectationSet)> {
    let rows = per_trajectory(train, config)?;
    let k = rows.len() as f64;
    let mean = pairwise_sum_rows(&rows).map(|s| s / k);
    let sq: Vec<[f64; EXPECTATION_COUNT]> = rows
        .iter()
        .map(|r| std::array::from_fn(|i| (r[i] - mean[i]) * (r[i] - mean[i])))
        .collect();
    let var = pairwise_sum_rows(&sq).map(|s| if k > 1.0 { s / (k - 1.0) } else { 0.0 });
    let stderr = var.map(|v| (v / k).sqrt());
    Ok((ExpectationSet::from_flat(&mean), ExpectationSet::from_flat(&stderr)))
}

/// One supervised example: pulses in, Monte-Carlo gate fidelities out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub index: usize,
    pub input: NormalizedInput,
    pub expectations: ExpectationSet,
    /// Ordered as [`Gate::ALL`].
    pub fidelities: [f64; Gate::COUNT],
    pub coupling: f64,
    pub noise: NoiseKind,
    pub seed: RngSeed,
}

pub fn fidelity_labels(expectations: &ExpectationSet) -> [f64; Gate::COUNT] {
    Gate::ALL.map(|g| gate_fidelity(expectations, g))
}

/// Record `index` of the dataset defined by (`config`, `seed`).
pub fn generate_record(index: usize, config: &SimConfig, seed: RngSeed) -> Result<DatasetRecord> {
    let train = PulseTrain::random(seed.derive(2 * index as u64));
    let noise_seed = seed.derive(2 * index as u64 + 1);
    let expectations = expectations_mc(&train, &config.with_seed(noise_seed))?;
    Ok(DatasetRecord {
        index,
        input: train.normalize()?,
        expectations,
        fidelities: fidelity_labels(&expectations),
        coupling: config.coupling,
        noise: config.noise.kind(),
        seed: noise_seed,
    })
}

/// A contiguous slice of records; concatenating slices gives the full dataset.
pub fn generate_records(range: Range<usize>, config: &SimConfig, seed: RngSeed) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    range.into_par_iter().map(|i| generate_record(i, config, seed)).collect()
}

pub fn generate_dataset(count: usize, config: &SimConfig, seed: RngSeed) -> Result<Vec<DatasetRecord>> {
    if count == 0 {
        return Err(param_err("dataset must contain at least one record"));
    }
    generate_records(0..count, config, seed)
}

/// Monte-Carlo process fidelity of `train` against one target gate.
pub fn simulate_gate_fidelity(train: &PulseTrain, config: &SimConfig, gate: Gate) -> Result<f64> {
    Ok(gate_fidelity(&expectations_mc(train, config)?, gate))
}

/// Monte-Carlo fidelities against all six gates from one ensemble.
pub fn simulate_all_fidelities(train: &PulseTrain, config: &SimConfig) -> Result<[f64; Gate::COUNT]> {
    Ok(fidelity_labels(&expectations_mc(train, config)?))
}

/// −i σ for an axis, handy in tests.
pub fn minus_i_pauli(axis: usize) -> Mat2 {
    Mat2::pauli(axis).scale(-I)
}
