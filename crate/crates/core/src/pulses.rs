//! Gaussian control pulse trains on the x and y axes.
//!
//! Each axis carries [`PULSE_COUNT`] Gaussians at fixed positions
//! τ_k = k·T/(N+1) with common width σ = T/(12N); only the amplitudes vary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::noise::{RngSeed, TimeGrid};

pub const PULSE_COUNT: usize = 5;
pub const INPUT_DIM: usize = 2 * PULSE_COUNT;
/// Default evolution time in µs.
pub const TOTAL_TIME: f64 = 3.2;
/// Amplitude bound in rad/µs.
pub const AMPLITUDE_MAX: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X = 0,
    Y = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    /// `amplitudes[axis][k]` in rad/µs.
    pub amplitudes: [[f64; PULSE_COUNT]; 2],
    pub total_time: f64,
}

impl Default for PulseTrain {
    fn default() -> Self {
        PulseTrain::zero()
    }
}

impl PulseTrain {
    pub fn zero() -> Self {
        PulseTrain { amplitudes: [[0.0; PULSE_COUNT]; 2], total_time: TOTAL_TIME }
    }

    pub fn new(x: [f64; PULSE_COUNT], y: [f64; PULSE_COUNT]) -> Result<Self> {
        let train = PulseTrain { amplitudes: [x, y], total_time: TOTAL_TIME };
        train.validate()?;
        Ok(train)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(param_err("pulse train duration must be positive"));
        }
        for &a in self.amplitudes.iter().flatten() {
            if !(a.abs() <= AMPLITUDE_MAX) {
                return Err(param_err(format!(
                    "amplitude {a} outside [-{AMPLITUDE_MAX}, {AMPLITUDE_MAX}]"
                )));
            }
        }
        Ok(())
    }

    /// Centre of pulse `k` (0-based).
    pub fn position(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.total_time / (PULSE_COUNT + 1) as f64
    }

    pub fn width(&self) -> f64 {
        self.total_time / (12 * PULSE_COUNT) as f64
    }

    /// Unit-height Gaussian envelope of pulse `k` at time `t`.
    #[inline]
    pub fn envelope(&self, k: usize, t: f64) -> f64 {
        let z = (t - self.position(k)) / self.width();
        (-z * z).exp()
    }

    pub fn field(&self, axis: Axis, t: f64) -> f64 {
        let amps = &self.amplitudes[axis as usize];
        (0..PULSE_COUNT).map(|k| amps[k] * self.envelope(k, t)).sum()
    }

    /// Amplitudes flattened as (x₁..x₅, y₁..y₅).
    pub fn flat(&self) -> [f64; INPUT_DIM] {
        std::array::from_fn(|i| self.amplitudes[i / PULSE_COUNT][i % PULSE_COUNT])
    }

    pub fn from_flat(values: &[f64; INPUT_DIM]) -> Result<Self> {
        let mut train = PulseTrain::zero();
        for (i, &v) in values.iter().enumerate() {
            train.amplitudes[i / PULSE_COUNT][i % PULSE_COUNT] = v;
        }
        train.validate()?;
        Ok(train)
    }

    pub fn render(&self, grid: &TimeGrid) -> Result<Waveforms> {
        if (grid.t_end() - self.total_time).abs() > 1e-12 * self.total_time {
            return Err(param_err(format!(
                "grid ends at {} but pulse train lasts {}",
                grid.t_end(),
                self.total_time
            )));
        }
        let mut fx = Vec::with_capacity(grid.steps());
        let mut fy = Vec::with_capacity(grid.steps());
        for t in grid.times() {
            let mut x = 0.0;
            let mut y = 0.0;
            for k in 0..PULSE_COUNT {
                let e = self.envelope(k, t);
                x += self.amplitudes[0][k] * e;
                y += self.amplitudes[1][k] * e;
            }
            fx.push(x);
            fy.push(y);
        }
        Ok(Waveforms { fx, fy })
    }

    pub fn normalize(&self) -> Result<NormalizedInput> {
        self.validate()?;
        let flat = self.flat();
        Ok(NormalizedInput(flat.map(|a| (a + AMPLITUDE_MAX) / (2.0 * AMPLITUDE_MAX))))
    }

    pub fn random(seed: RngSeed) -> Self {
        let mut rng = seed.rng();
        let mut train = PulseTrain::zero();
        for a in train.amplitudes.iter_mut().flatten() {
            *a = rng.random_range(-AMPLITUDE_MAX..=AMPLITUDE_MAX);
        }
        train
    }
}

/// Each amplitude i.i.d. uniform on [-A_max, A_max].
pub fn random_train(seed: RngSeed) -> PulseTrain {
    PulseTrain::random(seed)
}

/// Sampled control fields f_x(t_k), f_y(t_k).
#[derive(Clone, Debug, PartialEq)]
pub struct Waveforms {
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

/// The 10 amplitudes mapped affinely onto [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedInput(pub [f64; INPUT_DIM]);

impl NormalizedInput {
    pub fn new(values: [f64; INPUT_DIM]) -> Result<Self> {
        let input = NormalizedInput(values);
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(v) => Err(param_err(format!("normalized input {v} outside [0, 1]"))),
            None => Ok(()),
        }
    }

    pub fn denormalize(&self) -> Result<PulseTrain> {
        self.validate()?;
        let flat = self.0.map(|u| (2.0 * u - 1.0) * AMPLITUDE_MAX);
        PulseTrain::from_flat(&flat)
    }

    /// dA/du of the affine map.
    pub const fn amplitude_scale() -> f64 {
        2.0 * AMPLITUDE_MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_train_renders_zero() {
        let grid = TimeGrid::new(TOTAL_TIME, 100).unwrap();
        let w = PulseTrain::zero().render(&grid).unwrap();
        assert!(w.fx.iter().chain(&w.fy).all(|&v| v == 0.0));
        assert_eq!(w.fx.len(), 100);
    }

    #[test]
    fn peak_value_at_pulse_centre() {
        let mut train = PulseTrain::zero();
        train.amplitudes[0][2] = 10.0;
        let centre = train.position(2);
        assert!((centre - 3.0 * TOTAL_TIME / 6.0).abs() < 1e-15);
        assert!((train.field(Axis::X, centre) - 10.0).abs() < 1e-6);
        assert_eq!(train.field(Axis::Y, centre), 0.0);
    }

    #[test]
    fn single_pulse_area_by_trapezoid() {
        let mut train = PulseTrain::zero();
        train.amplitudes[0][1] = 37.0;
        let n = 3000;
        let h = TOTAL_TIME / n as f64;
        let f = |i: usize| train.field(Axis::X, i as f64 * h);
        let area = h * (0.5 * f(0) + (1..n).map(f).sum::<f64>() + 0.5 * f(n));
        let exact = 37.0 * train.width() * std::f64::consts::PI.sqrt();
        assert!((area - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn adjacent_pulses_barely_overlap() {
        let train = PulseTrain::zero();
        for k in 0..PULSE_COUNT - 1 {
            assert!(train.envelope(k, train.position(k + 1)) < 1e-6);
        }
    }

    #[test]
    fn render_rejects_grid_mismatch() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        assert!(PulseTrain::zero().render(&grid).is_err());
    }

    #[test]
    fn normalization_endpoints() {
        let mut train = PulseTrain::zero();
        train.amplitudes[0][0] = AMPLITUDE_MAX;
        train.amplitudes[1][4] = -AMPLITUDE_MAX;
        let n = train.normalize().unwrap();
        assert_eq!(n.0[0], 1.0);
        assert_eq!(n.0[9], 0.0);
        assert_eq!(n.0[3], 0.5);
    }

    #[test]
    fn out_of_range_values_rejected() {
        let mut train = PulseTrain::zero();
        train.amplitudes[1][1] = AMPLITUDE_MAX * 1.01;
        assert!(train.normalize().is_err());
        assert!(NormalizedInput::new([1.2; INPUT_DIM]).is_err());
        assert!(NormalizedInput([-0.1; INPUT_DIM]).denormalize().is_err());
    }

    #[test]
    fn random_trains_are_deterministic_and_bounded() {
        let a = random_train(RngSeed(42));
        assert_eq!(a, random_train(RngSeed(42)));
        assert_ne!(a, random_train(RngSeed(43)));
        for i in 0..200 {
            let t = random_train(RngSeed(i));
            assert!(t.amplitudes.iter().flatten().all(|v| v.abs() <= AMPLITUDE_MAX));
        }
    }
}
