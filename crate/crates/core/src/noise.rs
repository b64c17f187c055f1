//! Classical dephasing noise: random telegraph noise (RTN) and the
//! Ornstein-Uhlenbeck (OU) process, sampled on a midpoint time grid.
//!
//! Rates and couplings are angular frequencies in rad/µs; times are in µs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Seed for every stochastic routine. Sub-streams are derived with
/// [`RngSeed::derive`], so work can be split across threads without
/// changing results.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    /// Independent child seed for sub-stream `stream`.
    pub fn derive(self, stream: u64) -> RngSeed {
        RngSeed(splitmix(self.0 ^ splitmix(stream.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Uniform grid on [0, T] with `steps` cells, sampled at cell midpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(param_err("time grid needs at least one step"));
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(param_err(format!("time grid end must be positive, got {t_end}")));
        }
        Ok(TimeGrid { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    /// Midpoint of cell `k`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.steps).map(|k| self.time(k))
    }
}

/// Which classical process drives the dephasing term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    /// ±1 telegraph process with flip rate `gamma`.
    Rtn { gamma: f64 },
    /// Stationary OU process with relaxation rate `k` and diffusion `d`.
    Ou { k: f64, d: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Rtn { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(param_err(format!("RTN rate must be positive, got {gamma}")))
            }
            NoiseModel::Ou { k, .. } if !(k > 0.0 && k.is_finite()) => {
                Err(param_err(format!("OU rate must be positive, got {k}")))
            }
            NoiseModel::Ou { d, .. } if !(d >= 0.0 && d.is_finite()) => {
                Err(param_err(format!("OU diffusion must be non-negative, got {d}")))
            }
            _ => Ok(()),
        }
    }

    /// RTN with rate `gamma`, or the OU process with the same spectrum.
    pub fn from_kind(kind: NoiseKind, gamma: f64) -> Result<Self> {
        match kind {
            NoiseKind::Rtn => Ok(NoiseModel::Rtn { gamma }),
            NoiseKind::Ou => {
                let (k, d) = match_spectrum(gamma)?;
                Ok(NoiseModel::Ou { k, d })
            }
        }
    }

    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseModel::Rtn { .. } => NoiseKind::Rtn,
            NoiseModel::Ou { .. } => NoiseKind::Ou,
        }
    }

    pub fn sample(&self, grid: &TimeGrid, seed: RngSeed) -> Result<Trajectory> {
        match *self {
            NoiseModel::Rtn { gamma } => sample_rtn(gamma, grid, seed),
            NoiseModel::Ou { k, d } => sample_ou(k, d, grid, seed),
        }
    }

    /// Stationary two-time correlation ⟨β(t)β(t+τ)⟩.
    pub fn correlation(&self, tau: f64) -> f64 {
        match *self {
            NoiseModel::Rtn { gamma } => (-2.0 * gamma * tau.abs()).exp(),
            NoiseModel::Ou { k, d } => d / (2.0 * k) * (-k * tau.abs()).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Rtn,
    Ou,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Rtn => "rtn",
            NoiseKind::Ou => "ou",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rtn" => Ok(NoiseKind::Rtn),
            "ou" => Ok(NoiseKind::Ou),
            other => Err(param_err(format!("unknown noise kind `{other}`"))),
        }
    }
}

/// A noise realization β(t_k) on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub grid: TimeGrid,
}

impl Trajectory {
    /// Riemann sum ∫₀^{t_n} β ds over the first `n` cells.
    pub fn integral_upto(&self, n: usize) -> f64 {
        self.values[..n].iter().sum::<f64>() * self.grid.dt()
    }
}

pub fn sample_rtn(gamma: f64, grid: &TimeGrid, seed: RngSeed) -> Result<Trajectory> {
    NoiseModel::Rtn { gamma }.validate()?;
    let mut rng = seed.rng();
    let gaps = Exp::new(gamma).map_err(|e| param_err(e.to_string()))?;
    let mut state: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut next_flip: f64 = gaps.sample(&mut rng);
    let values = grid
        .times()
        .map(|t| {
            while next_flip < t {
                state = -state;
                next_flip += gaps.sample(&mut rng);
            }
            state
        })
        .collect();
    Ok(Trajectory { values, grid: *grid })
}

pub fn sample_ou(k: f64, d: f64, grid: &TimeGrid, seed: RngSeed) -> Result<Trajectory> {
    NoiseModel::Ou { k, d }.validate()?;
    let mut rng = seed.rng();
    let var = d / (2.0 * k);
    let decay = (-k * grid.dt()).exp();
    let kick = (var * (1.0 - decay * decay)).sqrt();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut beta = var.sqrt() * normal();
    let mut values = Vec::with_capacity(grid.steps());
    values.push(beta);
    for _ in 1..grid.steps() {
        beta = beta * decay + kick * normal();
        values.push(beta);
    }
    Ok(Trajectory { values, grid: *grid })
}

/// OU parameters whose Lorentzian spectrum equals that of unit RTN at rate `gamma`.
pub fn match_spectrum(gamma: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(param_err(format!("rate must be positive, got {gamma}")));
    }
    let k = 2.0 * gamma;
    Ok((k, 2.0 * k))
}

/// `count` trajectories, trajectory `i` seeded by `seed.derive(i)`.
pub fn sample_batch(
    model: &NoiseModel,
    grid: &TimeGrid,
    seed: RngSeed,
    count: usize,
) -> Result<Vec<Trajectory>> {
    model.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| model.sample(grid, seed.derive(i as u64)))
        .collect()
}

/// Closed-form ⟨cos(2g∫₀ᵗ β ds)⟩ for free dephasing (no controls).
pub fn analytic_free_coherence(model: &NoiseModel, g: f64, t: f64) -> Result<f64> {
    model.validate()?;
    if !(t >= 0.0) {
        return Err(param_err(format!("time must be non-negative, got {t}")));
    }
    let value = match *model {
        NoiseModel::Rtn { gamma } => {
            let disc = gamma * gamma - 4.0 * g * g;
            // cosh(νt) and sinh(νt)/ν, continued to cos/sin for ν² < 0.
            let (ch, sh_over) = if disc.abs() * t * t < 1e-8 {
                let x = disc * t * t;
                (1.0 + x / 2.0 + x * x / 24.0, t * (1.0 + x / 6.0 + x * x / 120.0))
            } else if disc > 0.0 {
                let nu = disc.sqrt();
                ((nu * t).cosh(), (nu * t).sinh() / nu)
            } else {
                let w = (-disc).sqrt();
                ((w * t).cos(), (w * t).sin() / w)
            };
            (-gamma * t).exp() * (ch + gamma * sh_over)
        }
        NoiseModel::Ou { k, d } => {
            let shape = t - (1.0 - (-k * t).exp()) / k;
            (-(2.0 * g * g * d / (k * k)) * shape).exp()
        }
    };
    Ok(value)
}
