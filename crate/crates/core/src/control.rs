//! Pulse optimization against the trained emulator.
//!
//! The objective J = 1 − F lives on the normalized box [0, 1]¹⁰. Each
//! coordinate is reparameterized as u = sigmoid(z), and L-BFGS with a
//! strong-Wolfe line search runs on the unconstrained z from several random
//! starts.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::{backward, forward, Mode, ModelParameters};
use crate::blackbox::layers::sigmoid;
use crate::error::{param_err, Error, Result};
use crate::noise::RngSeed;
use crate::pulses::{NormalizedInput, INPUT_DIM};
use crate::simulator::{simulate_gate_fidelity, SimConfig};
use crate::whitebox::Gate;

/// Smallest distance kept from the box faces.
const BOX_MARGIN: f64 = 1e-12;

/// A differentiable scalar objective on the normalized box.
pub trait ControlObjective: Sync {
    fn evaluate(&self, input: &[f64; INPUT_DIM]) -> Result<(f64, [f64; INPUT_DIM])>;
}

/// J = 1 − F_gate from an eval-mode forward pass.
pub struct ModelObjective<'a> {
    pub model: &'a ModelParameters,
    pub gate: Gate,
}

impl ControlObjective for ModelObjective<'_> {
    fn evaluate(&self, input: &[f64; INPUT_DIM]) -> Result<(f64, [f64; INPUT_DIM])> {
        objective(self.model, self.gate, input)
    }
}

/// Σ (u − target)², for optimizer checks.
pub struct QuadraticObjective {
    pub target: [f64; INPUT_DIM],
}

impl ControlObjective for QuadraticObjective {
    fn evaluate(&self, input: &[f64; INPUT_DIM]) -> Result<(f64, [f64; INPUT_DIM])> {
        let d: [f64; INPUT_DIM] = std::array::from_fn(|i| input[i] - self.target[i]);
        Ok((d.iter().map(|v| v * v).sum(), d.map(|v| 2.0 * v)))
    }
}

pub fn objective(model: &ModelParameters, gate: Gate, input: &[f64; INPUT_DIM]) -> Result<(f64, [f64; INPUT_DIM])> {
    let input = NormalizedInput::new(*input)?;
    let out = forward(model, &input, Mode::Eval, RngSeed(0))?;
    let j = 1.0 - out.fidelities[gate.index()];
    let mut dl = [0.0; Gate::COUNT];
    dl[gate.index()] = -1.0;
    let grads = backward(model, &out.trace, &dl)?;
    if !j.is_finite() || grads.input.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { layer: "objective".into() });
    }
    Ok((j, grads.input))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlSettings {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when the ∞-norm of the gradient in z falls below this.
    pub tolerance: f64,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings { restarts: 8, max_iterations: 200, tolerance: 1e-6, memory: 10, c1: 1e-4, c2: 0.1 }
    }
}

impl ControlSettings {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.memory == 0 {
            return Err(param_err("restarts and memory must be at least 1"));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(param_err("Wolfe constants need 0 < c1 < c2 < 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(param_err("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ControlProblem<'a> {
    pub model: &'a ModelParameters,
    pub gate: Gate,
    pub settings: ControlSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
    /// The starting point could not be evaluated.
    StartFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub initial: [f64; INPUT_DIM],
    pub final_input: [f64; INPUT_DIM],
    /// J at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl RestartTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective.last().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub gate: Gate,
    pub best_input: NormalizedInput,
    pub best_restart: usize,
    pub objective: f64,
    pub emulator_fidelity: f64,
    pub verified_fidelity: Option<f64>,
    pub restarts: Vec<RestartTrace>,
}

fn to_box(z: &[f64]) -> [f64; INPUT_DIM] {
    std::array::from_fn(|i| sigmoid(z[i]).clamp(BOX_MARGIN, 1.0 - BOX_MARGIN))
}

fn from_box(u: f64) -> f64 {
    let u = u.clamp(1e-9, 1.0 - 1e-9);
    (u / (1.0 - u)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Objective in z together with its gradient by the chain rule.
struct Reparameterized<'a> {
    inner: &'a dyn ControlObjective,
    evaluations: usize,
}

impl Reparameterized<'_> {
    fn eval(&mut self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let u = to_box(z);
        let (j, g) = self.inner.evaluate(&u).ok()?;
        let grad: Vec<f64> = (0..INPUT_DIM)
            .map(|i| {
                let s = sigmoid(z[i]);
                g[i] * s * (1.0 - s)
            })
            .collect();
        (j.is_finite() && grad.iter().all(|v| v.is_finite())).then_some((j, grad))
    }
}

struct Point {
    alpha: f64,
    f: f64,
    slope: f64,
    grad: Vec<f64>,
}

/// Strong-Wolfe line search along `dir` from `x`.
fn line_search(
    obj: &mut Reparameterized,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    alpha_init: f64,
    s: &ControlSettings,
) -> Option<Point> {
    const MAX_TRIALS: usize = 40;
    let probe = |obj: &mut Reparameterized, alpha: f64| -> Point {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        match obj.eval(&trial) {
            Some((f, grad)) => Point { alpha, f, slope: dot(&grad, dir), grad },
            None => Point { alpha, f: f64::INFINITY, slope: f64::NAN, grad: Vec::new() },
        }
    };
    let armijo = |p: &Point| p.f <= f0 + s.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -s.c2 * slope0;

    let mut prev = Point { alpha: 0.0, f: f0, slope: slope0, grad: Vec::new() };
    let mut alpha = alpha_init;
    for i in 0..MAX_TRIALS {
        let cur = probe(obj, alpha);
        if !armijo(&cur) || (i > 0 && cur.f >= prev.f) {
            return zoom(obj, prev, cur, f0, slope0, s, &probe);
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(obj, cur, prev, f0, slope0, s, &probe);
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    }
    None
}

fn zoom(
    obj: &mut Reparameterized,
    mut lo: Point,
    mut hi: Point,
    f0: f64,
    slope0: f64,
    s: &ControlSettings,
    probe: &dyn Fn(&mut Reparameterized, f64) -> Point,
) -> Option<Point> {
    const MAX_TRIALS: usize = 40;
    for _ in 0..MAX_TRIALS {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        if b - a < 1e-14 * b.max(1.0) {
            break;
        }
        let alpha = interpolate(&lo, &hi).filter(|t| *t > a + 0.1 * (b - a) && *t < b - 0.1 * (b - a))
            .unwrap_or(0.5 * (a + b));
        let cur = probe(obj, alpha);
        if cur.f > f0 + s.c1 * alpha * slope0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.slope.abs() <= -s.c2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Accept a sufficient-decrease point rather than failing outright.
    (lo.alpha > 0.0 && !lo.grad.is_empty()).then_some(lo)
}

/// Minimizer of the cubic through two points with slopes.
fn interpolate(p: &Point, q: &Point) -> Option<f64> {
    if !(p.f.is_finite() && q.f.is_finite() && p.slope.is_finite() && q.slope.is_finite()) {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    let t = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// L-BFGS from one starting point in the box.
pub fn minimize(
    objective: &dyn ControlObjective,
    start: &[f64; INPUT_DIM],
    settings: &ControlSettings,
    restart: usize,
) -> RestartTrace {
    let mut obj = Reparameterized { inner: objective, evaluations: 0 };
    let mut x: Vec<f64> = start.iter().map(|&u| from_box(u)).collect();
    let mut trace = RestartTrace {
        restart,
        initial: to_box(&x),
        final_input: to_box(&x),
        objective: Vec::new(),
        iterations: 0,
        evaluations: 0,
        termination: Termination::MaxIterations,
    };
    let Some((mut f, mut g)) = obj.eval(&x) else {
        trace.termination = Termination::StartFailure;
        trace.evaluations = obj.evaluations;
        return trace;
    };
    trace.objective.push(f);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.memory);

    for iter in 0..settings.max_iterations {
        if inf_norm(&g) < settings.tolerance {
            trace.termination = Termination::GradientTolerance;
            break;
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let alpha0 = if history.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let Some(step) = line_search(&mut obj, &x, f, slope, &dir, alpha0, settings) else {
            trace.termination = Termination::LineSearchFailure;
            break;
        };
        let s_vec: Vec<f64> = dir.iter().map(|d| step.alpha * d).collect();
        let y_vec: Vec<f64> = step.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s_vec, &y_vec);
        x.iter_mut().zip(&s_vec).for_each(|(xi, si)| *xi += si);
        f = step.f;
        g = step.grad;
        trace.objective.push(f);
        trace.iterations = iter + 1;
        if sy > 1e-12 * dot(&y_vec, &y_vec).sqrt() * dot(&s_vec, &s_vec).sqrt() {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s_vec, y_vec, 1.0 / sy));
        }
    }
    if trace.termination == Termination::MaxIterations && inf_norm(&g) < settings.tolerance {
        trace.termination = Termination::GradientTolerance;
    }
    trace.final_input = to_box(&x);
    trace.evaluations = obj.evaluations;
    trace
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|v| -v).collect()
}

/// Multi-start minimization of any objective on the box.
pub fn optimize_objective(
    objective: &dyn ControlObjective,
    settings: &ControlSettings,
    seed: RngSeed,
) -> Result<(usize, Vec<RestartTrace>)> {
    settings.validate()?;
    let restarts: Vec<RestartTrace> = (0..settings.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed.derive(r as u64).rng();
            let start: [f64; INPUT_DIM] = std::array::from_fn(|_| rng.random::<f64>());
            minimize(objective, &start, settings, r)
        })
        .collect();
    let best = restarts
        .iter()
        .filter(|t| t.iterations > 0 || t.termination == Termination::GradientTolerance)
        .filter_map(|t| t.final_objective().map(|j| (t.restart, j)))
        .fold(None, |acc: Option<(usize, f64)>, (r, j)| match acc {
            Some((_, bj)) if bj <= j => acc,
            _ => Some((r, j)),
        });
    match best {
        Some((r, _)) => Ok((r, restarts)),
        None => Err(Error::Optimization("every restart failed before its first step".into())),
    }
}

pub fn optimize(problem: &ControlProblem, seed: RngSeed) -> Result<ControlResult> {
    let objective = ModelObjective { model: problem.model, gate: problem.gate };
    let (best, restarts) = optimize_objective(&objective, &problem.settings, seed)?;
    let trace = &restarts[best];
    let j = trace.final_objective().expect("best restart has an objective");
    Ok(ControlResult {
        gate: problem.gate,
        best_input: NormalizedInput(trace.final_input),
        best_restart: best,
        objective: j,
        emulator_fidelity: (1.0 - j).clamp(0.0, 1.0),
        verified_fidelity: None,
        restarts,
    })
}

/// Optimizes, then verifies the best pulses with the Monte-Carlo simulator.
pub fn optimize_and_verify(problem: &ControlProblem, sim: &SimConfig, seed: RngSeed) -> Result<ControlResult> {
    let mut result = optimize(problem, seed)?;
    let train = result.best_input.denormalize()?;
    result.verified_fidelity = Some(simulate_gate_fidelity(&train, sim, problem.gate)?);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_recovers_target() {
        let target = [0.1, 0.9, 0.5, 0.33, 0.72, 0.05, 0.61, 0.27, 0.88, 0.45];
        let settings = ControlSettings { tolerance: 1e-12, restarts: 32, ..Default::default() };
        let (best, traces) = optimize_objective(&QuadraticObjective { target }, &settings, RngSeed(2)).unwrap();
        assert!(traces[best].iterations < 50, "{} iterations", traces[best].iterations);
        let u = traces[best].final_input;
        for i in 0..INPUT_DIM {
            assert!((u[i] - target[i]).abs() < 1e-8);
        }
        let mut iterations: Vec<usize> = traces.iter().map(|t| t.iterations).collect();
        iterations.sort_unstable();
        assert!(iterations[16] < 50, "median {} iterations", iterations[16]);
    }

    #[test]
    fn accepted_steps_never_increase_j() {
        let target = [0.3; INPUT_DIM];
        let (_, traces) = optimize_objective(&QuadraticObjective { target }, &ControlSettings::default(), RngSeed(8)).unwrap();
        for t in &traces {
            assert!(t.objective.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    struct Failing;
    impl ControlObjective for Failing {
        fn evaluate(&self, _: &[f64; INPUT_DIM]) -> Result<(f64, [f64; INPUT_DIM])> {
            Err(Error::NonFinite { layer: "test".into() })
        }
    }

    #[test]
    fn all_failed_starts_is_an_error() {
        assert!(matches!(
            optimize_objective(&Failing, &ControlSettings::default(), RngSeed(1)),
            Err(Error::Optimization(_))
        ));
    }

    #[test]
    fn reparameterization_stays_inside_box() {
        for z in [-1e3, -40.0, 0.0, 40.0, 1e3] {
            let u = to_box(&[z; INPUT_DIM]);
            assert!(u.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!((sigmoid(from_box(0.37)) - 0.37).abs() < 1e-14);
    }

    #[test]
    fn settings_validation() {
        assert!(ControlSettings { restarts: 0, ..Default::default() }.validate().is_err());
        assert!(ControlSettings { c1: 0.95, ..Default::default() }.validate().is_err());
    }
}
