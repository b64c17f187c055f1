use std::sync::Mutex;

use graybox::control::{
    optimize, optimize_objective, ControlObjective, ControlProblem, ControlSettings, QuadraticObjective,
};
use graybox::pulses::INPUT_DIM;
use graybox::{Gate, ModelConfig, ModelParameters, Result, RngSeed};
use rand::Rng;

fn model() -> ModelParameters {
    let mut params = ModelParameters::init(ModelConfig::reduced(8), RngSeed(3)).unwrap();
    let mut rng = RngSeed(4).rng();
    for v in params.values_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    params
}

fn settings() -> ControlSettings {
    ControlSettings { restarts: 4, max_iterations: 25, ..Default::default() }
}

#[test]
fn results_are_deterministic_and_best_of_restarts() {
    let model = model();
    let problem = ControlProblem { model: &model, gate: Gate::H, settings: settings() };
    let a = optimize(&problem, RngSeed(9)).unwrap();
    let b = optimize(&problem, RngSeed(9)).unwrap();
    assert_eq!(a, b);
    for trace in &a.restarts {
        if let Some(j) = trace.final_objective() {
            assert!(a.objective <= j);
        }
    }
    assert_eq!(a.best_input.0, a.restarts[a.best_restart].final_input);
    assert!((a.emulator_fidelity - (1.0 - a.objective)).abs() < 1e-15);
}

/// Quadratic objective that logs every point it is asked to evaluate.
struct Recording {
    inner: QuadraticObjective,
    seen: Mutex<Vec<[f64; INPUT_DIM]>>,
}

impl ControlObjective for Recording {
    fn evaluate(&self, input: &[f64; INPUT_DIM]) -> Result<(f64, [f64; INPUT_DIM])> {
        self.seen.lock().unwrap().push(*input);
        self.inner.evaluate(input)
    }
}

#[test]
fn every_evaluation_is_strictly_inside_the_box() {
    // Targets on the faces pull the iterates towards the boundary.
    let mut target = [0.0; INPUT_DIM];
    for (i, t) in target.iter_mut().enumerate() {
        *t = if i % 2 == 0 { 0.0 } else { 1.0 };
    }
    let obj = Recording { inner: QuadraticObjective { target }, seen: Mutex::new(Vec::new()) };
    let settings = ControlSettings { restarts: 3, max_iterations: 300, ..Default::default() };
    optimize_objective(&obj, &settings, RngSeed(1)).unwrap();
    let seen = obj.seen.into_inner().unwrap();
    let nearest_face = seen.iter().flatten().map(|u| u.min(1.0 - u)).fold(1.0, f64::min);
    assert!(nearest_face < 1e-3, "iterates never approached the faces ({nearest_face})");
    assert!(seen.iter().flatten().all(|u| *u > 0.0 && *u < 1.0));
}
