//! End-to-end reverse-mode gradients against central finite differences.

use graybox::blackbox::{backward, forward, forward_with_mask, ControlContext, Mode, ModelConfig, ModelParameters};
use graybox::pulses::INPUT_DIM;
use graybox::{NormalizedInput, RngSeed};
use rand::Rng;

const STEP: f64 = 1e-5;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= (1e-5 * analytic.abs().max(numeric.abs())).max(1e-8)
}

/// Randomized small model with every block (including the zero-initialized
/// refinement outputs) perturbed away from its initial value.
fn random_model(seed: u64) -> ModelParameters {
    let mut params = ModelParameters::init(ModelConfig::reduced(8), RngSeed(seed)).unwrap();
    let mut rng = RngSeed(seed).derive(1).rng();
    for v in params.values_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    params
}

fn random_input(seed: u64) -> NormalizedInput {
    let mut rng = RngSeed(seed).derive(2).rng();
    NormalizedInput(std::array::from_fn(|_| rng.random_range(0.02..0.98)))
}

fn weights(seed: u64) -> [f64; 6] {
    let mut rng = RngSeed(seed).derive(3).rng();
    std::array::from_fn(|_| rng.random_range(-1.0..1.0))
}

fn weighted(f: &[f64; 6], w: &[f64; 6]) -> f64 {
    f.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn check_point(seed: u64, mode: Mode) {
    let params = random_model(seed);
    let input = random_input(seed);
    let w = weights(seed);
    let out = forward(&params, &input, mode, RngSeed(seed)).unwrap();
    for f in out.trace.unclamped_fidelities() {
        assert!(f > 0.0 && f < 1.0, "fidelity {f} at the clamp");
    }
    let grads = backward(&params, &out.trace, &w).unwrap();
    let mask = out.trace.dropout_mask().to_vec();
    let steps = params.config().whitebox_steps;
    let ctx = ControlContext::new(&input, steps, false).unwrap();

    let loss_at = |p: &ModelParameters, u: &NormalizedInput, c: &ControlContext| {
        weighted(&forward_with_mask(p, u, c, &mask).unwrap().fidelities, &w)
    };

    let mut probe = params.clone();
    let base = params.to_flat();
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + STEP;
        probe.set_values(&values).unwrap();
        let up = loss_at(&probe, &input, &ctx);
        values[i] = base[i] - STEP;
        probe.set_values(&values).unwrap();
        let down = loss_at(&probe, &input, &ctx);
        values[i] = base[i];
        let fd = (up - down) / (2.0 * STEP);
        assert!(close(grads.params[i], fd), "param {i}: analytic {} vs fd {fd}", grads.params[i]);
    }

    for j in 0..INPUT_DIM {
        let mut u = input;
        u.0[j] += STEP;
        let up = loss_at(&params, &u, &ControlContext::new(&u, steps, false).unwrap());
        u.0[j] -= 2.0 * STEP;
        let down = loss_at(&params, &u, &ControlContext::new(&u, steps, false).unwrap());
        let fd = (up - down) / (2.0 * STEP);
        assert!(close(grads.input[j], fd), "input {j}: analytic {} vs fd {fd}", grads.input[j]);
    }
}

#[test]
fn eval_mode_gradients_match_finite_differences() {
    for seed in 0..10 {
        check_point(seed, Mode::Eval);
    }
}

#[test]
fn train_mode_gradients_match_finite_differences() {
    for seed in 100..110 {
        check_point(seed, Mode::Train);
    }
}
