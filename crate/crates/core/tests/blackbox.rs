use graybox::blackbox::{forward_with_context, ControlContext};
use graybox::pulses::INPUT_DIM;
use graybox::{Mode, ModelConfig, ModelParameters, NormalizedInput, RngSeed};
use rand::Rng;
use rayon::prelude::*;

#[test]
fn eval_forward_is_finite_on_the_hypercube() {
    // Randomized weights so the V_O heads see a spread of pre-activations.
    let mut params = ModelParameters::init(ModelConfig::default(), RngSeed(1)).unwrap();
    let mut rng = RngSeed(2).rng();
    for v in params.values_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let steps = params.config().whitebox_steps;
    let bad: Vec<usize> = (0..10_000usize)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = RngSeed(3).derive(i as u64).rng();
            // Every tenth point sits on a corner of the hypercube.
            let input: [f64; INPUT_DIM] = if i % 10 == 0 {
                std::array::from_fn(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            } else {
                std::array::from_fn(|_| rng.random_range(0.0..=1.0))
            };
            let input = NormalizedInput::new(input).unwrap();
            let ctx = ControlContext::new(&input, steps, false).unwrap();
            let out = forward_with_context(&params, &input, &ctx, Mode::Eval, RngSeed(0)).unwrap();
            let vo_ok = out.vo_params.iter().all(|p| {
                p.mu > 0.0 && p.mu < 1.0 && p.theta.is_finite() && p.psi.is_finite() && p.delta.is_finite()
            });
            let f_ok = out.fidelities.iter().all(|f| (0.0..=1.0).contains(f));
            let e_ok = out.refined_expectations.iter().flat_map(|e| e.flat()).all(f64::is_finite);
            !(vo_ok && f_ok && e_ok)
        })
        .collect();
    assert!(bad.is_empty(), "{} bad points, first {:?}", bad.len(), bad.first());
}
