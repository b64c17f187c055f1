use graybox::noise::{match_spectrum, sample_batch};
use graybox::{NoiseKind, NoiseModel, RngSeed, TimeGrid};
use proptest::prelude::*;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_are_deterministic(gamma in 0.1..10.0f64, steps in 1..400usize, seed: u64, ou: bool) {
        let model = NoiseModel::from_kind(if ou { NoiseKind::Ou } else { NoiseKind::Rtn }, gamma).unwrap();
        let grid = TimeGrid::new(3.2, steps).unwrap();
        let a = model.sample(&grid, RngSeed(seed)).unwrap();
        let b = model.sample(&grid, RngSeed(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rtn_is_exactly_plus_minus_one(gamma in 0.01..50.0f64, steps in 1..500usize, seed: u64) {
        let grid = TimeGrid::new(3.2, steps).unwrap();
        let beta = NoiseModel::Rtn { gamma }.sample(&grid, RngSeed(seed)).unwrap();
        prop_assert!(beta.values.iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn ou_is_finite(gamma in 0.01..50.0f64, steps in 1..500usize, seed: u64) {
        let grid = TimeGrid::new(3.2, steps).unwrap();
        let beta = NoiseModel::from_kind(NoiseKind::Ou, gamma).unwrap().sample(&grid, RngSeed(seed)).unwrap();
        prop_assert!(beta.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn matched_ou_has_unit_variance(gamma in 1e-6..1e6f64) {
        let (k, d) = match_spectrum(gamma).unwrap();
        prop_assert_eq!(d / (2.0 * k), 1.0);
    }
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let grid = TimeGrid::new(3.2, 200).unwrap();
    for model in [NoiseModel::Rtn { gamma: 1.0 }, NoiseModel::Ou { k: 2.0, d: 4.0 }] {
        let one = in_pool(1, || sample_batch(&model, &grid, RngSeed(4), 64).unwrap());
        let four = in_pool(4, || sample_batch(&model, &grid, RngSeed(4), 64).unwrap());
        assert_eq!(one, four);
    }
}

#[test]
fn ou_sample_variance_is_stationary() {
    // Every time slice, including the first, has the stationary variance D/2k.
    let grid = TimeGrid::new(3.2, 50).unwrap();
    let n = 20_000;
    let batch = sample_batch(&NoiseModel::Ou { k: 2.0, d: 4.0 }, &grid, RngSeed(9), n).unwrap();
    for slot in [0, 25, 49] {
        let var = batch.iter().map(|b| b.values[slot].powi(2)).sum::<f64>() / n as f64;
        // Var of the estimate is 2σ⁴/n, so 5 standard errors is 5·√(2/n).
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt(), "slot {slot}: {var}");
    }
}
