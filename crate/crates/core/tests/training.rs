use graybox::simulator::generate_dataset;
use graybox::training::{split_indices, train, TrainConfig};
use graybox::{DatasetRecord, ModelConfig, NoiseModel, RngSeed, SimConfig, TimeGrid};
use proptest::prelude::*;

fn small_dataset(count: usize) -> Vec<DatasetRecord> {
    let sim = SimConfig {
        grid: TimeGrid::new(3.2, 200).unwrap(),
        realizations: 30,
        coupling: 0.2,
        noise: NoiseModel::Rtn { gamma: 1.0 },
        seed: RngSeed(0),
    };
    generate_dataset(count, &sim, RngSeed(8)).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig { whitebox_steps: 200, ..ModelConfig::reduced(8) }
}

proptest! {
    #[test]
    fn split_is_a_partition_close_to_the_ratio(n in 2..3000usize, seed: u64) {
        let (train, test) = split_indices(n, 0.8, RngSeed(seed));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!((train.len() as f64 - 0.8 * n as f64).abs() <= 1.0);
    }
}

#[test]
fn eval_loss_tail_is_monotone() {
    let data = small_dataset(80);
    let cfg = TrainConfig { epochs: 40, batch_size: 16, peak_lr: 3e-3, ..Default::default() };
    let (_, metrics) = train(&data, &small_model(), &cfg, RngSeed(1)).unwrap();
    let eval: Vec<f64> = metrics.history.iter().map(|h| h.eval_loss.unwrap()).collect();
    let tail = &eval[eval.len() - eval.len().div_ceil(10) - 1..];
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "eval loss rose from {} to {} in {tail:?}", w[0], w[1]);
    }
    assert!(eval.last().unwrap() < &eval[0]);
}

#[test]
fn metrics_reproduce_exactly() {
    let data = small_dataset(40);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, ..Default::default() };
    let (p1, m1) = train(&data, &small_model(), &cfg, RngSeed(5)).unwrap();
    let (p2, m2) = train(&data, &small_model(), &cfg, RngSeed(5)).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(p1.to_flat(), p2.to_flat());
    let (_, m3) = train(&data, &small_model(), &cfg, RngSeed(6)).unwrap();
    assert_ne!(m1.history, m3.history);
}

#[test]
fn identical_records_are_memorized() {
    let record = small_dataset(1).remove(0);
    let data: Vec<DatasetRecord> = (0..32).map(|index| DatasetRecord { index, ..record.clone() }).collect();
    let cfg = TrainConfig { epochs: 150, batch_size: 8, peak_lr: 3e-3, ..Default::default() };
    let model = ModelConfig { dropout_rate: 0.0, ..small_model() };
    let (_, metrics) = train(&data, &model, &cfg, RngSeed(2)).unwrap();
    assert!(metrics.mean_train_mse() < 1e-5, "train MSE {}", metrics.mean_train_mse());
    // Test records are the same point, so they are fitted equally well.
    assert!((metrics.mean_test_mse() - metrics.mean_train_mse()).abs() < 1e-12);
}
