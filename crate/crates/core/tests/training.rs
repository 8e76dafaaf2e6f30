mod support;

use framenet::data::{
    corrupt_labels, generate_synthetic, normalize_global, Dataset, SyntheticSource, SyntheticSpec,
};
use framenet::network::{InitScheme, InputLayout, LayerSpec, Network};
use framenet::numerics::{Rng, Tensor};
use framenet::optim::{AnnealPolicy, MomentumSchedule, Optimizer, OptimizerConfig, OptimizerKind};
use framenet::training::{
    fraction_labels_changed, realign_labels, realign_train, train, StopReason, TrainConfig,
    TrainLog,
};
use framenet::Error;
use support::nearest_mean_accuracy;

fn separable(seed: u64) -> (Dataset, Dataset) {
    let spec = SyntheticSpec {
        groups: 2,
        subclasses: 1,
        dim: 4,
        frames_per_class: 300,
        group_separation: 4.0,
        subclass_separation: 0.5,
        noise_std: 0.3,
        seed,
        ..SyntheticSpec::default()
    };
    let src = SyntheticSource::new(&spec).unwrap();
    let (train, stats) = normalize_global(&src.sample(300, 0).unwrap()).unwrap();
    let dev = stats.apply(&src.sample(100, 1).unwrap()).unwrap();
    (train, dev)
}

fn mlp(d: usize, hidden: &[usize], k: usize, seed: u64) -> Network {
    let mut layers: Vec<LayerSpec> = hidden.iter().map(|&w| LayerSpec::Dense(w)).collect();
    layers.push(LayerSpec::SoftmaxOutput(k));
    Network::new(InputLayout::Flat(d), layers, InitScheme::FanIn, seed).unwrap()
}

fn opt(lr: f64) -> OptimizerConfig {
    OptimizerConfig {
        kind: OptimizerKind::Nag,
        learning_rate: lr,
        momentum: MomentumSchedule::Ramp { mu_max: 0.9 },
        anneal: AnnealPolicy::Constant,
    }
}

fn without_timing(log: &TrainLog) -> TrainLog {
    let mut log = log.clone();
    log.records.iter_mut().for_each(|r| r.seconds = 0.0);
    log
}

#[test]
fn nearest_mean_separates_distant_clusters() {
    let spec = SyntheticSpec {
        groups: 2,
        subclasses: 1,
        dim: 6,
        frames_per_class: 500,
        group_separation: 5.0,
        noise_std: 0.01,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let src = SyntheticSource::new(&spec).unwrap();
    let train = src.sample(500, 0).unwrap();
    let test = src.sample(500, 1).unwrap();
    assert!(nearest_mean_accuracy(&train, &test) >= 0.99);
    assert_eq!(train.group_of(), &[0, 1]);
}

#[test]
fn infinite_tolerance_stops_after_one_epoch() {
    let (tr, dev) = separable(1);
    let cfg = TrainConfig {
        early_stop_tolerance: Some(f64::INFINITY),
        batch_size: 32,
        ..TrainConfig::default()
    };
    let out = train(&mlp(4, &[8], 2, 0), &tr, &dev, &opt(0.05), &cfg).unwrap();
    assert_eq!(out.log.records.len(), 1);
    assert_eq!(out.log.stop_reason, StopReason::EarlyStop);
}

#[test]
fn separable_set_reaches_high_accuracy() {
    let (tr, dev) = separable(2);
    assert!(nearest_mean_accuracy(&tr, &dev) >= 0.98);
    let cfg = TrainConfig {
        max_epochs: 10,
        batch_size: 32,
        early_stop_tolerance: None,
        ..TrainConfig::default()
    };
    let out = train(&mlp(4, &[8], 2, 5), &tr, &dev, &opt(0.05), &cfg).unwrap();
    let best = out
        .log
        .records
        .iter()
        .map(|r| r.dev_acc)
        .fold(0.0, f64::max);
    assert!(best >= 0.98, "best dev accuracy {best}");
}

#[test]
fn training_is_bit_reproducible() {
    let (tr, dev) = separable(4);
    let cfg = TrainConfig {
        max_epochs: 4,
        batch_size: 50,
        dropout: 0.2,
        early_stop_tolerance: None,
        shuffle_seed: 8,
        ..TrainConfig::default()
    };
    let a = train(&mlp(4, &[16, 8], 2, 1), &tr, &dev, &opt(0.05), &cfg).unwrap();
    let b = train(&mlp(4, &[16, 8], 2, 1), &tr, &dev, &opt(0.05), &cfg).unwrap();
    assert_eq!(without_timing(&a.log), without_timing(&b.log));
    assert_eq!(a.network, b.network);
}

#[test]
fn zero_dropout_equals_no_dropout() {
    let (tr, dev) = separable(5);
    let base = TrainConfig {
        max_epochs: 3,
        batch_size: 40,
        early_stop_tolerance: None,
        ..TrainConfig::default()
    };
    let zero = TrainConfig {
        dropout: 0.0,
        shuffle_seed: base.shuffle_seed,
        ..base.clone()
    };
    let a = train(&mlp(4, &[8], 2, 2), &tr, &dev, &opt(0.05), &base).unwrap();
    let b = train(&mlp(4, &[8], 2, 2), &tr, &dev, &opt(0.05), &zero).unwrap();
    assert_eq!(a.network, b.network);
}

#[test]
fn best_epoch_never_worse_than_final() {
    let (tr, dev) = separable(6);
    let cfg = TrainConfig {
        max_epochs: 6,
        batch_size: 16,
        early_stop_tolerance: None,
        ..TrainConfig::default()
    };
    let out = train(&mlp(4, &[32, 32], 2, 3), &tr, &dev, &opt(0.2), &cfg).unwrap();
    assert!(out.log.best_dev_ce <= out.log.last().dev_ce);
    let best = out.log.best();
    assert_eq!(best.epoch, out.log.best_epoch);
}

#[test]
fn learning_rate_halves_each_epoch() {
    let (tr, dev) = separable(7);
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 100,
        early_stop_tolerance: None,
        ..TrainConfig::default()
    };
    let o = OptimizerConfig {
        anneal: AnnealPolicy::PerEpochHalving,
        ..opt(0.04)
    };
    let out = train(&mlp(4, &[4], 2, 3), &tr, &dev, &o, &cfg).unwrap();
    let lrs: Vec<f64> = out.log.records.iter().map(|r| r.learning_rate).collect();
    assert_eq!(lrs, vec![0.04, 0.02, 0.01]);
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let (tr, dev) = separable(8);
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 8,
        early_stop_tolerance: None,
        ..TrainConfig::default()
    };
    let o = OptimizerConfig {
        learning_rate: 1e200,
        ..opt(1.0)
    };
    match train(&mlp(4, &[8, 8], 2, 4), &tr, &dev, &o, &cfg) {
        Err(Error::Divergence { learning_rate, .. }) => assert_eq!(learning_rate, 1e200),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

fn hierarchical(seed: u64) -> (Dataset, Dataset) {
    let spec = SyntheticSpec {
        groups: 4,
        subclasses: 3,
        dim: 6,
        group_separation: 4.0,
        subclass_separation: 1.5,
        noise_std: 0.5,
        seed,
        ..SyntheticSpec::default()
    };
    let src = SyntheticSource::new(&spec).unwrap();
    let (tr, stats) = normalize_global(&src.sample(250, 0).unwrap()).unwrap();
    let dev = stats.apply(&src.sample(80, 1).unwrap()).unwrap();
    (tr, dev)
}

#[test]
fn realignment_keeps_groups_and_repairs_labels() {
    let (clean, dev) = hierarchical(10);
    let noisy = corrupt_labels(&clean, 0.2, &mut Rng::new(1)).unwrap();
    let truth = noisy.true_labels().unwrap().to_vec();
    let cfg = TrainConfig {
        max_epochs: 4,
        realign_epoch: 2,
        batch_size: 32,
        early_stop_tolerance: None,
        ..TrainConfig::default()
    };
    let out = realign_train(&mlp(6, &[64, 64], 12, 1), &noisy, &dev, &opt(0.05), &cfg).unwrap();
    for (&a, &b) in out.labels.iter().zip(noisy.labels()) {
        assert_eq!(noisy.group_of()[a], noisy.group_of()[b]);
    }
    let disagreement = fraction_labels_changed(&out.labels, &truth).unwrap();
    assert!(disagreement < 0.2, "disagreement {disagreement}");
    let events = out.log.realignments();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].0, 2);
    // learning rate restored at the realignment boundary
    assert_eq!(out.log.records[2].learning_rate, 0.05);
}

#[test]
fn agreeing_model_changes_nothing() {
    let (tr, dev) = hierarchical(11);
    let net = mlp(6, &[16], 12, 2);
    let agreed = realign_labels(&net, &tr, tr.labels()).unwrap();
    let relabeled = tr.relabeled(agreed.clone()).unwrap();
    assert_eq!(realign_labels(&net, &relabeled, &agreed).unwrap(), agreed);
    // a realignment that changes nothing leaves training identical apart
    // from the learning-rate reset, which is a no-op under a constant rate
    let with = TrainConfig {
        max_epochs: 3,
        realign_epoch: 1,
        batch_size: 64,
        early_stop_tolerance: None,
        ..TrainConfig::default()
    };
    let without = TrainConfig {
        realign_epoch: 0,
        ..with.clone()
    };
    let tiny_lr = OptimizerConfig {
        learning_rate: 1e-12,
        ..opt(1.0)
    };
    let a = train(&net, &relabeled, &dev, &tiny_lr, &with).unwrap();
    let b = train(&net, &relabeled, &dev, &tiny_lr, &without).unwrap();
    assert_eq!(a.log.records[0].labels_changed, Some(0.0));
    assert_eq!(a.network, b.network);
}

#[test]
fn realign_epoch_must_precede_the_end() {
    let (tr, dev) = hierarchical(12);
    let cfg = TrainConfig {
        max_epochs: 2,
        realign_epoch: 2,
        ..TrainConfig::default()
    };
    assert!(matches!(
        realign_train(&mlp(6, &[4], 12, 0), &tr, &dev, &opt(0.01), &cfg),
        Err(Error::Config(_))
    ));
}

fn quadratic_run(kind: OptimizerKind) -> Vec<f64> {
    // f(θ) = ½(θ₀² + 4θ₁²)
    let f = |p: &[Tensor]| 0.5 * (p[0].data()[0].powi(2) + 4.0 * p[0].data()[1].powi(2));
    let cfg = OptimizerConfig {
        kind,
        learning_rate: 0.02,
        momentum: MomentumSchedule::Constant(0.5),
        anneal: AnnealPolicy::Constant,
    };
    let mut params = vec![Tensor::new(vec![2], vec![3.0, -2.0]).unwrap()];
    let mut opt = Optimizer::new(cfg, &params).unwrap();
    let mut values = vec![f(&params)];
    for _ in 0..400 {
        opt.step(&mut params, |p| {
            let d = p[0].data();
            Ok(vec![Tensor::new(vec![2], vec![d[0], 4.0 * d[1]]).unwrap()])
        })
        .unwrap();
        values.push(f(&params));
    }
    values
}

#[test]
fn quadratic_descent_is_monotone_after_burn_in() {
    for kind in [OptimizerKind::Cm, OptimizerKind::Nag] {
        let v = quadratic_run(kind);
        assert!(v[50..].windows(2).all(|w| w[1] <= w[0]), "{kind:?}");
        assert!(v[400] < 1e-6 * v[0]);
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SyntheticSpec {
        speakers: 4,
        run_length: 5,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.num_classes(), 30);
}
