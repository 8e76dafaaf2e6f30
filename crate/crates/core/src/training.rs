//! Mini-batch training with early stopping and early realignment, class
//! priors and prior-scaled scores.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{group_members, Dataset};
use crate::error::{Error, Result};
use crate::network::{Mode, Network};
use crate::numerics::{Rng, Tensor};
use crate::optim::{accuracy, cross_entropy, Optimizer, OptimizerConfig};

/// Default smoothing added to every class count when estimating priors.
pub const DEFAULT_PRIOR_SMOOTHING: f64 = 0.5;

/// Rows per forward pass when evaluating whole datasets.
const EVAL_CHUNK: usize = 2048;

/// Random stream offsets; shuffling and dropout draw from disjoint streams.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the dev cross-entropy improves by less than this many nats
    /// in one epoch. `None` trains for `max_epochs`.
    pub early_stop_tolerance: Option<f64>,
    pub dropout: f64,
    /// Realign training labels after this epoch (0 disables).
    pub realign_epoch: usize,
    /// Keep realigning after every epoch from `realign_epoch` on.
    pub realign_every_epoch: bool,
    pub shuffle_seed: u64,
    /// Additive smoothing for class priors estimated from training labels.
    pub prior_smoothing: f64,
    /// Number of epochs already completed by the incoming network; the first
    /// epoch trained here is numbered `epoch_offset + 1`.
    #[serde(skip)]
    pub epoch_offset: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            max_epochs: 20,
            early_stop_tolerance: Some(1e-3),
            dropout: 0.0,
            realign_epoch: 0,
            realign_every_epoch: false,
            shuffle_seed: 0,
            prior_smoothing: DEFAULT_PRIOR_SMOOTHING,
            epoch_offset: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config(
                "training.batch_size must be at least 1".into(),
            ));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config(
                "training.max_epochs must be at least 1".into(),
            ));
        }
        if let Some(tol) = self.early_stop_tolerance {
            if tol.is_nan() || tol < 0.0 {
                return Err(Error::Config(format!(
                    "training.early_stop_tolerance must be ≥ 0, got {tol}"
                )));
            }
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "training.dropout must lie in [0, 0.5], got {}",
                self.dropout
            )));
        }
        if !(self.prior_smoothing >= 0.0 && self.prior_smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "training.prior_smoothing must be ≥ 0, got {}",
                self.prior_smoothing
            )));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ce: f64,
    pub dev_ce: f64,
    pub dev_acc: f64,
    /// Learning rate in effect during the epoch.
    pub learning_rate: f64,
    /// Momentum of the epoch's last update.
    pub momentum: f64,
    /// Fraction of training labels changed by a realignment after this epoch.
    pub labels_changed: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch with the lowest dev cross-entropy (earliest on ties).
    pub best_epoch: usize,
    pub best_dev_ce: f64,
    /// Dev cross-entropy of the network before any training in this run.
    pub initial_dev_ce: f64,
    pub stop_reason: StopReason,
}

pub const LOG_CSV_HEADER: &str = "epoch,train_ce,dev_ce,dev_acc,lr,mu,labels_changed";

impl TrainLog {
    /// Per-epoch CSV; `labels_changed` is empty for epochs without realignment.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "{LOG_CSV_HEADER}")?;
        }
        for r in &self.records {
            let changed = r.labels_changed.map(|f| f.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.train_ce, r.dev_ce, r.dev_acc, r.learning_rate, r.momentum, changed
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("a log has at least one epoch")
    }

    pub fn best(&self) -> &EpochRecord {
        self.records
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .expect("best epoch is logged")
    }

    /// Fractions of labels changed, by epoch, for every realignment.
    pub fn realignments(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.labels_changed.map(|f| (r.epoch, f)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network after the last completed epoch.
    pub network: Network,
    /// Network at [`TrainLog::best_epoch`].
    pub best_network: Network,
    pub log: TrainLog,
    /// Training labels in use at the end (differ from the input after realignment).
    pub labels: Vec<usize>,
}

/// Posteriors of `net` over every row of `frames`.
pub fn predict(net: &Network, frames: &Tensor) -> Result<Tensor> {
    net.predict(frames, EVAL_CHUNK)
}

/// Cross-entropy and accuracy of `net` on a labelled frame set.
pub fn evaluate(net: &Network, frames: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    let yhat = predict(net, frames)?;
    Ok((cross_entropy(&yhat, labels)?, accuracy(&yhat, labels)))
}

fn check_compatible(net: &Network, ds: &Dataset, what: &str) -> Result<()> {
    if net.input().len() != ds.dim() {
        return Err(Error::Config(format!(
            "{what} has {} features but the network expects {}",
            ds.dim(),
            net.input().len()
        )));
    }
    if net.num_classes() != ds.num_classes() {
        return Err(Error::Config(format!(
            "{what} has {} classes but the network outputs {}",
            ds.num_classes(),
            net.num_classes()
        )));
    }
    Ok(())
}

/// Relabels every frame with the most probable class inside the group of its
/// current label. Ties go to the lowest class index.
pub fn realign_labels(net: &Network, ds: &Dataset, labels: &[usize]) -> Result<Vec<usize>> {
    let yhat = predict(net, ds.frames())?;
    let members = group_members(ds.group_of(), ds.num_groups());
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let row = yhat.row(i);
            let mut best = l;
            let mut best_p = f64::NEG_INFINITY;
            for &c in &members[ds.group_of()[l]] {
                if row[c] > best_p {
                    best_p = row[c];
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Hamming fraction between two label sequences.
pub fn fraction_labels_changed(old: &[usize], new: &[usize]) -> Result<f64> {
    if old.len() != new.len() {
        return Err(Error::Dimension(format!(
            "label sequences of length {} and {}",
            old.len(),
            new.len()
        )));
    }
    if old.is_empty() {
        return Ok(0.0);
    }
    let changed = old.iter().zip(new).filter(|(a, b)| a != b).count();
    Ok(changed as f64 / old.len() as f64)
}

/// Trains `net` with shuffled mini-batches. Realigns once after epoch
/// `realign_epoch` when that is non-zero (see [`realign_train`]).
pub fn train(
    net: &Network,
    train_set: &Dataset,
    dev_set: &Dataset,
    opt_cfg: &OptimizerConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    opt_cfg.validate()?;
    check_compatible(net, train_set, "training set")?;
    check_compatible(net, dev_set, "dev set")?;
    if cfg.realign_epoch > 0 && cfg.realign_epoch >= cfg.max_epochs {
        return Err(Error::Config(format!(
            "realign_epoch {} must be below max_epochs {}",
            cfg.realign_epoch, cfg.max_epochs
        )));
    }

    let n = train_set.len();
    let frames = train_set.frames();
    let mut labels = train_set.labels().to_vec();
    let mut params = net.params().to_vec();
    let mut current = net.clone();
    let mut optimizer = Optimizer::new(*opt_cfg, &params)?;

    let (initial_dev_ce, _) = evaluate(net, dev_set.frames(), dev_set.labels())?;
    let mut prev_dev_ce = initial_dev_ce;
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, Network)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut skip_stop_check = false;

    for local_epoch in 0..cfg.max_epochs {
        let epoch = cfg.epoch_offset + local_epoch + 1;
        let started = Instant::now();
        let epoch_lr = optimizer.learning_rate();
        let order = Rng::derive(cfg.shuffle_seed ^ SHUFFLE_STREAM, epoch as u64).permutation(n);
        let mut dropout_rng = Rng::derive(cfg.shuffle_seed ^ DROPOUT_STREAM, epoch as u64);

        for batch_idx in order.chunks(cfg.batch_size) {
            let x = frames.select_rows(batch_idx);
            let y: Vec<usize> = batch_idx.iter().map(|&i| labels[i]).collect();
            let step = optimizer.state().step;
            let lr = optimizer.learning_rate();
            let diverged = |detail: String| Error::Divergence {
                step,
                learning_rate: lr,
                detail,
            };
            optimizer
                .step(&mut params, |p| {
                    let mode = if cfg.dropout > 0.0 {
                        Mode::Train {
                            dropout: cfg.dropout,
                            rng: &mut dropout_rng,
                        }
                    } else {
                        Mode::Infer
                    };
                    let (loss, grads) = current.loss_and_gradient(p, &x, &y, mode)?;
                    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                        return Err(Error::Numerical(format!("training loss became {loss}")));
                    }
                    Ok(grads)
                })
                .map_err(|e| match e {
                    Error::Numerical(m) => diverged(m),
                    other => other,
                })?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(diverged("parameters became non-finite".into()));
            }
        }
        current.set_params(params.clone()).map_err(|e| match e {
            Error::Numerical(m) => Error::Divergence {
                step: optimizer.state().step,
                learning_rate: optimizer.learning_rate(),
                detail: m,
            },
            other => other,
        })?;

        let eval_err = |e: Error| match e {
            Error::Numerical(m) => Error::Divergence {
                step: optimizer.state().step,
                learning_rate: optimizer.learning_rate(),
                detail: m,
            },
            other => other,
        };
        let (train_ce, _) = evaluate(&current, frames, &labels).map_err(eval_err)?;
        let (dev_ce, dev_acc) =
            evaluate(&current, dev_set.frames(), dev_set.labels()).map_err(eval_err)?;
        if !train_ce.is_finite() {
            return Err(Error::Divergence {
                step: optimizer.state().step,
                learning_rate: optimizer.learning_rate(),
                detail: format!("training cross-entropy became {train_ce}"),
            });
        }

        if best.as_ref().is_none_or(|(_, ce, _)| dev_ce < *ce) {
            best = Some((epoch, dev_ce, current.clone()));
        }
        let momentum = optimizer.momentum();
        optimizer.end_epoch();

        let is_last = local_epoch + 1 == cfg.max_epochs;
        let realign_now = cfg.realign_epoch > 0
            && !is_last
            && (local_epoch + 1 == cfg.realign_epoch
                || (cfg.realign_every_epoch && local_epoch + 1 > cfg.realign_epoch));
        let mut labels_changed = None;
        if realign_now {
            let new_labels = realign_labels(&current, train_set, &labels)?;
            labels_changed = Some(fraction_labels_changed(&labels, &new_labels)?);
            labels = new_labels;
            optimizer.reset_learning_rate();
        }

        records.push(EpochRecord {
            epoch,
            train_ce,
            dev_ce,
            dev_acc,
            learning_rate: epoch_lr,
            momentum,
            labels_changed,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let Some(tol) = cfg.early_stop_tolerance {
            // the epoch right after a realignment trains on a new label
            // distribution; its dev score is not compared
            if !skip_stop_check && prev_dev_ce - dev_ce < tol {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
        skip_stop_check = realign_now;
        prev_dev_ce = dev_ce;
    }

    let (best_epoch, best_dev_ce, best_network) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        network: current,
        best_network,
        log: TrainLog {
            records,
            best_epoch,
            best_dev_ce,
            initial_dev_ce,
            stop_reason,
        },
        labels,
    })
}

/// Training with early realignment: after epoch `realign_epoch` the training
/// labels are regenerated by the partially trained network (constrained to
/// each frame's group), the learning rate is reset to its initial value and
/// training continues from the same weights.
pub fn realign_train(
    net: &Network,
    train_set: &Dataset,
    dev_set: &Dataset,
    opt_cfg: &OptimizerConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.realign_epoch == 0 {
        return Err(Error::Config(
            "realign_train needs realign_epoch > 0".into(),
        ));
    }
    train(net, train_set, dev_set, opt_cfg, cfg)
}

/// Class prior probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors(Vec<f64>);

impl Priors {
    pub fn uniform(k: usize) -> Self {
        Priors(vec![1.0 / k as f64; k])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Parameter("priors must be strictly positive".into()));
        }
        Ok(Priors(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `(count_k + α) / (N + αK)`.
pub fn estimate_priors(labels: &[usize], k: usize, smoothing: f64) -> Result<Priors> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Parameter(format!(
            "smoothing must be ≥ 0, got {smoothing}"
        )));
    }
    if k == 0 {
        return Err(Error::Parameter("priors over zero classes".into()));
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::Parameter(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        counts[l] += 1;
    }
    if smoothing == 0.0 {
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Parameter(format!(
                "class {c} never occurs; priors need smoothing > 0"
            )));
        }
    }
    let denom = labels.len() as f64 + smoothing * k as f64;
    Ok(Priors(
        counts
            .iter()
            .map(|&c| (c as f64 + smoothing) / denom)
            .collect(),
    ))
}

/// Scaled likelihoods `ŷ_k / prior_k`; rows are not renormalized.
pub fn scaled_scores(yhat: &Tensor, priors: &Priors) -> Result<Tensor> {
    let k = yhat.cols();
    if priors.0.len() != k {
        return Err(Error::Dimension(format!(
            "{} priors for {k} classes",
            priors.0.len()
        )));
    }
    if let Some(c) = priors.0.iter().position(|&p| p <= 0.0) {
        return Err(Error::Parameter(format!("prior of class {c} is zero")));
    }
    let mut out = yhat.clone();
    if k > 0 {
        for row in out.data_mut().chunks_mut(k) {
            for (v, p) in row.iter_mut().zip(&priors.0) {
                *v /= p;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_changed_cases() {
        assert_eq!(
            fraction_labels_changed(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(),
            0.0
        );
        assert_eq!(
            fraction_labels_changed(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(),
            0.25
        );
        assert_eq!(fraction_labels_changed(&[1, 2], &[0, 0]).unwrap(), 1.0);
        assert!(fraction_labels_changed(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn prior_estimates() {
        let p = estimate_priors(&[0, 0, 1], 2, 0.0).unwrap();
        assert!((p.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.values()[1] - 1.0 / 3.0).abs() < 1e-15);
        let u = estimate_priors(&[0, 1, 2, 0, 1, 2], 3, 0.0).unwrap();
        assert!(u.values().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let s = estimate_priors(&[0, 1], 3, 1.0).unwrap();
        for (got, want) in s.values().iter().zip([0.4, 0.4, 0.2]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((s.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(estimate_priors(&[0, 1], 3, 0.0).is_err());
    }

    #[test]
    fn scaled_score_cases() {
        let yhat = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let s = scaled_scores(&yhat, &Priors::new(vec![0.25, 0.75]).unwrap()).unwrap();
        assert_eq!(s.data()[0], 2.0);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() > 0.5);
        let u = scaled_scores(&yhat, &Priors::uniform(2)).unwrap();
        assert_eq!(u.data(), &[1.0, 1.0]);
        assert!(Priors::new(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                dropout: 0.7,
                ..Default::default()
            },
            TrainConfig {
                early_stop_tolerance: Some(-1.0),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
