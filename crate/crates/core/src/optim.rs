//! Loss, accuracy and the classical-momentum / Nesterov update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Floor applied to the target-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-30;

/// Step interval of the momentum ramp.
pub const RAMP_INTERVAL: u64 = 250;

/// Mean over rows of `−ln ŷ[y]`.
pub fn cross_entropy(yhat: &Tensor, labels: &[usize]) -> Result<f64> {
    let k = yhat.cols();
    if yhat.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows of posteriors for {} labels",
            yhat.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Parameter("cross-entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Parameter(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        total -= yhat.get(i, y).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(yhat: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(yhat.row(i)) == y)
        .count();
    correct as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Classical momentum.
    Cm,
    /// Nesterov's accelerated gradient.
    Nag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MomentumSchedule {
    Constant(f64),
    /// `min(1 − 2^(−1 − log₂(⌊t/250⌋ + 1)), mu_max)`.
    Ramp {
        mu_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AnnealPolicy {
    /// Learning rate stays at its initial value.
    Constant,
    /// Halve after every completed epoch.
    PerEpochHalving,
    /// Divide by `factor` every `iterations` updates.
    EveryN { iterations: u64, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: MomentumSchedule,
    pub anneal: AnnealPolicy,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Nag,
            learning_rate: 0.01,
            momentum: MomentumSchedule::Ramp { mu_max: 0.95 },
            anneal: AnnealPolicy::PerEpochHalving,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let mu = match self.momentum {
            MomentumSchedule::Constant(mu) => mu,
            MomentumSchedule::Ramp { mu_max } => mu_max,
        };
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::Config(format!("momentum {mu} outside [0, 1)")));
        }
        if let AnnealPolicy::EveryN { iterations, factor } = self.anneal {
            if iterations < 1 {
                return Err(Error::Config("anneal iterations must be at least 1".into()));
            }
            if !(factor > 1.0 && factor.is_finite()) {
                return Err(Error::Config(format!(
                    "anneal factor must exceed 1, got {factor}"
                )));
            }
        }
        Ok(())
    }
}

/// Momentum for update number `t` (0-based).
pub fn momentum_schedule(t: u64, schedule: &MomentumSchedule) -> f64 {
    match *schedule {
        MomentumSchedule::Constant(mu) => mu,
        MomentumSchedule::Ramp { mu_max } => {
            let k = (t / RAMP_INTERVAL + 1) as f64;
            (1.0 - (-1.0 - k.log2()).exp2()).min(mu_max)
        }
    }
}

/// Learning rate after `steps_done` updates under a per-iteration policy.
pub fn anneal_after_step(lr: f64, steps_done: u64, policy: &AnnealPolicy) -> f64 {
    match *policy {
        AnnealPolicy::EveryN { iterations, factor }
            if steps_done > 0 && steps_done.is_multiple_of(iterations) =>
        {
            lr / factor
        }
        _ => lr,
    }
}

/// Learning rate at an epoch boundary.
pub fn anneal_after_epoch(lr: f64, policy: &AnnealPolicy) -> f64 {
    match policy {
        AnnealPolicy::PerEpochHalving => lr / 2.0,
        _ => lr,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// One velocity tensor per parameter tensor.
    pub velocity: Vec<Tensor>,
    /// Updates applied so far.
    pub step: u64,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], cfg: &OptimizerConfig) -> Self {
        OptimizerState {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            learning_rate: cfg.learning_rate,
            momentum: momentum_schedule(0, &cfg.momentum),
        }
    }
}

fn check_shapes(params: &[Tensor], other: &[Tensor], what: &str) -> Result<()> {
    if params.len() != other.len()
        || params
            .iter()
            .zip(other)
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::Dimension(format!(
            "{what} shapes {:?} do not mirror parameter shapes {:?}",
            other.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(),
            params
                .iter()
                .map(|t| t.shape().to_vec())
                .collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// `v ← μv − ε∇f(θ)`, `θ ← θ + v` with μ and ε taken from `state`.
pub fn cm_update(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
) -> Result<()> {
    check_shapes(params, grads, "gradient")?;
    check_shapes(params, &state.velocity, "velocity")?;
    let (mu, lr) = (state.momentum, state.learning_rate);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// Nesterov update: the gradient is requested once, at the look-ahead point
/// `θ + μv`, then `v ← μv − ε∇f(θ + μv)`, `θ ← θ + v`.
pub fn nag_update<F>(
    params: &mut [Tensor],
    mut gradient_at: F,
    state: &mut OptimizerState,
) -> Result<()>
where
    F: FnMut(&[Tensor]) -> Result<Vec<Tensor>>,
{
    check_shapes(params, &state.velocity, "velocity")?;
    let (mu, lr) = (state.momentum, state.learning_rate);
    let lookahead: Vec<Tensor> = params
        .iter()
        .zip(&state.velocity)
        .map(|(p, v)| {
            let mut t = p.clone();
            t.data_mut()
                .iter_mut()
                .zip(v.data())
                .for_each(|(a, &b)| *a += mu * b);
            t
        })
        .collect();
    let grads = gradient_at(&lookahead)?;
    check_shapes(params, &grads, "gradient")?;
    for ((p, g), v) in params.iter_mut().zip(&grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// A configured optimizer: owns the state and applies the schedules.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &[Tensor]) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            state: OptimizerState::new(params, &cfg),
            cfg,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn learning_rate(&self) -> f64 {
        self.state.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.state.momentum
    }

    /// One update. `gradient_at` is called exactly once, with the point at
    /// which this optimizer needs the gradient (θ for CM, θ + μv for NAG).
    pub fn step<F>(&mut self, params: &mut [Tensor], mut gradient_at: F) -> Result<()>
    where
        F: FnMut(&[Tensor]) -> Result<Vec<Tensor>>,
    {
        self.state.momentum = momentum_schedule(self.state.step, &self.cfg.momentum);
        match self.cfg.kind {
            OptimizerKind::Cm => {
                let grads = gradient_at(params)?;
                cm_update(params, &grads, &mut self.state)?;
            }
            OptimizerKind::Nag => nag_update(params, gradient_at, &mut self.state)?,
        }
        self.state.step += 1;
        self.state.learning_rate =
            anneal_after_step(self.state.learning_rate, self.state.step, &self.cfg.anneal);
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        self.state.learning_rate = anneal_after_epoch(self.state.learning_rate, &self.cfg.anneal);
    }

    /// Restores the initial learning rate (used after realignment).
    pub fn reset_learning_rate(&mut self) {
        self.state.learning_rate = self.cfg.learning_rate;
    }
}
