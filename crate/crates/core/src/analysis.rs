//! Coding properties of hidden representations and group-level error
//! breakdowns.
//!
//! A hidden unit is *active* on an input when its (rectified, post-pooling)
//! output is strictly positive. Activation probabilities, scree vectors,
//! dispersion and code length are all derived from integer activity counts
//! over a seeded sample of inputs, so reports are deterministic.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Mode, Network};
use crate::numerics::{Rng, Tensor};
use crate::optim::argmax;

/// Default cap on the number of analysed inputs.
pub const DEFAULT_SAMPLE: usize = 512_000;

const CHUNK: usize = 1024;

/// `sample_n` distinct row indices drawn without replacement. A larger
/// `sample_n` with the same seed extends the smaller sample.
pub fn sample_indices(n: usize, sample_n: usize, seed: u64) -> Result<Vec<usize>> {
    if sample_n == 0 {
        return Err(Error::Parameter("analysis needs a non-empty sample".into()));
    }
    if sample_n > n {
        return Err(Error::Parameter(format!(
            "sample of {sample_n} requested from {n} inputs"
        )));
    }
    let mut perm = Rng::new(seed).permutation(n);
    perm.truncate(sample_n);
    Ok(perm)
}

/// Per-layer, per-unit counts of inputs on which the unit was active.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityCounts {
    pub counts: Vec<Vec<u64>>,
    pub samples: usize,
}

pub fn activity_counts(net: &Network, data: &Tensor, indices: &[usize]) -> Result<ActivityCounts> {
    if indices.is_empty() {
        return Err(Error::Parameter("analysis needs a non-empty sample".into()));
    }
    let mut counts: Vec<Vec<u64>> = net.hidden_widths().iter().map(|&w| vec![0; w]).collect();
    for chunk in indices.chunks(CHUNK) {
        let trace = net.forward(&data.select_rows(chunk), Mode::Infer)?;
        for (layer, h) in trace.hidden.iter().enumerate() {
            let w = h.cols();
            for row in h.data().chunks(w) {
                for (c, &v) in counts[layer].iter_mut().zip(row) {
                    if v > 0.0 {
                        *c += 1;
                    }
                }
            }
        }
    }
    Ok(ActivityCounts {
        counts,
        samples: indices.len(),
    })
}

impl ActivityCounts {
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        let n = self.samples as f64;
        self.counts
            .iter()
            .map(|layer| layer.iter().map(|&c| c as f64 / n).collect())
            .collect()
    }

    /// Mean number of active units per input, per layer.
    pub fn code_lengths(&self) -> Vec<f64> {
        let n = self.samples as f64;
        self.counts
            .iter()
            .map(|layer| layer.iter().sum::<u64>() as f64 / n)
            .collect()
    }
}

/// Fraction of sampled inputs on which each hidden unit is active.
pub fn activation_probabilities(
    net: &Network,
    data: &Tensor,
    sample_n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let idx = sample_indices(data.rows(), sample_n, seed)?;
    Ok(activity_counts(net, data, &idx)?.probabilities())
}

/// Mean count of non-zero activations per hidden layer.
pub fn code_length(net: &Network, data: &Tensor, sample_n: usize, seed: u64) -> Result<Vec<f64>> {
    let idx = sample_indices(data.rows(), sample_n, seed)?;
    Ok(activity_counts(net, data, &idx)?.code_lengths())
}

/// Probabilities sorted in decreasing order.
pub fn scree(probs: &[f64]) -> Vec<f64> {
    let mut out = probs.to_vec();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// Normalized entropy of `probs / Σ probs`: 1 for a perfectly flat scree, 0
/// when a single unit carries all activity (or nothing is ever active).
pub fn dispersion(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Parameter("dispersion of an empty layer".into()));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    if probs.len() == 1 {
        return Ok(1.0);
    }
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    Ok((h / (probs.len() as f64).ln()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub width: usize,
    /// Activation probability per unit, in unit order.
    pub probabilities: Vec<f64>,
    pub scree: Vec<f64>,
    pub mean_probability: f64,
    pub dispersion: f64,
    pub mean_code_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub layers: Vec<LayerReport>,
    pub sample_size: usize,
}

/// Every coding metric for every hidden layer, from one seeded sample.
pub fn analyze(net: &Network, data: &Tensor, sample_n: usize, seed: u64) -> Result<AnalysisReport> {
    let idx = sample_indices(data.rows(), sample_n, seed)?;
    let counts = activity_counts(net, data, &idx)?;
    let probs = counts.probabilities();
    let code = counts.code_lengths();
    let layers = probs
        .into_iter()
        .zip(code)
        .enumerate()
        .map(|(layer, (p, c))| {
            let width = p.len();
            Ok(LayerReport {
                layer,
                width,
                mean_probability: p.iter().sum::<f64>() / width as f64,
                dispersion: dispersion(&p)?,
                scree: scree(&p),
                probabilities: p,
                mean_code_length: c,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AnalysisReport {
        layers,
        sample_size: idx.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GroupCounts {
    pub occurrences: u64,
    pub correct: u64,
    /// Wrong class, right group.
    pub within: u64,
    /// Predicted class belongs to another group.
    pub out: u64,
}

/// Frame outcomes tallied by the group of the true label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupedConfusion {
    pub groups: Vec<GroupCounts>,
}

impl GroupedConfusion {
    pub fn total(&self) -> GroupCounts {
        self.groups
            .iter()
            .fold(GroupCounts::default(), |a, g| GroupCounts {
                occurrences: a.occurrences + g.occurrences,
                correct: a.correct + g.correct,
                within: a.within + g.within,
                out: a.out + g.out,
            })
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t.occurrences == 0 {
            0.0
        } else {
            t.correct as f64 / t.occurrences as f64
        }
    }
}

/// Classifies every row's argmax (ties to the lowest index) as correct, a
/// within-group error or an out-of-group error.
pub fn grouped_confusion(
    yhat: &Tensor,
    labels: &[usize],
    group_of: &[usize],
    num_groups: usize,
) -> Result<GroupedConfusion> {
    if yhat.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows of posteriors for {} labels",
            yhat.rows(),
            labels.len()
        )));
    }
    if yhat.cols() != group_of.len() {
        return Err(Error::Dimension(format!(
            "{} classes but a group map of {}",
            yhat.cols(),
            group_of.len()
        )));
    }
    if let Some(bad) = group_of.iter().find(|&&g| g >= num_groups) {
        return Err(Error::Parameter(format!("group {bad} out of range")));
    }
    let mut groups = vec![GroupCounts::default(); num_groups];
    for (i, &y) in labels.iter().enumerate() {
        if y >= group_of.len() {
            return Err(Error::Parameter(format!("label {y} out of range")));
        }
        let pred = argmax(yhat.row(i));
        let g = &mut groups[group_of[y]];
        g.occurrences += 1;
        if pred == y {
            g.correct += 1;
        } else if group_of[pred] == group_of[y] {
            g.within += 1;
        } else {
            g.out += 1;
        }
    }
    Ok(GroupedConfusion { groups })
}
