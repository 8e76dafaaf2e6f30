//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing here calls the backward pass or the im2col kernels; the
//! finite-difference checker only needs forward evaluations of the loss.

#![allow(dead_code)]

use framenet::network::{InitScheme, InputLayout, LayerSpec, LocalSpec, Mode, Network};
use framenet::numerics::{gaussian_init, Rng, Tensor};
use framenet::optim::cross_entropy;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where the ±step perturbation crossed a rectifier or
    /// pooling kink, so central differences do not estimate a derivative.
    pub skipped: usize,
}

fn loss_at(
    net: &Network,
    params: &[Tensor],
    x: &Tensor,
    y: &[usize],
    dropout: Option<(f64, u64)>,
) -> (f64, Vec<Vec<bool>>) {
    let mut rng = Rng::new(dropout.map_or(0, |d| d.1));
    let mode = match dropout {
        Some((p, _)) => Mode::Train {
            dropout: p,
            rng: &mut rng,
        },
        None => Mode::Infer,
    };
    let trace = net.forward_with(params, x, mode).expect("forward");
    let pattern = trace
        .hidden
        .iter()
        .map(|h| h.data().iter().map(|&v| v > 0.0).collect())
        .collect();
    (cross_entropy(&trace.output, y).expect("loss"), pattern)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of the batch loss for
/// every parameter coordinate. With `dropout = Some((p, seed))` every loss
/// evaluation replays the same mask.
pub fn check_gradients(
    net: &Network,
    x: &Tensor,
    y: &[usize],
    dropout: Option<(f64, u64)>,
    analytic: &[Tensor],
) -> GradCheck {
    let base: Vec<Tensor> = net.params().to_vec();
    let (l0, pattern0) = loss_at(net, &base, x, y, dropout);
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (ti, tensor) in base.iter().enumerate() {
        for e in 0..tensor.len() {
            let mut plus = base.clone();
            plus[ti].data_mut()[e] += FD_STEP;
            let mut minus = base.clone();
            minus[ti].data_mut()[e] -= FD_STEP;
            let (lp, pp) = loss_at(net, &plus, x, y, dropout);
            let (lm, pm) = loss_at(net, &minus, x, y, dropout);
            let second = (lp - 2.0 * l0 + lm).abs();
            if pp != pattern0 || pm != pattern0 || second > 1e-8 {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let err = relative_error(analytic[ti].data()[e], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    Dense,
    Conv,
    Untied,
}

/// A small random network of the requested kind (≤3 hidden layers, ≤32
/// units or maps) with a batch of ≤8 inputs and labels.
pub fn random_case(seed: u64, kind: StackKind) -> (Network, Tensor, Vec<usize>) {
    let mut rng = Rng::new(1000 + seed);
    let mut pick = |lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    let classes = pick(2, 6);
    let batch = pick(1, 8);
    let (input, layers) = match kind {
        StackKind::Dense => {
            let hidden = pick(1, 3);
            let d = pick(2, 12);
            let mut layers: Vec<LayerSpec> =
                (0..hidden).map(|_| LayerSpec::Dense(pick(2, 32))).collect();
            layers.push(LayerSpec::SoftmaxOutput(classes));
            (InputLayout::Flat(d), layers)
        }
        StackKind::Conv | StackKind::Untied => {
            let time = pick(3, 6);
            let freq = pick(4, 8);
            let filter = (pick(1, 3), pick(2, 3));
            let (ot, of) = (time - filter.0 + 1, freq - filter.1 + 1);
            let local = LocalSpec {
                maps: pick(1, 4),
                filter,
                pool: (pick(1, 2.min(ot)), pick(1, 2.min(of))),
            };
            let first = if kind == StackKind::Conv {
                LayerSpec::Conv(local)
            } else {
                LayerSpec::Untied(local)
            };
            let mut layers = vec![first];
            if seed % 2 == 1 {
                // second local layer over multi-channel maps, no pooling
                let second = LocalSpec {
                    maps: pick(1, 3),
                    filter: (1, 1),
                    pool: (1, 1),
                };
                layers.push(if kind == StackKind::Conv {
                    LayerSpec::Conv(second)
                } else {
                    LayerSpec::Untied(second)
                });
            }
            layers.push(LayerSpec::Dense(pick(2, 16)));
            layers.push(LayerSpec::SoftmaxOutput(classes));
            (InputLayout::Grid { time, freq }, layers)
        }
    };
    let mut net = Network::new(input, layers, InitScheme::FanIn, seed).expect("valid stack");
    // non-zero biases so no unit sits exactly at a kink
    let mut brng = Rng::new(77 + seed);
    let params: Vec<Tensor> = net
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i % 2 == 1 {
                gaussian_init(&mut brng, p.shape(), 0.1).unwrap()
            } else {
                p.clone()
            }
        })
        .collect();
    net.set_params(params).unwrap();
    let x = gaussian_init(&mut brng, &[batch, input.len()], 1.0).unwrap();
    let y = (0..batch).map(|_| brng.below(classes)).collect();
    (net, x, y)
}

/// Valid convolution + bias + rectifier + max pooling by explicit loops.
/// `w` is indexed `[map][channel][dt][df]`, input `[channel][t][f]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f64],
    channels: usize,
    t: usize,
    f: usize,
    w: &[f64],
    b: &[f64],
    maps: usize,
    filter: (usize, usize),
    pool: (usize, usize),
    untied: bool,
) -> Vec<f64> {
    let (ft, ff) = filter;
    let (ot, of) = (t - ft + 1, f - ff + 1);
    let patch = channels * ft * ff;
    let mut pre = vec![0.0; maps * ot * of];
    for m in 0..maps {
        for i in 0..ot {
            for j in 0..of {
                let pos = i * of + j;
                let (woff, bias) = if untied {
                    ((pos * maps + m) * patch, b[pos * maps + m])
                } else {
                    (m * patch, b[m])
                };
                let mut s = 0.0;
                for c in 0..channels {
                    for di in 0..ft {
                        for dj in 0..ff {
                            s += x[(c * t + i + di) * f + j + dj]
                                * w[woff + (c * ft + di) * ff + dj];
                        }
                    }
                }
                pre[(m * ot + i) * of + j] = s + bias;
            }
        }
    }
    let (pt, pf) = (ot / pool.0, of / pool.1);
    let mut out = Vec::with_capacity(maps * pt * pf);
    for m in 0..maps {
        for i in 0..pt {
            for j in 0..pf {
                let mut best = f64::NEG_INFINITY;
                for di in 0..pool.0 {
                    for dj in 0..pool.1 {
                        best = best.max(pre[(m * ot + i * pool.0 + di) * of + j * pool.1 + dj]);
                    }
                }
                out.push(best.max(0.0));
            }
        }
    }
    out
}

/// Nearest class-mean classifier: fit on `train`, accuracy on `test`.
pub fn nearest_mean_accuracy(
    train: &framenet::data::Dataset,
    test: &framenet::data::Dataset,
) -> f64 {
    let k = train.num_classes();
    let d = train.dim();
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..train.len() {
        let l = train.labels()[i];
        counts[l] += 1;
        for (m, v) in means[l].iter_mut().zip(train.frames().row(i)) {
            *m += v;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    let mut correct = 0;
    for i in 0..test.len() {
        let x = test.frames().row(i);
        let best = (0..k)
            .min_by(|&a, &b| {
                let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        if best == test.labels()[i] {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}
