//! Per-layer kernels: rectifier, softmax, dense, convolution, locally-untied
//! filtering, max pooling and dropout masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, Rng, Tensor};

/// Largest dropout probability accepted.
pub const MAX_DROPOUT: f64 = 0.5;

/// Elementwise `max(z, 0)`.
pub fn relu(z: &Tensor) -> Tensor {
    z.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "softmax expects n×K logits, got {:?}",
            logits.shape()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Numerical(
            "non-finite logits reached the softmax".into(),
        ));
    }
    let k = logits.cols();
    let mut out = logits.clone();
    if k == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// `x · W + b` broadcast over rows.
pub fn affine(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut z = matmul(x, weights)?;
    let n = z.cols();
    if bias.len() != n {
        return Err(Error::Dimension(format!(
            "bias of length {} for {} outputs",
            bias.len(),
            n
        )));
    }
    if n > 0 {
        for row in z.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
    }
    Ok(z)
}

/// Fully connected rectified layer: `relu(h_prev · W + b)`.
pub fn dense_forward(h_prev: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Ok(relu(&affine(h_prev, weights, bias)?))
}

/// Filter and pooling sizes of a convolutional or untied layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSpec {
    pub maps: usize,
    /// `(time, frequency)` filter extent.
    pub filter: (usize, usize),
    /// `(time, frequency)` non-overlapping pooling block.
    pub pool: (usize, usize),
}

/// Resolved dimensions of a local layer applied to a concrete input grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalGeometry {
    pub in_channels: usize,
    pub in_t: usize,
    pub in_f: usize,
    pub maps: usize,
    pub filter_t: usize,
    pub filter_f: usize,
    pub pool_t: usize,
    pub pool_f: usize,
}

impl LocalGeometry {
    pub fn new(spec: &LocalSpec, in_channels: usize, in_t: usize, in_f: usize) -> Result<Self> {
        let (filter_t, filter_f) = spec.filter;
        let (pool_t, pool_f) = spec.pool;
        if spec.maps == 0 || filter_t == 0 || filter_f == 0 {
            return Err(Error::Config(
                "local layer needs ≥1 map and a non-empty filter".into(),
            ));
        }
        if pool_t == 0 || pool_f == 0 {
            return Err(Error::Config(
                "pooling dimensions must be at least 1".into(),
            ));
        }
        if filter_t > in_t || filter_f > in_f {
            return Err(Error::Config(format!(
                "filter {filter_t}×{filter_f} larger than input grid {in_t}×{in_f}"
            )));
        }
        let g = LocalGeometry {
            in_channels,
            in_t,
            in_f,
            maps: spec.maps,
            filter_t,
            filter_f,
            pool_t,
            pool_f,
        };
        if g.pooled_t() == 0 || g.pooled_f() == 0 {
            return Err(Error::Config(format!(
                "pooling {pool_t}×{pool_f} larger than feature map {}×{}",
                g.out_t(),
                g.out_f()
            )));
        }
        Ok(g)
    }

    pub fn out_t(&self) -> usize {
        self.in_t - self.filter_t + 1
    }

    pub fn out_f(&self) -> usize {
        self.in_f - self.filter_f + 1
    }

    pub fn positions(&self) -> usize {
        self.out_t() * self.out_f()
    }

    pub fn pooled_t(&self) -> usize {
        self.out_t() / self.pool_t
    }

    pub fn pooled_f(&self) -> usize {
        self.out_f() / self.pool_f
    }

    /// Weights per filter: `in_channels · filter_t · filter_f`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.filter_t * self.filter_f
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_t * self.in_f
    }

    /// Width of the pooled output row, `maps · pooled_t · pooled_f`.
    pub fn output_len(&self) -> usize {
        self.maps * self.pooled_t() * self.pooled_f()
    }
}

/// Unfolds every filter-sized patch: row `b·positions + p` holds the patch at
/// output position `p` of example `b`, ordered (channel, time, frequency).
pub fn im2col(input: &Tensor, g: &LocalGeometry) -> Result<Tensor> {
    if input.cols() != g.input_len() {
        return Err(Error::Dimension(format!(
            "local layer expects {} inputs per example ({}×{}×{}), got {}",
            g.input_len(),
            g.in_channels,
            g.in_t,
            g.in_f,
            input.cols()
        )));
    }
    let batch = input.rows();
    let patch = g.patch_len();
    let mut data = Vec::with_capacity(batch * g.positions() * patch);
    for b in 0..batch {
        let x = input.row(b);
        for ot in 0..g.out_t() {
            for of in 0..g.out_f() {
                for c in 0..g.in_channels {
                    let plane = &x[c * g.in_t * g.in_f..(c + 1) * g.in_t * g.in_f];
                    for dt in 0..g.filter_t {
                        let start = (ot + dt) * g.in_f + of;
                        data.extend_from_slice(&plane[start..start + g.filter_f]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch * g.positions(), patch], data)
}

/// Adjoint of [`im2col`]: sums patch gradients back onto the input grid.
pub fn col2im(patches: &Tensor, g: &LocalGeometry, batch: usize) -> Tensor {
    let mut out = Tensor::zeros(&[batch, g.input_len()]);
    let plane_len = g.in_t * g.in_f;
    let patch = g.patch_len();
    let data = out.data_mut();
    for b in 0..batch {
        let x = &mut data[b * g.input_len()..(b + 1) * g.input_len()];
        for ot in 0..g.out_t() {
            for of in 0..g.out_f() {
                let row = patches.row(b * g.positions() + ot * g.out_f() + of);
                debug_assert_eq!(row.len(), patch);
                let mut k = 0;
                for c in 0..g.in_channels {
                    for dt in 0..g.filter_t {
                        let start = c * plane_len + (ot + dt) * g.in_f + of;
                        for v in &mut x[start..start + g.filter_f] {
                            *v += row[k];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Result of a convolutional or untied layer on a batch.
#[derive(Debug, Clone)]
pub struct LocalForward {
    /// Unfolded input patches, `[batch·positions × patch_len]`.
    pub patches: Tensor,
    /// Pre-activation maps, `[batch·positions × maps]`.
    pub pre: Tensor,
    /// Rectified, max-pooled output, `[batch × maps·pooled_t·pooled_f]`.
    pub pooled: Tensor,
    /// For every pooled cell, the flat index into `pre` of the winning unit.
    pub argmax: Vec<usize>,
    pub geometry: LocalGeometry,
}

impl LocalForward {
    /// Rectified feature maps before pooling, `[batch × maps × out_t × out_f]`.
    pub fn feature_maps(&self) -> Tensor {
        let g = &self.geometry;
        let batch = self.pooled.rows();
        let pos = g.positions();
        let mut data = vec![0.0; batch * g.maps * pos];
        for b in 0..batch {
            for p in 0..pos {
                for m in 0..g.maps {
                    let v = self.pre.get(b * pos + p, m);
                    data[(b * g.maps + m) * pos + p] = if v > 0.0 { v } else { 0.0 };
                }
            }
        }
        Tensor::new(vec![batch, g.maps, g.out_t(), g.out_f()], data)
            .expect("feature map shape is consistent")
    }
}

/// Rectifies and max-pools `pre` over disjoint blocks; trailing rows and
/// columns that do not fill a whole block are dropped. Ties go to the first
/// unit in (time, frequency) scan order.
fn pool(pre: &Tensor, g: &LocalGeometry, batch: usize) -> (Tensor, Vec<usize>) {
    let pos = g.positions();
    let (pt, pf) = (g.pooled_t(), g.pooled_f());
    let mut pooled = Vec::with_capacity(batch * g.output_len());
    let mut argmax = Vec::with_capacity(batch * g.output_len());
    let pre_data = pre.data();
    for b in 0..batch {
        for m in 0..g.maps {
            for i in 0..pt {
                for j in 0..pf {
                    let mut best_idx = usize::MAX;
                    let mut best = f64::NEG_INFINITY;
                    for di in 0..g.pool_t {
                        for dj in 0..g.pool_f {
                            let p = (i * g.pool_t + di) * g.out_f() + j * g.pool_f + dj;
                            let idx = (b * pos + p) * g.maps + m;
                            if pre_data[idx] > best {
                                best = pre_data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    pooled.push(if best > 0.0 { best } else { 0.0 });
                    argmax.push(best_idx);
                }
            }
        }
    }
    let pooled = Tensor::new(vec![batch, g.output_len()], pooled).expect("pooled shape");
    (pooled, argmax)
}

fn check_local_params(
    g: &LocalGeometry,
    weights: &Tensor,
    bias: &Tensor,
    untied: bool,
) -> Result<()> {
    let (w_len, b_len) = if untied {
        (
            g.positions() * g.maps * g.patch_len(),
            g.positions() * g.maps,
        )
    } else {
        (g.maps * g.patch_len(), g.maps)
    };
    if weights.len() != w_len || bias.len() != b_len {
        return Err(Error::Dimension(format!(
            "{} layer expects {w_len} weights and {b_len} biases, got {:?} and {:?}",
            if untied { "untied" } else { "convolutional" },
            weights.shape(),
            bias.shape()
        )));
    }
    Ok(())
}

/// Valid, stride-1 convolution with one shared filter bank per map, then
/// rectification and max pooling. `weights` holds `maps × patch_len` values.
pub fn conv_forward(
    input: &Tensor,
    g: &LocalGeometry,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<LocalForward> {
    check_local_params(g, weights, bias, false)?;
    let batch = input.rows();
    let patches = im2col(input, g)?;
    let w = Tensor::new(vec![g.maps, g.patch_len()], weights.data().to_vec())?;
    let mut pre = matmul_nt(&patches, &w)?;
    for row in pre.data_mut().chunks_mut(g.maps) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    let (pooled, argmax) = pool(&pre, g, batch);
    Ok(LocalForward {
        patches,
        pre,
        pooled,
        argmax,
        geometry: *g,
    })
}

/// Same computation as [`conv_forward`] but every output position has its
/// own filter bank: `weights` holds `positions × maps × patch_len` values and
/// `bias` one entry per (position, map).
pub fn untied_forward(
    input: &Tensor,
    g: &LocalGeometry,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<LocalForward> {
    check_local_params(g, weights, bias, true)?;
    let batch = input.rows();
    let patches = im2col(input, g)?;
    let pos = g.positions();
    let patch = g.patch_len();
    let w = weights.data();
    let mut pre = Vec::with_capacity(batch * pos * g.maps);
    for b in 0..batch {
        for p in 0..pos {
            let x = patches.row(b * pos + p);
            for m in 0..g.maps {
                let filt = &w[(p * g.maps + m) * patch..(p * g.maps + m + 1) * patch];
                let dot = x.iter().zip(filt).fold(0.0, |s, (a, b)| s + a * b);
                pre.push(dot + bias.data()[p * g.maps + m]);
            }
        }
    }
    let pre = Tensor::new(vec![batch * pos, g.maps], pre)?;
    let (pooled, argmax) = pool(&pre, g, batch);
    Ok(LocalForward {
        patches,
        pre,
        pooled,
        argmax,
        geometry: *g,
    })
}

/// Routes the gradient of the pooled output back onto `pre`.
pub(crate) fn unpool(fwd: &LocalForward, d_pooled: &Tensor) -> Tensor {
    let mut d_pre = Tensor::zeros(fwd.pre.shape());
    let out = d_pre.data_mut();
    for ((&idx, &h), &d) in fwd
        .argmax
        .iter()
        .zip(fwd.pooled.data())
        .zip(d_pooled.data())
    {
        // rectifier sub-gradient is 0 at exactly 0
        if h > 0.0 {
            out[idx] += d;
        }
    }
    d_pre
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..=MAX_DROPOUT).contains(&p) {
        return Err(Error::Parameter(format!(
            "dropout probability {p} outside [0, {MAX_DROPOUT}]"
        )));
    }
    let keep = 1.0 / (1.0 - p);
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}
