//! Feed-forward acoustic-model networks: layer stacks, forward propagation,
//! hand-written backpropagation and parameter counting.
//!
//! A network is an optional run of convolutional / locally-untied layers
//! over a time×frequency input grid, followed by dense rectified layers and a
//! softmax classifier. Parameters are stored as a flat list of tensors, two
//! per layer (weights then biases), which is also the layout of gradients
//! and optimizer velocities.

mod checkpoint;
pub mod layers;

pub use checkpoint::{load_network, read_network, save_network, write_network, FloatWidth};
pub use layers::{
    conv_forward, dense_forward, dropout_mask, relu, softmax, untied_forward, LocalForward,
    LocalGeometry, LocalSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_init, matmul, matmul_nt, matmul_tn, Rng, Tensor};
use layers::{affine, col2im, unpool};

/// Default standard deviation of initial weights.
pub const DEFAULT_INIT_SCALE: f64 = 0.01;

/// Shape of one input example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputLayout {
    Flat(usize),
    /// `time × frequency` grid, stored time-major.
    Grid {
        time: usize,
        freq: usize,
    },
}

impl InputLayout {
    pub fn len(&self) -> usize {
        match *self {
            InputLayout::Flat(d) => d,
            InputLayout::Grid { time, freq } => time * freq,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense(usize),
    Conv(LocalSpec),
    Untied(LocalSpec),
    SoftmaxOutput(usize),
}

/// How weights are drawn at construction. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    /// `normal(0, scale²)` for every weight.
    Gaussian(f64),
    /// `normal(0, 2/fan_in)` per layer.
    FanIn,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Gaussian(DEFAULT_INIT_SCALE)
    }
}

/// Running representation while chaining layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Repr {
    Grid { channels: usize, t: usize, f: usize },
    Flat(usize),
}

impl Repr {
    fn len(&self) -> usize {
        match *self {
            Repr::Grid { channels, t, f } => channels * t * f,
            Repr::Flat(n) => n,
        }
    }
}

/// A layer resolved against its input representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedLayer {
    Dense { inputs: usize, units: usize },
    Conv(LocalGeometry),
    Untied(LocalGeometry),
    Softmax { inputs: usize, classes: usize },
}

impl ResolvedLayer {
    /// Shapes of the weight and bias tensors.
    pub fn param_shapes(&self) -> (Vec<usize>, Vec<usize>) {
        match *self {
            ResolvedLayer::Dense { inputs, units } => (vec![inputs, units], vec![units]),
            ResolvedLayer::Softmax { inputs, classes } => (vec![inputs, classes], vec![classes]),
            ResolvedLayer::Conv(g) => (
                vec![g.maps, g.in_channels, g.filter_t, g.filter_f],
                vec![g.maps],
            ),
            ResolvedLayer::Untied(g) => (
                vec![g.positions(), g.maps, g.in_channels, g.filter_t, g.filter_f],
                vec![g.positions(), g.maps],
            ),
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            ResolvedLayer::Dense { inputs, .. } | ResolvedLayer::Softmax { inputs, .. } => inputs,
            ResolvedLayer::Conv(g) | ResolvedLayer::Untied(g) => g.patch_len(),
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            ResolvedLayer::Dense { units, .. } => units,
            ResolvedLayer::Softmax { classes, .. } => classes,
            ResolvedLayer::Conv(g) | ResolvedLayer::Untied(g) => g.output_len(),
        }
    }

    pub fn num_params(&self) -> usize {
        let (w, b) = self.param_shapes();
        w.iter().product::<usize>() + b.iter().product::<usize>()
    }
}

/// Checks layer chaining and resolves every layer's geometry.
pub fn resolve_layers(input: InputLayout, layers: &[LayerSpec]) -> Result<Vec<ResolvedLayer>> {
    if input.is_empty() {
        return Err(Error::Config("input layout has no features".into()));
    }
    match layers.last() {
        Some(LayerSpec::SoftmaxOutput(_)) => {}
        _ => {
            return Err(Error::Config(
                "the last layer must be a softmax output".into(),
            ))
        }
    }
    let outputs = layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::SoftmaxOutput(_)))
        .count();
    if outputs != 1 {
        return Err(Error::Config(format!(
            "exactly one softmax output allowed, found {outputs}"
        )));
    }
    let mut repr = match input {
        InputLayout::Flat(d) => Repr::Flat(d),
        InputLayout::Grid { time, freq } => Repr::Grid {
            channels: 1,
            t: time,
            f: freq,
        },
    };
    let mut resolved = Vec::with_capacity(layers.len());
    for (i, spec) in layers.iter().enumerate() {
        let layer = match *spec {
            LayerSpec::Dense(units) => {
                if units == 0 {
                    return Err(Error::Config(format!(
                        "layer {i}: dense layer with 0 units"
                    )));
                }
                let inputs = repr.len();
                repr = Repr::Flat(units);
                ResolvedLayer::Dense { inputs, units }
            }
            LayerSpec::SoftmaxOutput(classes) => {
                if classes == 0 {
                    return Err(Error::Config("softmax output with 0 classes".into()));
                }
                ResolvedLayer::Softmax {
                    inputs: repr.len(),
                    classes,
                }
            }
            LayerSpec::Conv(local) | LayerSpec::Untied(local) => {
                let Repr::Grid { channels, t, f } = repr else {
                    return Err(Error::Config(format!(
                        "layer {i}: convolutional/untied layers need a grid input and must precede dense layers"
                    )));
                };
                let g = LocalGeometry::new(&local, channels, t, f)
                    .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                repr = Repr::Grid {
                    channels: g.maps,
                    t: g.pooled_t(),
                    f: g.pooled_f(),
                };
                if matches!(spec, LayerSpec::Conv(_)) {
                    ResolvedLayer::Conv(g)
                } else {
                    ResolvedLayer::Untied(g)
                }
            }
        };
        resolved.push(layer);
    }
    Ok(resolved)
}

/// Exact count of weights and biases for a layer stack, without allocating it.
pub fn count_params(input: InputLayout, layers: &[LayerSpec]) -> Result<usize> {
    Ok(resolve_layers(input, layers)?
        .iter()
        .map(ResolvedLayer::num_params)
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: InputLayout,
    layers: Vec<LayerSpec>,
    resolved: Vec<ResolvedLayer>,
    params: Vec<Tensor>,
    seed: u64,
}

/// Forward or training-time evaluation.
pub enum Mode<'a> {
    Infer,
    /// Dropout with probability `dropout` on every hidden layer's output.
    Train {
        dropout: f64,
        rng: &'a mut Rng,
    },
}

/// Activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// The batch fed to the first layer.
    pub input: Tensor,
    /// Rectified output of every hidden layer, before dropout.
    pub hidden: Vec<Tensor>,
    /// Dropout mask applied to each hidden layer, if any.
    pub masks: Vec<Option<Tensor>>,
    /// Softmax posteriors, one row per example.
    pub output: Tensor,
    /// Input seen by every layer (post-dropout for layers after the first).
    layer_inputs: Vec<Tensor>,
    local: Vec<Option<LocalForward>>,
}

impl Network {
    /// Builds a network with weights drawn from `init` using `seed`.
    pub fn new(
        input: InputLayout,
        layers: Vec<LayerSpec>,
        init: InitScheme,
        seed: u64,
    ) -> Result<Self> {
        let resolved = resolve_layers(input, &layers)?;
        let mut rng = Rng::new(seed);
        let mut params = Vec::with_capacity(2 * resolved.len());
        for layer in &resolved {
            let (w_shape, b_shape) = layer.param_shapes();
            let scale = match init {
                InitScheme::Gaussian(s) => s,
                InitScheme::FanIn => (2.0 / layer.fan_in() as f64).sqrt(),
            };
            params.push(gaussian_init(&mut rng, &w_shape, scale)?);
            params.push(Tensor::zeros(&b_shape));
        }
        Ok(Network {
            input,
            layers,
            resolved,
            params,
            seed,
        })
    }

    /// Assembles a network from explicit parameters (weights, bias per layer).
    pub fn from_parts(
        input: InputLayout,
        layers: Vec<LayerSpec>,
        params: Vec<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        let resolved = resolve_layers(input, &layers)?;
        if params.len() != 2 * resolved.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors for {} layers",
                params.len(),
                resolved.len()
            )));
        }
        for (i, layer) in resolved.iter().enumerate() {
            let (w, b) = layer.param_shapes();
            if params[2 * i].shape() != w.as_slice() || params[2 * i + 1].shape() != b.as_slice() {
                return Err(Error::Dimension(format!(
                    "layer {i}: expected weights {w:?} and bias {b:?}, got {:?} and {:?}",
                    params[2 * i].shape(),
                    params[2 * i + 1].shape()
                )));
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(Network {
            input,
            layers,
            resolved,
            params,
            seed,
        })
    }

    pub fn input(&self) -> InputLayout {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn resolved(&self) -> &[ResolvedLayer] {
        &self.resolved
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Replaces every parameter; shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        let checked = Network::from_parts(self.input, self.layers.clone(), params, self.seed)?;
        self.params = checked.params;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self.resolved.last() {
            Some(ResolvedLayer::Softmax { classes, .. }) => *classes,
            _ => unreachable!("validated on construction"),
        }
    }

    /// Number of hidden (non-output) layers.
    pub fn num_hidden(&self) -> usize {
        self.resolved.len() - 1
    }

    /// Output width of every hidden layer.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.resolved[..self.num_hidden()]
            .iter()
            .map(ResolvedLayer::output_len)
            .collect()
    }

    /// Exact count of weight and bias scalars.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn forward(&self, batch: &Tensor, mode: Mode<'_>) -> Result<ForwardTrace> {
        self.forward_with(&self.params, batch, mode)
    }

    /// Forward pass using `params` (same shapes as [`Network::params`]) in
    /// place of the stored parameters.
    pub fn forward_with(
        &self,
        params: &[Tensor],
        batch: &Tensor,
        mode: Mode<'_>,
    ) -> Result<ForwardTrace> {
        self.check_params(params)?;
        if batch.shape().len() != 2 || batch.cols() != self.input.len() {
            return Err(Error::Dimension(format!(
                "network expects batches of {} features ({:?}), got shape {:?}",
                self.input.len(),
                self.input,
                batch.shape()
            )));
        }
        let (dropout, mut rng) = match mode {
            Mode::Infer => (0.0, None),
            Mode::Train { dropout, rng } => {
                if !(0.0..=layers::MAX_DROPOUT).contains(&dropout) {
                    return Err(Error::Parameter(format!(
                        "dropout probability {dropout} outside [0, {}]",
                        layers::MAX_DROPOUT
                    )));
                }
                (dropout, Some(rng))
            }
        };
        let hidden_count = self.num_hidden();
        let mut hidden = Vec::with_capacity(hidden_count);
        let mut masks = Vec::with_capacity(hidden_count);
        let mut layer_inputs = Vec::with_capacity(self.resolved.len());
        let mut local = Vec::with_capacity(self.resolved.len());
        let mut x = batch.clone();

        for (i, layer) in self.resolved.iter().enumerate() {
            let (w, b) = (&params[2 * i], &params[2 * i + 1]);
            match *layer {
                ResolvedLayer::Softmax { .. } => {
                    let logits = affine(&x, w, b)?;
                    if !logits.is_finite() {
                        return Err(Error::Numerical("logits overflowed".into()));
                    }
                    let output = softmax(&logits)?;
                    layer_inputs.push(x);
                    local.push(None);
                    return Ok(ForwardTrace {
                        input: batch.clone(),
                        hidden,
                        masks,
                        output,
                        layer_inputs,
                        local,
                    });
                }
                ResolvedLayer::Dense { .. } => {
                    let h = dense_forward(&x, w, b)?;
                    layer_inputs.push(x);
                    local.push(None);
                    hidden.push(h);
                }
                ResolvedLayer::Conv(g) | ResolvedLayer::Untied(g) => {
                    let fwd = if matches!(layer, ResolvedLayer::Conv(_)) {
                        conv_forward(&x, &g, w, b)?
                    } else {
                        untied_forward(&x, &g, w, b)?
                    };
                    hidden.push(fwd.pooled.clone());
                    layer_inputs.push(x);
                    local.push(Some(fwd));
                }
            }
            let h = hidden.last().expect("just pushed");
            if !h.is_finite() {
                return Err(Error::Numerical(format!("hidden layer {i} overflowed")));
            }
            let mask = match rng.as_deref_mut() {
                Some(rng) if dropout > 0.0 => Some(dropout_mask(h.shape(), dropout, rng)?),
                _ => None,
            };
            x = match &mask {
                Some(m) => {
                    let mut y = h.clone();
                    y.data_mut()
                        .iter_mut()
                        .zip(m.data())
                        .for_each(|(v, k)| *v *= k);
                    y
                }
                None => h.clone(),
            };
            masks.push(mask);
        }
        unreachable!("last layer is a softmax output")
    }

    /// Mean cross-entropy and its gradient on one batch, evaluated at `params`.
    pub fn loss_and_gradient(
        &self,
        params: &[Tensor],
        batch: &Tensor,
        labels: &[usize],
        mode: Mode<'_>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let trace = self.forward_with(params, batch, mode)?;
        let loss = crate::optim::cross_entropy(&trace.output, labels)?;
        let grads = self.backward_with(params, &trace, labels)?;
        Ok((loss, grads))
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Dimension(
                "parameter list does not match the network".into(),
            ));
        }
        Ok(())
    }

    /// Posteriors in inference mode, evaluated in chunks of `batch_size` rows.
    pub fn predict(&self, frames: &Tensor, batch_size: usize) -> Result<Tensor> {
        let n = frames.rows();
        let k = self.num_classes();
        let mut data = Vec::with_capacity(n * k);
        let step = batch_size.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + step).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let trace = self.forward(&frames.select_rows(&idx), Mode::Infer)?;
            data.extend_from_slice(trace.output.data());
            start = end;
        }
        Tensor::new(vec![n, k], data)
    }

    /// Sub-gradient of the mean cross-entropy over the traced batch with
    /// respect to every parameter, in [`Network::params`] order.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<Vec<Tensor>> {
        self.backward_with(&self.params, trace, labels)
    }

    /// Backward pass for a trace produced by [`Network::forward_with`] on the
    /// same `params`.
    pub fn backward_with(
        &self,
        params: &[Tensor],
        trace: &ForwardTrace,
        labels: &[usize],
    ) -> Result<Vec<Tensor>> {
        self.check_params(params)?;
        let batch = trace.output.rows();
        let k = self.num_classes();
        if trace.layer_inputs.len() != self.resolved.len()
            || trace.hidden.len() != self.num_hidden()
            || trace.output.cols() != k
        {
            return Err(Error::Dimension(
                "trace was not produced by this network".into(),
            ));
        }
        if labels.len() != batch {
            return Err(Error::Dimension(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Parameter(format!(
                "label {bad} out of range for {k} classes"
            )));
        }

        let mut grads = vec![Tensor::zeros(&[0]); params.len()];
        // d loss / d logits = (ŷ − onehot) / batch
        let mut delta = trace.output.clone();
        for (row, &y) in delta.data_mut().chunks_mut(k).zip(labels) {
            row[y] -= 1.0;
        }
        let inv = 1.0 / batch as f64;
        delta.data_mut().iter_mut().for_each(|v| *v *= inv);

        for i in (0..self.resolved.len()).rev() {
            let x = &trace.layer_inputs[i];
            let w = &params[2 * i];
            let need_input_grad = i > 0;
            let d_input = match self.resolved[i] {
                ResolvedLayer::Softmax { .. } | ResolvedLayer::Dense { .. } => {
                    let dz = if let ResolvedLayer::Dense { .. } = self.resolved[i] {
                        let h = &trace.hidden[i];
                        let mut dz = delta.clone();
                        dz.data_mut().iter_mut().zip(h.data()).for_each(|(d, &a)| {
                            if a <= 0.0 {
                                *d = 0.0;
                            }
                        });
                        dz
                    } else {
                        delta.clone()
                    };
                    grads[2 * i] = matmul_tn(x, &dz)?;
                    grads[2 * i + 1] = column_sums(&dz);
                    if need_input_grad {
                        Some(matmul_nt(&dz, w)?)
                    } else {
                        None
                    }
                }
                ResolvedLayer::Conv(g) => {
                    let fwd = trace.local[i].as_ref().ok_or_else(trace_mismatch)?;
                    let d_pre = unpool(fwd, &delta);
                    let w_mat = Tensor::new(vec![g.maps, g.patch_len()], w.data().to_vec())?;
                    let dw = matmul_tn(&d_pre, &fwd.patches)?;
                    grads[2 * i] = dw.reshape(w.shape().to_vec())?;
                    grads[2 * i + 1] = column_sums(&d_pre);
                    if need_input_grad {
                        let d_patches = matmul(&d_pre, &w_mat)?;
                        Some(col2im(&d_patches, &g, batch))
                    } else {
                        None
                    }
                }
                ResolvedLayer::Untied(g) => {
                    let fwd = trace.local[i].as_ref().ok_or_else(trace_mismatch)?;
                    let d_pre = unpool(fwd, &delta);
                    let (dw, db, d_patches) =
                        untied_backward(&g, w, &fwd.patches, &d_pre, batch, need_input_grad);
                    grads[2 * i] = Tensor::new(w.shape().to_vec(), dw)?;
                    grads[2 * i + 1] = Tensor::new(params[2 * i + 1].shape().to_vec(), db)?;
                    d_patches.map(|dp| col2im(&dp, &g, batch))
                }
            };
            if let Some(mut d) = d_input {
                // gradient w.r.t. layer i's input = d(h_{i-1} after dropout)
                if let Some(mask) = &trace.masks[i - 1] {
                    d.data_mut()
                        .iter_mut()
                        .zip(mask.data())
                        .for_each(|(v, m)| *v *= m);
                }
                delta = d;
            }
        }
        Ok(grads)
    }
}

fn trace_mismatch() -> Error {
    Error::Dimension("trace was not produced by this network".into())
}

fn column_sums(m: &Tensor) -> Tensor {
    let n = m.cols();
    let mut out = vec![0.0; n];
    if n > 0 {
        for row in m.data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    Tensor::new(vec![n], out).expect("vector shape")
}

type UntiedGrads = (Vec<f64>, Vec<f64>, Option<Tensor>);

fn untied_backward(
    g: &LocalGeometry,
    w: &Tensor,
    patches: &Tensor,
    d_pre: &Tensor,
    batch: usize,
    need_input_grad: bool,
) -> UntiedGrads {
    let pos = g.positions();
    let patch = g.patch_len();
    let w = w.data();
    let mut dw = vec![0.0; pos * g.maps * patch];
    let mut db = vec![0.0; pos * g.maps];
    let mut d_patches = need_input_grad.then(|| vec![0.0; batch * pos * patch]);
    for b in 0..batch {
        for p in 0..pos {
            let row = b * pos + p;
            let x = patches.row(row);
            for m in 0..g.maps {
                let d = d_pre.get(row, m);
                if d == 0.0 {
                    continue;
                }
                let off = (p * g.maps + m) * patch;
                db[p * g.maps + m] += d;
                for (gw, xv) in dw[off..off + patch].iter_mut().zip(x) {
                    *gw += d * xv;
                }
                if let Some(dp) = d_patches.as_mut() {
                    let target = &mut dp[row * patch..(row + 1) * patch];
                    for (t, wv) in target.iter_mut().zip(&w[off..off + patch]) {
                        *t += d * wv;
                    }
                }
            }
        }
    }
    let d_patches =
        d_patches.map(|v| Tensor::new(vec![batch * pos, patch], v).expect("patch grads"));
    (dw, db, d_patches)
}
