//! Minimal feed-forward network engine: dense, 5×5 convolution, 2×2 max
//! pooling and softmax layers trained with minibatch SGD.
//!
//! One epoch of SGD is one application of the training map `w ↦ T(w)`;
//! [`train`] records the weight vector after every epoch in a [`SnapshotLog`].

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const CONV_KERNEL: usize = 5;

/// Rows evaluated at once when computing full-dataset losses.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        if self == Activation::Relu {
            for x in v {
                *x = x.max(0.0);
            }
        }
    }

    /// Multiplies `grad` by the derivative, given the post-activation output.
    fn backprop(self, output: &[f64], grad: &mut [f64]) {
        if self == Activation::Relu {
            for (g, &y) in grad.iter_mut().zip(output) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { units: usize, activation: Activation },
    Conv2d { filters: usize, kernel: usize, activation: Activation },
    MaxPool2x2,
    /// Must be last; the network's logits are its input.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Shape,
    pub out_shape: Shape,
}

/// Location of one layer's parameters in the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub layer: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Layer sequence plus the offset table of its flattened parameters.
///
/// Dense weights are stored `(out, in)` row-major, convolution kernels
/// `(filters, channels, k, k)`, each followed by the layer's bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub blocks: Vec<ParamBlock>,
    pub param_count: usize,
}

impl Architecture {
    pub fn new(input: Shape, kinds: &[LayerKind]) -> Result<Self> {
        if input.is_empty() {
            return invalid("input shape is empty");
        }
        let mut layers = Vec::with_capacity(kinds.len());
        let mut blocks = Vec::new();
        let mut shape = input;
        let mut offset = 0;
        for (i, &kind) in kinds.iter().enumerate() {
            let out = match kind {
                LayerKind::Dense { units, .. } => {
                    if units == 0 {
                        return invalid(format!("layer {i}: dense layer with zero units"));
                    }
                    let n_in = shape.len();
                    blocks.push(ParamBlock {
                        layer: i,
                        weights: offset..offset + units * n_in,
                        bias: offset + units * n_in..offset + units * n_in + units,
                        fan_in: n_in,
                        fan_out: units,
                    });
                    offset += units * n_in + units;
                    Shape::flat(units)
                }
                LayerKind::Conv2d { filters, kernel, .. } => {
                    if filters == 0 || kernel == 0 || shape.height < kernel || shape.width < kernel {
                        return invalid(format!("layer {i}: convolution does not fit input {shape:?}"));
                    }
                    let w = filters * shape.channels * kernel * kernel;
                    blocks.push(ParamBlock {
                        layer: i,
                        weights: offset..offset + w,
                        bias: offset + w..offset + w + filters,
                        fan_in: shape.channels * kernel * kernel,
                        fan_out: filters * kernel * kernel,
                    });
                    offset += w + filters;
                    Shape::new(filters, shape.height - kernel + 1, shape.width - kernel + 1)
                }
                LayerKind::MaxPool2x2 => {
                    if shape.height < 2 || shape.width < 2 {
                        return invalid(format!("layer {i}: pooling needs at least 2x2 input"));
                    }
                    Shape::new(shape.channels, shape.height / 2, shape.width / 2)
                }
                LayerKind::Softmax => {
                    if i + 1 != kinds.len() {
                        return invalid("softmax must be the last layer");
                    }
                    shape
                }
            };
            layers.push(LayerSpec { kind, in_shape: shape, out_shape: out });
            shape = out;
        }
        Ok(Self { input, layers, blocks, param_count: offset })
    }

    /// Fully connected net `sizes[0] → … → sizes[last]` with ReLU hidden
    /// layers, identity output layer and softmax.
    pub fn dense(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return invalid("dense architecture needs at least input and output sizes");
        }
        let mut kinds: Vec<LayerKind> = sizes[1..]
            .iter()
            .enumerate()
            .map(|(i, &units)| LayerKind::Dense {
                units,
                activation: if i + 2 == sizes.len() { Activation::Identity } else { Activation::Relu },
            })
            .collect();
        kinds.push(LayerKind::Softmax);
        Self::new(Shape::flat(sizes[0]), &kinds)
    }

    /// conv 16×5×5 → pool → conv 32×5×5 → pool → dense 100 → dense 10 → softmax on 28×28 input.
    pub fn mnist_convnet() -> Self {
        let relu = Activation::Relu;
        Self::new(
            Shape::new(1, 28, 28),
            &[
                LayerKind::Conv2d { filters: 16, kernel: CONV_KERNEL, activation: relu },
                LayerKind::MaxPool2x2,
                LayerKind::Conv2d { filters: 32, kernel: CONV_KERNEL, activation: relu },
                LayerKind::MaxPool2x2,
                LayerKind::Dense { units: 100, activation: relu },
                LayerKind::Dense { units: 10, activation: Activation::Identity },
                LayerKind::Softmax,
            ],
        )
        .expect("static architecture is valid")
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(self.input.len(), |l| l.out_shape.len())
    }

    /// `true` for flat indices that hold biases.
    pub fn bias_positions(&self) -> Vec<bool> {
        let mut out = vec![false; self.param_count];
        for b in &self.blocks {
            out[b.bias.clone()].iter_mut().for_each(|x| *x = true);
        }
        out
    }

    /// Splits a flat vector into per-layer `(weights, bias)` tensors.
    pub fn unflatten(&self, w: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        if w.len() != self.param_count {
            return invalid(format!("expected {} parameters, got {}", self.param_count, w.len()));
        }
        Ok(self.blocks.iter().map(|b| (w[b.weights.clone()].to_vec(), w[b.bias.clone()].to_vec())).collect())
    }

    pub fn flatten(&self, tensors: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
        if tensors.len() != self.blocks.len() {
            return invalid(format!("expected {} parameter blocks, got {}", self.blocks.len(), tensors.len()));
        }
        let mut out = vec![0.0; self.param_count];
        for (b, (w, bias)) in self.blocks.iter().zip(tensors) {
            if w.len() != b.weights.len() || bias.len() != b.bias.len() {
                return invalid(format!("parameter block for layer {} has the wrong size", b.layer));
            }
            out[b.weights.clone()].copy_from_slice(w);
            out[b.bias.clone()].copy_from_slice(bias);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    He,
    Xavier,
    RandomNormal,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he" => Ok(Self::He),
            "xavier" => Ok(Self::Xavier),
            "random_normal" | "normal" => Ok(Self::RandomNormal),
            other => invalid(format!("unknown init scheme {other:?}")),
        }
    }
}

/// Normal-distribution initialization; biases are zero.
pub fn init_weights(arch: &Architecture, scheme: InitScheme, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; arch.param_count];
    for b in &arch.blocks {
        let std = match scheme {
            InitScheme::He => (2.0 / b.fan_in as f64).sqrt(),
            InitScheme::Xavier => (2.0 / (b.fan_in + b.fan_out) as f64).sqrt(),
            InitScheme::RandomNormal => 1.0,
        };
        let dist = Normal::new(0.0, std).expect("positive std");
        for x in &mut w[b.weights.clone()] {
            *x = dist.sample(&mut rng);
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub weights: Vec<f64>,
}

/// Per-layer outputs of a forward pass over a batch (sample-major rows).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `outputs[0]` is the input; `outputs[i + 1]` is layer `i`'s output.
    outputs: Vec<Vec<f64>>,
    /// Flat argmax positions for each pooling layer (indexed by layer).
    pool_index: Vec<Vec<usize>>,
}

impl ForwardCache {
    /// Pre-softmax outputs, `batch × classes`.
    pub fn logits(&self) -> &[f64] {
        self.outputs.last().expect("cache has the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Network {
    pub fn new(arch: Architecture, scheme: InitScheme, seed: u64) -> Self {
        let weights = init_weights(&arch, scheme, seed);
        Self { arch, weights }
    }

    pub fn with_weights(arch: Architecture, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != arch.param_count {
            return invalid(format!("expected {} parameters, got {}", arch.param_count, weights.len()));
        }
        Ok(Self { arch, weights })
    }

    /// Runs `inputs` (`batch × input_len`, row-major) through every layer.
    /// The softmax layer is not applied; see [`softmax`].
    pub fn forward(&self, inputs: &[f64]) -> Result<ForwardCache> {
        let n_in = self.arch.input.len();
        if inputs.is_empty() || inputs.len() % n_in != 0 {
            return invalid(format!("input length {} is not a positive multiple of {n_in}", inputs.len()));
        }
        let batch = inputs.len() / n_in;
        let mut outputs = Vec::with_capacity(self.arch.layers.len() + 1);
        outputs.push(inputs.to_vec());
        let mut pool_index = vec![Vec::new(); self.arch.layers.len()];
        let mut blocks = self.arch.blocks.iter();
        for (i, spec) in self.arch.layers.iter().enumerate() {
            let x = outputs.last().unwrap();
            let y = match spec.kind {
                LayerKind::Dense { units, activation } => {
                    let b = blocks.next().unwrap();
                    let mut y = dense_forward(x, batch, spec.in_shape.len(), units, &self.weights[b.weights.clone()], &self.weights[b.bias.clone()]);
                    activation.apply(&mut y);
                    y
                }
                LayerKind::Conv2d { kernel, activation, .. } => {
                    let b = blocks.next().unwrap();
                    let mut y = conv_forward(x, batch, spec, kernel, &self.weights[b.weights.clone()], &self.weights[b.bias.clone()]);
                    activation.apply(&mut y);
                    y
                }
                LayerKind::MaxPool2x2 => {
                    let (y, idx) = pool_forward(x, batch, spec);
                    pool_index[i] = idx;
                    y
                }
                LayerKind::Softmax => break,
            };
            outputs.push(y);
        }
        Ok(ForwardCache { batch, outputs, pool_index })
    }

    /// Class probabilities, `batch × classes`.
    pub fn predict_proba(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(inputs)?;
        Ok(softmax(cache.logits(), self.arch.output_len()))
    }

    /// Gradient of the mean cross-entropy over the batch, in flat layout.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Vec<f64>> {
        let classes = self.arch.output_len();
        if labels.len() != cache.batch {
            return invalid(format!("{} labels for a batch of {}", labels.len(), cache.batch));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return invalid(format!("label {l} out of range for {classes} classes"));
        }
        let batch = cache.batch;
        let mut grad = vec![0.0; self.arch.param_count];
        // d(mean CE)/d logits = (softmax − onehot) / batch
        let mut delta = softmax(cache.logits(), classes);
        for (row, &l) in delta.chunks_mut(classes).zip(labels) {
            row[l] -= 1.0;
            row.iter_mut().for_each(|v| *v /= batch as f64);
        }
        let mut block_iter = self.arch.blocks.iter().rev();
        let n_layers = self.arch.layers.len();
        for i in (0..n_layers).rev() {
            let spec = &self.arch.layers[i];
            let x = &cache.outputs[i];
            let need_input_grad = i > 0;
            delta = match spec.kind {
                LayerKind::Softmax => continue,
                LayerKind::Dense { units, activation } => {
                    activation.backprop(&cache.outputs[i + 1], &mut delta);
                    let b = block_iter.next().unwrap();
                    let (gw, gb) = split_grad(&mut grad, b);
                    dense_backward(x, &delta, batch, spec.in_shape.len(), units, &self.weights[b.weights.clone()], gw, gb, need_input_grad)
                }
                LayerKind::Conv2d { kernel, activation, .. } => {
                    activation.backprop(&cache.outputs[i + 1], &mut delta);
                    let b = block_iter.next().unwrap();
                    let (gw, gb) = split_grad(&mut grad, b);
                    conv_backward(x, &delta, batch, spec, kernel, &self.weights[b.weights.clone()], gw, gb, need_input_grad)
                }
                LayerKind::MaxPool2x2 => pool_backward(&delta, batch, spec, &cache.pool_index[i]),
            };
        }
        Ok(grad)
    }

    /// Mean cross-entropy and its gradient on one batch.
    pub fn loss_and_gradient(&self, inputs: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward(inputs)?;
        let loss = cross_entropy(cache.logits(), labels, self.arch.output_len())?;
        Ok((loss, self.backward(&cache, labels)?))
    }

    /// Mean cross-entropy over a whole dataset, evaluated in chunks.
    pub fn dataset_loss(&self, data: &Dataset) -> Result<f64> {
        let n_in = data.sample_len;
        let mut total = 0.0;
        for (x, y) in data.inputs.chunks(EVAL_CHUNK * n_in).zip(data.labels.chunks(EVAL_CHUNK)) {
            let cache = self.forward(x)?;
            total += cross_entropy(cache.logits(), y, self.arch.output_len())? * y.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    /// Fraction of samples whose arg-max class equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let classes = self.arch.output_len();
        let mut hits = 0usize;
        for (x, y) in data.inputs.chunks(EVAL_CHUNK * data.sample_len).zip(data.labels.chunks(EVAL_CHUNK)) {
            let cache = self.forward(x)?;
            for (row, &l) in cache.logits().chunks(classes).zip(y) {
                let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|p| p.0);
                hits += usize::from(arg == Some(l));
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

fn split_grad<'a>(grad: &'a mut [f64], b: &ParamBlock) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(b.weights.end, b.bias.start);
    let (w, rest) = grad[b.weights.start..b.bias.end].split_at_mut(b.weights.len());
    (w, rest)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return invalid(format!("{} logits for {} labels and {classes} classes", logits.len(), labels.len()));
    }
    if labels.is_empty() {
        return invalid("empty batch");
    }
    let mut total = 0.0;
    for (row, &l) in logits.chunks(classes).zip(labels) {
        if l >= classes {
            return invalid(format!("label {l} out of range for {classes} classes"));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        total += max + sum.ln() - row[l];
    }
    Ok(total / labels.len() as f64)
}

/// `y = x Wᵀ + b` for `x: batch × n_in`, `W: n_out × n_in`.
pub(crate) fn dense_forward(x: &[f64], batch: usize, n_in: usize, n_out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; batch * n_out];
    for row in y.chunks_mut(n_out) {
        row.copy_from_slice(b);
    }
    matmul(
        MatMut::from_row_major_slice_mut(&mut y, batch, n_out),
        Accum::Add,
        MatRef::from_row_major_slice(x, batch, n_in),
        MatRef::from_row_major_slice(w, n_out, n_in).transpose(),
        1.0,
        Par::Seq,
    );
    y
}

/// Accumulates `dW += δᵀ x`, `db += Σ δ` and returns `δ W` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    delta: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    input_grad: bool,
) -> Vec<f64> {
    let d = MatRef::from_row_major_slice(delta, batch, n_out);
    matmul(
        MatMut::from_row_major_slice_mut(gw, n_out, n_in),
        Accum::Add,
        d.transpose(),
        MatRef::from_row_major_slice(x, batch, n_in),
        1.0,
        Par::Seq,
    );
    for row in delta.chunks(n_out) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    if !input_grad {
        return Vec::new();
    }
    let mut dx = vec![0.0; batch * n_in];
    matmul(
        MatMut::from_row_major_slice_mut(&mut dx, batch, n_in),
        Accum::Replace,
        d,
        MatRef::from_row_major_slice(w, n_out, n_in),
        1.0,
        Par::Seq,
    );
    dx
}

/// Valid (unpadded) stride-1 cross-correlation.
fn conv_forward(x: &[f64], batch: usize, spec: &LayerSpec, k: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let (ci, hi, wi) = (spec.in_shape.channels, spec.in_shape.height, spec.in_shape.width);
    let (co, ho, wo) = (spec.out_shape.channels, spec.out_shape.height, spec.out_shape.width);
    let mut y = vec![0.0; batch * co * ho * wo];
    for n in 0..batch {
        let xs = &x[n * ci * hi * wi..(n + 1) * ci * hi * wi];
        let ys = &mut y[n * co * ho * wo..(n + 1) * co * ho * wo];
        for f in 0..co {
            let out = &mut ys[f * ho * wo..(f + 1) * ho * wo];
            out.iter_mut().for_each(|v| *v = b[f]);
            for c in 0..ci {
                let plane = &xs[c * hi * wi..(c + 1) * hi * wi];
                for di in 0..k {
                    for dj in 0..k {
                        let wv = w[((f * ci + c) * k + di) * k + dj];
                        for r in 0..ho {
                            let src = &plane[(r + di) * wi + dj..(r + di) * wi + dj + wo];
                            for (o, s) in out[r * wo..(r + 1) * wo].iter_mut().zip(src) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    delta: &[f64],
    batch: usize,
    spec: &LayerSpec,
    k: usize,
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    input_grad: bool,
) -> Vec<f64> {
    let (ci, hi, wi) = (spec.in_shape.channels, spec.in_shape.height, spec.in_shape.width);
    let (co, ho, wo) = (spec.out_shape.channels, spec.out_shape.height, spec.out_shape.width);
    let mut dx = if input_grad { vec![0.0; x.len()] } else { Vec::new() };
    for n in 0..batch {
        let xs = &x[n * ci * hi * wi..(n + 1) * ci * hi * wi];
        let ds = &delta[n * co * ho * wo..(n + 1) * co * ho * wo];
        for f in 0..co {
            let d = &ds[f * ho * wo..(f + 1) * ho * wo];
            gb[f] += d.iter().sum::<f64>();
            for c in 0..ci {
                let plane = &xs[c * hi * wi..(c + 1) * hi * wi];
                for di in 0..k {
                    for dj in 0..k {
                        let widx = ((f * ci + c) * k + di) * k + dj;
                        let mut acc = 0.0;
                        for r in 0..ho {
                            let src = &plane[(r + di) * wi + dj..(r + di) * wi + dj + wo];
                            acc += d[r * wo..(r + 1) * wo].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gw[widx] += acc;
                        if input_grad {
                            let wv = w[widx];
                            let base = n * ci * hi * wi + c * hi * wi;
                            for r in 0..ho {
                                let dst = &mut dx[base + (r + di) * wi + dj..base + (r + di) * wi + dj + wo];
                                for (o, g) in dst.iter_mut().zip(&d[r * wo..(r + 1) * wo]) {
                                    *o += wv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2×2 stride-2 max pooling; ties go to the first element in row-major order.
fn pool_forward(x: &[f64], batch: usize, spec: &LayerSpec) -> (Vec<f64>, Vec<usize>) {
    let (c, hi, wi) = (spec.in_shape.channels, spec.in_shape.height, spec.in_shape.width);
    let (ho, wo) = (spec.out_shape.height, spec.out_shape.width);
    let mut y = Vec::with_capacity(batch * c * ho * wo);
    let mut idx = Vec::with_capacity(batch * c * ho * wo);
    for n in 0..batch {
        for ch in 0..c {
            let base = (n * c + ch) * hi * wi;
            for r in 0..ho {
                for s in 0..wo {
                    let mut best = base + 2 * r * wi + 2 * s;
                    for (dr, ds) in [(0, 1), (1, 0), (1, 1)] {
                        let p = base + (2 * r + dr) * wi + 2 * s + ds;
                        if x[p] > x[best] {
                            best = p;
                        }
                    }
                    y.push(x[best]);
                    idx.push(best);
                }
            }
        }
    }
    (y, idx)
}

fn pool_backward(delta: &[f64], batch: usize, spec: &LayerSpec, idx: &[usize]) -> Vec<f64> {
    let mut dx = vec![0.0; batch * spec.in_shape.len()];
    for (&p, &d) in idx.iter().zip(delta) {
        dx[p] += d;
    }
    dx
}

/// Flattened samples with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub sample_len: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, sample_len: usize) -> Result<Self> {
        if sample_len == 0 || inputs.len() != labels.len() * sample_len {
            return invalid(format!("{} inputs do not match {} labels of length {sample_len}", inputs.len(), labels.len()));
        }
        Ok(Self { inputs, labels, sample_len })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }
}

/// Positions whose weights are pinned at zero during training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub zeroed: Vec<bool>,
}

impl Mask {
    pub fn apply(&self, w: &mut [f64]) {
        for (x, &z) in w.iter_mut().zip(&self.zeroed) {
            if z {
                *x = 0.0;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.zeroed.iter().filter(|&&z| z).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_scheme: InitScheme,
    pub seed: u64,
    #[serde(skip)]
    pub mask: Option<Mask>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 1,
            batch_size: DEFAULT_BATCH_SIZE,
            init_scheme: InitScheme::Xavier,
            seed: 0,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub weights: Vec<f64>,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub epoch: usize,
    pub kind: String,
    pub detail: String,
}

/// Serialized alongside the weight files as `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub arch: Architecture,
    pub config: TrainConfig,
    pub events: Vec<LogEvent>,
    pub epochs: Vec<usize>,
}

/// Per-epoch weight snapshots and losses of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotLog {
    pub arch: Architecture,
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
    pub events: Vec<LogEvent>,
}

impl SnapshotLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn test_losses(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.test_loss).collect()
    }

    pub fn record_at(&self, epoch: usize) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }

    /// Keeps only records with `epoch ≤ last`.
    pub fn truncate_after(&mut self, last: usize) {
        self.records.retain(|r| r.epoch <= last);
    }

    /// Appends another run whose first record duplicates our last one.
    pub fn extend_with(&mut self, other: SnapshotLog) -> Result<()> {
        let last = self.records.last().map(|r| r.epoch);
        let mut it = other.records.into_iter().peekable();
        if let (Some(l), Some(first)) = (last, it.peek()) {
            if first.epoch == l {
                it.next();
            } else if first.epoch < l {
                return invalid(format!("continuation starts at epoch {} before {l}", first.epoch));
            }
        }
        self.records.extend(it);
        self.events.extend(other.events);
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("weights"))?;
        let meta = LogMeta {
            arch: self.arch.clone(),
            config: self.config.clone(),
            events: self.events.clone(),
            epochs: self.records.iter().map(|r| r.epoch).collect(),
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        let mut csv = String::from("epoch,train_loss,test_loss\n");
        for r in &self.records {
            let test = r.test_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(csv, "{},{:e},{}", r.epoch, r.train_loss, test).unwrap();
            let mut f = std::io::BufWriter::new(std::fs::File::create(weight_file(dir, r.epoch))?);
            for v in &r.weights {
                f.write_all(&v.to_le_bytes())?;
            }
            f.flush()?;
        }
        std::fs::write(dir.join("losses.csv"), csv)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: LogMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let n = meta.arch.param_count;
        let mut losses = std::collections::HashMap::new();
        let reader = BufReader::new(std::fs::File::open(dir.join("losses.csv"))?);
        for (i, line) in reader.lines().enumerate().skip(1) {
            let line = line?;
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("losses.csv line {}: {line:?}", i + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let epoch: usize = parts[0].parse().map_err(|_| bad())?;
            let train: f64 = parts[1].parse().map_err(|_| bad())?;
            let test: Option<f64> = if parts[2].is_empty() { None } else { Some(parts[2].parse().map_err(|_| bad())?) };
            losses.insert(epoch, (train, test));
        }
        let mut records = Vec::with_capacity(meta.epochs.len());
        for &epoch in &meta.epochs {
            let mut bytes = Vec::with_capacity(n * 8);
            std::fs::File::open(weight_file(dir, epoch))?.read_to_end(&mut bytes)?;
            if bytes.len() != n * 8 {
                return Err(Error::Format(format!("weight file for epoch {epoch} has {} bytes, expected {}", bytes.len(), n * 8)));
            }
            let weights = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let (train_loss, test_loss) = *losses
                .get(&epoch)
                .ok_or_else(|| Error::Format(format!("losses.csv has no row for epoch {epoch}")))?;
            records.push(EpochRecord { epoch, weights, train_loss, test_loss });
        }
        Ok(Self { arch: meta.arch, config: meta.config, records, events: meta.events })
    }
}

fn weight_file(dir: &Path, epoch: usize) -> std::path::PathBuf {
    dir.join("weights").join(format!("epoch_{epoch:05}.bin"))
}

fn record(net: &Network, epoch: usize, train: &Dataset, test: Option<&Dataset>, events: &mut Vec<LogEvent>) -> Result<EpochRecord> {
    let train_loss = net.dataset_loss(train)?;
    let test_loss = test.map(|t| net.dataset_loss(t)).transpose()?;
    if !train_loss.is_finite() || test_loss.is_some_and(|v| !v.is_finite()) {
        warn!("non-finite loss at epoch {epoch}");
        events.push(LogEvent { epoch, kind: "non_finite_loss".into(), detail: format!("train loss {train_loss}") });
    }
    Ok(EpochRecord { epoch, weights: net.weights.clone(), train_loss, test_loss })
}

/// Trains for `config.epochs` epochs starting from the network's current
/// weights, which are logged as epoch `start_epoch`.
///
/// The batch order of epoch `t` depends only on `(seed, t)`, so a run
/// resumed at `start_epoch` sees the same batches as an uninterrupted one.
pub fn train_from(
    net: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    start_epoch: usize,
) -> Result<SnapshotLog> {
    if train.is_empty() {
        return invalid("training set is empty");
    }
    if train.sample_len != net.arch.input.len() || test.is_some_and(|t| t.sample_len != train.sample_len) {
        return invalid("sample length does not match the network input");
    }
    if !(config.learning_rate >= 0.0) || !config.learning_rate.is_finite() {
        return invalid(format!("learning rate {} must be finite and non-negative", config.learning_rate));
    }
    if config.batch_size == 0 {
        return invalid("batch size must be positive");
    }
    if let Some(m) = &config.mask {
        if m.zeroed.len() != net.weights.len() {
            return invalid(format!("mask has {} entries for {} weights", m.zeroed.len(), net.weights.len()));
        }
        m.apply(&mut net.weights);
    }
    let mut events = Vec::new();
    let mut records = vec![record(net, start_epoch, train, test, &mut events)?];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut xb = Vec::with_capacity(config.batch_size * train.sample_len);
    let mut yb = Vec::with_capacity(config.batch_size);
    for epoch in start_epoch..start_epoch + config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(train.sample(i));
                yb.push(train.labels[i]);
            }
            let cache = net.forward(&xb)?;
            let grad = net.backward(&cache, &yb)?;
            for (w, g) in net.weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
            if let Some(m) = &config.mask {
                m.apply(&mut net.weights);
            }
        }
        records.push(record(net, epoch + 1, train, test, &mut events)?);
    }
    Ok(SnapshotLog { arch: net.arch.clone(), config: config.clone(), records, events })
}

/// Initializes a network from `config` and trains it from epoch 0.
pub fn train(arch: &Architecture, train_set: &Dataset, test: Option<&Dataset>, config: &TrainConfig) -> Result<(Network, SnapshotLog)> {
    let mut net = Network::new(arch.clone(), config.init_scheme, config.seed);
    let log = train_from(&mut net, train_set, test, config, 0)?;
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn layout_of_mnist_convnet() {
        let arch = Architecture::mnist_convnet();
        let shapes: Vec<Shape> = arch.layers.iter().map(|l| l.out_shape).collect();
        assert_eq!(shapes[0], Shape::new(16, 24, 24));
        assert_eq!(shapes[1], Shape::new(16, 12, 12));
        assert_eq!(shapes[2], Shape::new(32, 8, 8));
        assert_eq!(shapes[3], Shape::new(32, 4, 4));
        assert_eq!(arch.param_count, 16 * 25 + 16 + 32 * 16 * 25 + 32 + 512 * 100 + 100 + 100 * 10 + 10);
        let w = random_vec(arch.param_count, 1);
        assert_eq!(arch.flatten(&arch.unflatten(&w).unwrap()).unwrap(), w);
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::new(Shape::flat(4), &[LayerKind::Softmax, LayerKind::MaxPool2x2]).is_err());
        assert!(Architecture::new(Shape::new(1, 3, 3), &[LayerKind::Conv2d { filters: 2, kernel: 5, activation: Activation::Relu }]).is_err());
        assert!(Architecture::dense(&[3]).is_err());
    }

    #[test]
    fn he_init_statistics() {
        let arch = Architecture::new(Shape::flat(100), &[LayerKind::Dense { units: 1000, activation: Activation::Identity }]).unwrap();
        let w = init_weights(&arch, InitScheme::He, 7);
        let b = &arch.blocks[0];
        let ws = &w[b.weights.clone()];
        assert_eq!(ws.len(), 100_000);
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        let std = (ws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ws.len() as f64).sqrt();
        let want = (2.0f64 / 100.0).sqrt();
        assert!((std - want).abs() / want < 0.03, "{std} vs {want}");
        assert!(w[b.bias.clone()].iter().all(|&v| v == 0.0));
        assert_eq!(w, init_weights(&arch, InitScheme::He, 7));
        assert_ne!(w, init_weights(&arch, InitScheme::He, 8));
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let arch = Architecture::dense(&[6, 5, 10]).unwrap();
        let net = Network::with_weights(arch.clone(), vec![0.0; arch.param_count]).unwrap();
        let p = net.predict_proba(&random_vec(12, 3)).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn identity_dense_layer() {
        let arch = Architecture::new(Shape::flat(3), &[LayerKind::Dense { units: 3, activation: Activation::Identity }]).unwrap();
        let mut w = vec![0.0; arch.param_count];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let net = Network::with_weights(arch, w).unwrap();
        let x = vec![0.5, -2.0, 3.25, 1.0, 0.0, -1.0];
        assert_eq!(net.forward(&x).unwrap().logits(), &x[..]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let arch = Architecture::dense(&[8, 7, 10]).unwrap();
        let net = Network::new(arch, InitScheme::RandomNormal, 4);
        let p = net.predict_proba(&random_vec(8 * 5, 9)).unwrap();
        for row in p.chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let arch = Architecture::dense(&[4, 3, 2]).unwrap();
        let net = Network::new(arch, InitScheme::RandomNormal, 11);
        let x = random_vec(4, 12);
        let w = &net.weights;
        // layer 0: W (3×4) at 0..12, b at 12..15; layer 1: W (2×3) at 15..21, b at 21..23
        let mut h = [0.0; 3];
        for i in 0..3 {
            let mut s = w[12 + i];
            for j in 0..4 {
                s += w[i * 4 + j] * x[j];
            }
            h[i] = if s > 0.0 { s } else { 0.0 };
        }
        let mut out = [0.0; 2];
        for i in 0..2 {
            let mut s = w[21 + i];
            for j in 0..3 {
                s += w[15 + i * 3 + j] * h[j];
            }
            out[i] = s;
        }
        let got = net.forward(&x).unwrap();
        for (a, b) in got.logits().iter().zip(out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = vec![0.3; 10];
        assert!((cross_entropy(&uniform, &[4], 10).unwrap() - 10f64.ln()).abs() < 1e-12);
        let mut confident = vec![0.0; 10];
        confident[2] = 100.0;
        assert!(cross_entropy(&confident, &[2], 10).unwrap() < 1e-30);
        let logits = random_vec(30, 5);
        let labels = [1, 7, 9];
        let naive: f64 = logits
            .chunks(10)
            .zip(labels)
            .map(|(r, l)| -(r[l].exp() / r.iter().map(|v| v.exp()).sum::<f64>()).ln())
            .sum::<f64>()
            / 3.0;
        assert!((cross_entropy(&logits, &labels, 10).unwrap() - naive).abs() < 1e-9);
        assert!(cross_entropy(&logits, &[1, 2, 10], 10).is_err());
    }

    /// Central differences on `count` random coordinates; returns the worst relative error.
    pub(crate) fn gradient_check(net: &Network, x: &[f64], labels: &[usize], count: usize, seed: u64) -> f64 {
        let (_, grad) = net.loss_and_gradient(x, labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            let i = rng.random_range(0..net.weights.len());
            let mut p = net.clone();
            p.weights[i] += h;
            let lp = p.dataset_loss(&Dataset::new(x.to_vec(), labels.to_vec(), net.arch.input.len()).unwrap()).unwrap();
            p.weights[i] -= 2.0 * h;
            let lm = p.dataset_loss(&Dataset::new(x.to_vec(), labels.to_vec(), net.arch.input.len()).unwrap()).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn dense_gradient_check() {
        let arch = Architecture::dense(&[5, 6, 4, 3]).unwrap();
        let net = Network::new(arch, InitScheme::He, 2);
        let x = random_vec(5 * 4, 6);
        assert!(gradient_check(&net, &x, &[0, 2, 1, 2], 60, 1) < 1e-4);
    }

    #[test]
    fn conv_pool_gradient_check() {
        let arch = Architecture::new(
            Shape::new(2, 8, 8),
            &[
                LayerKind::Conv2d { filters: 3, kernel: 3, activation: Activation::Relu },
                LayerKind::MaxPool2x2,
                LayerKind::Dense { units: 4, activation: Activation::Identity },
                LayerKind::Softmax,
            ],
        )
        .unwrap();
        let net = Network::new(arch, InitScheme::He, 3);
        let x = random_vec(2 * 64 * 2, 8);
        assert!(gradient_check(&net, &x, &[3, 0], 60, 2) < 1e-4);
    }

    #[test]
    fn pool_ties_go_to_first_index() {
        let spec = LayerSpec { kind: LayerKind::MaxPool2x2, in_shape: Shape::new(1, 2, 2), out_shape: Shape::new(1, 1, 1) };
        let (y, idx) = pool_forward(&[1.0, 3.0, 3.0, 3.0], 1, &spec);
        assert_eq!((y[0], idx[0]), (3.0, 1));
    }

    #[test]
    fn saturated_separable_optimum_has_tiny_gradient() {
        // Two classes split by the sign of x0; logits ±100·x0.
        let arch = Architecture::new(
            Shape::flat(2),
            &[LayerKind::Dense { units: 2, activation: Activation::Identity }, LayerKind::Softmax],
        )
        .unwrap();
        let net = Network::with_weights(arch, vec![-100.0, 0.0, 100.0, 0.0, 0.0, 0.0]).unwrap();
        let x = vec![1.0, 0.3, 2.0, -0.5, -1.0, 0.2, -1.5, 0.9];
        let labels = [1, 1, 0, 0];
        let (_, g) = net.loss_and_gradient(&x, &labels).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6));
    }

    fn toy_data() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let label = i % 2;
            let sign = if label == 0 { -1.0 } else { 1.0 };
            inputs.push(sign * rng.random_range(0.5..1.5));
            inputs.push(rng.random_range(-1.0..1.0));
            labels.push(label);
        }
        Dataset::new(inputs, labels, 2).unwrap()
    }

    #[test]
    fn separable_toy_set_trains() {
        let arch = Architecture::dense(&[2, 8, 2]).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, epochs: 200, batch_size: 16, init_scheme: InitScheme::He, seed: 1, mask: None };
        let (_, log) = train(&arch, &toy_data(), None, &cfg).unwrap();
        assert_eq!(log.len(), 201);
        assert!(log.records.last().unwrap().train_loss < 0.05);
        assert!(log.records.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    }

    #[test]
    fn zero_epochs_and_zero_rate() {
        let arch = Architecture::dense(&[2, 4, 2]).unwrap();
        let mut cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (_, log) = train(&arch, &toy_data(), None, &cfg).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.records[0].epoch, 0);
        assert_eq!(log.records[0].weights, init_weights(&arch, cfg.init_scheme, cfg.seed));
        cfg.epochs = 5;
        cfg.learning_rate = 0.0;
        let (_, log) = train(&arch, &toy_data(), None, &cfg).unwrap();
        assert!(log.records.iter().all(|r| r.weights == log.records[0].weights));
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let arch = Architecture::dense(&[2, 4, 2]).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 6, batch_size: 7, seed: 3, ..TrainConfig::default() };
        let data = toy_data();
        let (_, a) = train(&arch, &data, Some(&data), &cfg).unwrap();
        let (_, b) = train(&arch, &data, Some(&data), &cfg).unwrap();
        assert_eq!(a, b);
        let (mut net, mut first) = train(&arch, &data, Some(&data), &TrainConfig { epochs: 2, ..cfg.clone() }).unwrap();
        let rest = train_from(&mut net, &data, Some(&data), &TrainConfig { epochs: 4, ..cfg.clone() }, 2).unwrap();
        first.extend_with(rest).unwrap();
        assert_eq!(first.records, a.records);
    }

    #[test]
    fn masked_weights_stay_zero_and_get_no_update() {
        let arch = Architecture::dense(&[2, 4, 2]).unwrap();
        let zeroed: Vec<bool> = (0..arch.param_count).map(|i| i % 3 == 0).collect();
        let mask = Mask { zeroed };
        let cfg = TrainConfig { learning_rate: 0.1, epochs: 5, batch_size: 8, mask: Some(mask.clone()), ..TrainConfig::default() };
        let (_, log) = train(&arch, &toy_data(), None, &cfg).unwrap();
        for r in &log.records {
            assert!(r.weights.iter().zip(&mask.zeroed).all(|(w, &z)| !z || *w == 0.0));
        }
    }

    #[test]
    fn snapshot_log_roundtrip() {
        let arch = Architecture::dense(&[2, 3, 2]).unwrap();
        let data = toy_data();
        let (_, log) = train(&arch, &data, Some(&data), &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        log.save(dir.path()).unwrap();
        let back = SnapshotLog::load(dir.path()).unwrap();
        assert_eq!(back, log);
        let csv = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
        assert!(csv.starts_with("epoch,train_loss,test_loss\n0,"));
    }
}
