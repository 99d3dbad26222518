//! The baseline CNN: two same-padded 3×3 convolutions with ReLU, then one
//! dense layer to class logits. No pooling.
//!
//! Inputs are channel-last `W×W×C` images (the layout of
//! [`GafTensor`](crate::gaf::GafTensor)). All parameters live in one flat
//! vector; the per-layer accessors are slices into it.
//!
//! | block   | weight shape          | stored as                      |
//! |---------|-----------------------|--------------------------------|
//! | conv1   | 3×3×C → F1            | row `(ky·3+kx)·C + c`, col `f` |
//! | conv2   | 3×3×F1 → F2           | row `(ky·3+kx)·F1 + c`, col `f`|
//! | dense   | W·W·F2 → classes      | row `(y·W+x)·F2 + f`, col `k`  |

pub mod checkpoint;
mod gemm;
mod kernel;
pub mod train;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use train::{
    evaluate, predict, sgd_momentum_step, train_baseline, EpochStats, TrainConfig, TrainHistory,
};

/// Examples per forward/backward block. Fixed so that summation order, and
/// hence every bit of the result, does not depend on the thread count.
pub const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub window: usize,
    pub in_channels: usize,
    pub filters1: usize,
    pub filters2: usize,
    pub kernel: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            window: 10,
            in_channels: 4,
            filters1: 16,
            filters2: 32,
            kernel: 3,
            classes: crate::market::NUM_CLASSES,
        }
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub dense_w: Range<usize>,
    pub dense_b: Range<usize>,
}

impl Architecture {
    pub fn with_window(window: usize) -> Self {
        Architecture {
            window,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0
            || self.in_channels == 0
            || self.filters1 == 0
            || self.filters2 == 0
            || self.classes < 2
        {
            return Err(Error::ConfigInvalid(format!(
                "architecture dimensions must be positive: {self:?}"
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::ConfigInvalid(format!(
                "same padding needs an odd kernel, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.window * self.window
    }

    pub fn input_len(&self) -> usize {
        self.positions() * self.in_channels
    }

    pub(crate) fn patch1(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub(crate) fn patch2(&self) -> usize {
        self.kernel * self.kernel * self.filters1
    }

    pub fn layout(&self) -> ParamLayout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        ParamLayout {
            conv1_w: take(self.patch1() * self.filters1),
            conv1_b: take(self.filters1),
            conv2_w: take(self.patch2() * self.filters2),
            conv2_b: take(self.filters2),
            dense_w: take(self.positions() * self.filters2 * self.classes),
            dense_b: take(self.classes),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().dense_b.end
    }

    /// Fan-in of each weight block, used to scale the initialization.
    pub fn fan_ins(&self) -> [usize; 3] {
        [self.patch1(), self.patch2(), self.positions() * self.filters2]
    }
}

/// Model parameters θ: one flat vector with structured per-block views.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        ModelParams {
            arch,
            theta: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_flat(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::LengthMismatch {
                expected: arch.param_count(),
                actual: theta.len(),
            });
        }
        Ok(ModelParams { arch, theta })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.theta
    }

    pub fn conv1_w(&self) -> &[f64] {
        &self.theta[self.arch.layout().conv1_w]
    }

    pub fn conv1_b(&self) -> &[f64] {
        &self.theta[self.arch.layout().conv1_b]
    }

    pub fn conv2_w(&self) -> &[f64] {
        &self.theta[self.arch.layout().conv2_w]
    }

    pub fn conv2_b(&self) -> &[f64] {
        &self.theta[self.arch.layout().conv2_b]
    }

    pub fn dense_w(&self) -> &[f64] {
        &self.theta[self.arch.layout().dense_w]
    }

    pub fn dense_b(&self) -> &[f64] {
        &self.theta[self.arch.layout().dense_b]
    }

    /// Mutable view of one block, by layout range.
    pub fn block_mut(&mut self, range: Range<usize>) -> &mut [f64] {
        &mut self.theta[range]
    }
}

/// Uniform(−a, a) weights with a = sqrt(6 / fan_in); zero biases.
pub fn init_params(arch: Architecture, seed: u64) -> ModelParams {
    let mut rng = rng::stream(seed, "init", 0);
    let mut p = ModelParams::zeros(arch);
    let layout = arch.layout();
    let blocks = [layout.conv1_w, layout.conv2_w, layout.dense_w];
    for (range, fan_in) in blocks.into_iter().zip(arch.fan_ins()) {
        let a = (6.0 / fan_in as f64).sqrt();
        for w in &mut p.theta[range] {
            *w = rng::uniform(&mut rng, -a, a);
        }
    }
    p
}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} values for shape {shape:?}"),
                actual: format!("{} values", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite tensor value at {i}")));
        }
        Ok(Tensor { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Row `i` along the leading dimension.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.values.len() / self.shape[0].max(1);
        &self.values[i * w..(i + 1) * w]
    }
}

/// Activations kept from a forward pass so the same batch can be
/// backpropagated without recomputation.
pub struct ForwardTrace {
    acts: Vec<kernel::Activations>,
}

impl ForwardTrace {
    pub fn batch_len(&self) -> usize {
        self.acts.iter().map(|a| a.nb).sum()
    }
}

/// One gradient vector per example, plus that example's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PerExampleGrads {
    pub grads: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
}

fn check_input(arch: &Architecture, input: &Tensor) -> Result<usize> {
    let want = [arch.window, arch.window, arch.in_channels];
    let s = input.shape();
    if s.len() != 4 || s[1..] != want {
        return Err(Error::ShapeMismatch {
            expected: format!("(B, {}, {}, {})", want[0], want[1], want[2]),
            actual: format!("{s:?}"),
        });
    }
    Ok(s[0])
}

fn check_labels(classes: usize, n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} labels"),
            actual: format!("{} labels", labels.len()),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Domain(format!("label {l} out of range for {classes} classes")));
    }
    Ok(())
}

fn rows<'a>(input: &'a Tensor, n: usize) -> Vec<&'a [f64]> {
    (0..n).map(|i| input.row(i)).collect()
}

/// Logits `(B, classes)` for a `(B, W, W, C)` batch.
pub fn forward(params: &ModelParams, input: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    let n = check_input(params.arch(), input)?;
    let xs = rows(input, n);
    let acts: Vec<_> = xs.chunks(CHUNK).map(|c| kernel::forward(params, c)).collect();
    let logits = acts.iter().flat_map(|a| a.logits.iter().copied()).collect();
    Ok((
        Tensor {
            shape: vec![n, params.arch().classes],
            values: logits,
        },
        ForwardTrace { acts },
    ))
}

/// Logits for raw example slices, evaluated chunk-wise under `exec`.
pub fn logits_of(params: &ModelParams, xs: &[&[f64]], exec: Exec) -> Vec<f64> {
    exec.map_chunks(xs, CHUNK, |c| kernel::forward(params, c).logits)
        .into_iter()
        .flatten()
        .collect()
}

/// Softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean softmax cross-entropy over a `(B, classes)` logit tensor.
pub fn loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 2 || s[0] == 0 {
        return Err(Error::ShapeMismatch {
            expected: "(B, classes) with B ≥ 1".into(),
            actual: format!("{s:?}"),
        });
    }
    check_labels(s[1], s[0], labels)?;
    let mut scratch = vec![0.0; s[1]];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| kernel::cross_entropy(logits.row(i), l, &mut scratch))
        .sum();
    Ok(total / s[0] as f64)
}

/// Exact per-example gradients of each example's own cross-entropy loss.
pub fn backward_per_example(
    params: &ModelParams,
    input: &Tensor,
    labels: &[usize],
) -> Result<PerExampleGrads> {
    let n = check_input(params.arch(), input)?;
    check_labels(params.arch().classes, n, labels)?;
    let xs = rows(input, n);
    let mut grads = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    for (c, l) in xs.chunks(CHUNK).zip(labels.chunks(CHUNK)) {
        kernel::each_example(params, c, l, |_, g, loss| {
            grads.push(g.to_vec());
            losses.push(loss);
        });
    }
    Ok(PerExampleGrads { grads, losses })
}

/// Mean loss and gradient of the mean loss, backpropagated a whole chunk at
/// a time (independent of the per-example path).
pub fn batch_gradient(
    params: &ModelParams,
    xs: &[&[f64]],
    labels: &[usize],
    exec: Exec,
) -> (f64, Vec<f64>) {
    let (loss, mut grad) = batch_gradient_sum(params, xs, labels, exec);
    let n = xs.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Summed loss and summed gradient over a batch.
pub fn batch_gradient_sum(
    params: &ModelParams,
    xs: &[&[f64]],
    labels: &[usize],
    exec: Exec,
) -> (f64, Vec<f64>) {
    assert_eq!(xs.len(), labels.len(), "one label per example");
    let idx: Vec<usize> = (0..xs.len()).collect();
    let parts = exec.map_chunks(&idx, CHUNK, |c| {
        let lo = c[0];
        let hi = lo + c.len();
        kernel::grad_sum(params, &xs[lo..hi], &labels[lo..hi])
    });
    reduce(params.len(), parts)
}

/// Sum over examples of `transform(grad_i)`, where `transform` may rescale
/// each per-example gradient in place (e.g. clipping) before it is added.
/// Also returns the summed loss. Chunks run under `exec` and are reduced in
/// order, so the result is identical for any thread count.
pub fn per_example_sum<F>(
    params: &ModelParams,
    xs: &[&[f64]],
    labels: &[usize],
    exec: Exec,
    transform: F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut [f64]) -> Result<()> + Sync,
{
    assert_eq!(xs.len(), labels.len(), "one label per example");
    let idx: Vec<usize> = (0..xs.len()).collect();
    let parts = exec.map_chunks(&idx, CHUNK, |c| -> Result<(f64, Vec<f64>)> {
        let lo = c[0];
        let hi = lo + c.len();
        let mut sum = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut scratch = vec![0.0; params.len()];
        let mut err = None;
        kernel::each_example(params, &xs[lo..hi], &labels[lo..hi], |_, g, l| {
            if err.is_some() {
                return;
            }
            scratch.copy_from_slice(g);
            if let Err(e) = transform(&mut scratch) {
                err = Some(e);
                return;
            }
            for (s, v) in sum.iter_mut().zip(&scratch) {
                *s += v;
            }
            loss += l;
        });
        match err {
            Some(e) => Err(e),
            None => Ok((loss, sum)),
        }
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(reduce(params.len(), parts))
}

fn reduce(len: usize, parts: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; len];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (loss, grad)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
