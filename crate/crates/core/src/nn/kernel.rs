//! Forward and backward passes for a chunk of examples.
//!
//! Both convolutions are lowered to GEMMs through im2col over channel-last
//! images. Examples in a chunk are stacked along the row dimension, so one
//! GEMM serves the whole chunk; only the weight gradients differ between
//! the summed and the per-example modes.

use super::gemm::{gemm, MatRef};
use super::{Architecture, ModelParams};

pub(crate) struct Activations {
    pub(crate) nb: usize,
    cols1: Vec<f64>,
    z1: Vec<f64>,
    cols2: Vec<f64>,
    z2: Vec<f64>,
    /// Post-ReLU conv2 output; row `e` is example `e` flattened.
    a2: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

fn im2col(img: &[f64], w: usize, ch: usize, k: usize, dst: &mut [f64]) {
    let pad = (k / 2) as isize;
    let patch = k * k * ch;
    for y in 0..w {
        for x in 0..w {
            let row = &mut dst[(y * w + x) * patch..(y * w + x + 1) * patch];
            let mut o = 0;
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    let cell = &mut row[o..o + ch];
                    if iy >= 0 && ix >= 0 && (iy as usize) < w && (ix as usize) < w {
                        let at = (iy as usize * w + ix as usize) * ch;
                        cell.copy_from_slice(&img[at..at + ch]);
                    } else {
                        cell.fill(0.0);
                    }
                    o += ch;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the image.
fn col2im(cols: &[f64], w: usize, ch: usize, k: usize, img: &mut [f64]) {
    let pad = (k / 2) as isize;
    let patch = k * k * ch;
    img[..w * w * ch].fill(0.0);
    for y in 0..w {
        for x in 0..w {
            let row = &cols[(y * w + x) * patch..(y * w + x + 1) * patch];
            let mut o = 0;
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    if iy >= 0 && ix >= 0 && (iy as usize) < w && (ix as usize) < w {
                        let at = (iy as usize * w + ix as usize) * ch;
                        for (d, s) in img[at..at + ch].iter_mut().zip(&row[o..o + ch]) {
                            *d += s;
                        }
                    }
                    o += ch;
                }
            }
        }
    }
}

fn broadcast_rows(bias: &[f64], rows: usize, out: &mut [f64]) {
    for r in out[..rows * bias.len()].chunks_exact_mut(bias.len()) {
        r.copy_from_slice(bias);
    }
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out[..cols].fill(0.0);
    for r in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
}

pub(crate) fn forward(params: &ModelParams, xs: &[&[f64]]) -> Activations {
    let a = params.arch();
    let nb = xs.len();
    let p = a.positions();
    let (f1, f2, nc) = (a.filters1, a.filters2, a.classes);
    let (patch1, patch2) = (a.patch1(), a.patch2());

    let mut cols1 = vec![0.0; nb * p * patch1];
    for (e, x) in xs.iter().enumerate() {
        im2col(x, a.window, a.in_channels, a.kernel, &mut cols1[e * p * patch1..]);
    }
    let mut z1 = vec![0.0; nb * p * f1];
    broadcast_rows(params.conv1_b(), nb * p, &mut z1);
    gemm(
        MatRef::row_major(&cols1, nb * p, patch1),
        MatRef::row_major(params.conv1_w(), patch1, f1),
        1.0,
        &mut z1,
    );
    let a1 = relu(&z1);

    let mut cols2 = vec![0.0; nb * p * patch2];
    for e in 0..nb {
        im2col(
            &a1[e * p * f1..(e + 1) * p * f1],
            a.window,
            f1,
            a.kernel,
            &mut cols2[e * p * patch2..],
        );
    }
    let mut z2 = vec![0.0; nb * p * f2];
    broadcast_rows(params.conv2_b(), nb * p, &mut z2);
    gemm(
        MatRef::row_major(&cols2, nb * p, patch2),
        MatRef::row_major(params.conv2_w(), patch2, f2),
        1.0,
        &mut z2,
    );
    let a2 = relu(&z2);

    let mut logits = vec![0.0; nb * nc];
    broadcast_rows(params.dense_b(), nb, &mut logits);
    gemm(
        MatRef::row_major(&a2, nb, p * f2),
        MatRef::row_major(params.dense_w(), p * f2, nc),
        1.0,
        &mut logits,
    );

    Activations {
        nb,
        cols1,
        z1,
        cols2,
        z2,
        a2,
        logits,
    }
}

/// Stable log-softmax cross-entropy of one logit row; also writes
/// `softmax - onehot` into `dlogits`.
pub(crate) fn cross_entropy(logits: &[f64], label: usize, dlogits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    for (d, &z) in dlogits.iter_mut().zip(logits) {
        *d = (z - lse).exp();
    }
    dlogits[label] -= 1.0;
    lse - logits[label]
}

struct Deltas {
    dlogits: Vec<f64>,
    dz1: Vec<f64>,
    dz2: Vec<f64>,
}

/// Backpropagates the per-example loss gradients to the pre-activations.
fn deltas(params: &ModelParams, act: &Activations, labels: &[usize], losses: &mut [f64]) -> Deltas {
    let a = params.arch();
    let nb = act.nb;
    let p = a.positions();
    let (f1, f2, nc) = (a.filters1, a.filters2, a.classes);
    let patch2 = a.patch2();

    let mut dlogits = vec![0.0; nb * nc];
    for e in 0..nb {
        losses[e] = cross_entropy(
            &act.logits[e * nc..(e + 1) * nc],
            labels[e],
            &mut dlogits[e * nc..(e + 1) * nc],
        );
    }

    let mut dz2 = vec![0.0; nb * p * f2];
    gemm(
        MatRef::row_major(&dlogits, nb, nc),
        MatRef::row_major(params.dense_w(), p * f2, nc).t(),
        0.0,
        &mut dz2,
    );
    for (d, &z) in dz2.iter_mut().zip(&act.z2) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }

    let mut dcols2 = vec![0.0; nb * p * patch2];
    gemm(
        MatRef::row_major(&dz2, nb * p, f2),
        MatRef::row_major(params.conv2_w(), patch2, f2).t(),
        0.0,
        &mut dcols2,
    );
    let mut dz1 = vec![0.0; nb * p * f1];
    for e in 0..nb {
        col2im(
            &dcols2[e * p * patch2..(e + 1) * p * patch2],
            a.window,
            f1,
            a.kernel,
            &mut dz1[e * p * f1..(e + 1) * p * f1],
        );
    }
    for (d, &z) in dz1.iter_mut().zip(&act.z1) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
    Deltas { dlogits, dz1, dz2 }
}

/// Writes the weight gradients for rows `rows` of the chunk into `grad`
/// (overwriting it).
fn weight_grads(
    arch: &Architecture,
    act: &Activations,
    d: &Deltas,
    rows: std::ops::Range<usize>,
    grad: &mut [f64],
) {
    let p = arch.positions();
    let (f1, f2, nc) = (arch.filters1, arch.filters2, arch.classes);
    let (patch1, patch2) = (arch.patch1(), arch.patch2());
    let n = rows.len();
    let layout = arch.layout();

    let cols1 = &act.cols1[rows.start * p * patch1..rows.end * p * patch1];
    let dz1 = &d.dz1[rows.start * p * f1..rows.end * p * f1];
    gemm(
        MatRef::row_major(cols1, n * p, patch1).t(),
        MatRef::row_major(dz1, n * p, f1),
        0.0,
        &mut grad[layout.conv1_w.clone()],
    );
    column_sums(dz1, f1, &mut grad[layout.conv1_b.clone()]);

    let cols2 = &act.cols2[rows.start * p * patch2..rows.end * p * patch2];
    let dz2 = &d.dz2[rows.start * p * f2..rows.end * p * f2];
    gemm(
        MatRef::row_major(cols2, n * p, patch2).t(),
        MatRef::row_major(dz2, n * p, f2),
        0.0,
        &mut grad[layout.conv2_w.clone()],
    );
    column_sums(dz2, f2, &mut grad[layout.conv2_b.clone()]);

    let a2 = &act.a2[rows.start * p * f2..rows.end * p * f2];
    let dl = &d.dlogits[rows.start * nc..rows.end * nc];
    gemm(
        MatRef::row_major(a2, n, p * f2).t(),
        MatRef::row_major(dl, n, nc),
        0.0,
        &mut grad[layout.dense_w.clone()],
    );
    column_sums(dl, nc, &mut grad[layout.dense_b.clone()]);
}

/// Summed loss and summed gradient over the chunk.
pub(crate) fn grad_sum(params: &ModelParams, xs: &[&[f64]], labels: &[usize]) -> (f64, Vec<f64>) {
    let act = forward(params, xs);
    let mut losses = vec![0.0; xs.len()];
    let d = deltas(params, &act, labels, &mut losses);
    let mut grad = vec![0.0; params.arch().param_count()];
    weight_grads(params.arch(), &act, &d, 0..xs.len(), &mut grad);
    (losses.iter().sum(), grad)
}

/// Calls `sink(e, grad_e, loss_e)` with the exact gradient of each example's
/// own loss. The gradient buffer is reused between calls.
pub(crate) fn each_example<F>(params: &ModelParams, xs: &[&[f64]], labels: &[usize], mut sink: F)
where
    F: FnMut(usize, &[f64], f64),
{
    let act = forward(params, xs);
    let mut losses = vec![0.0; xs.len()];
    let d = deltas(params, &act, labels, &mut losses);
    let mut grad = vec![0.0; params.arch().param_count()];
    for e in 0..xs.len() {
        weight_grads(params.arch(), &act, &d, e..e + 1, &mut grad);
        sink(e, &grad, losses[e]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let (w, ch, k) = (4, 3, 3);
        let x: Vec<f64> = (0..w * w * ch).map(|i| (i as f64 * 0.7).sin()).collect();
        let n = w * w * k * k * ch;
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; n];
        im2col(&x, w, ch, k, &mut cols);
        let mut back = vec![0.0; w * w * ch];
        col2im(&c, w, ch, k, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_classes() {
        let mut d = [0.0; 8];
        let l = cross_entropy(&[0.3; 8], 2, &mut d);
        assert!((l - 8f64.ln()).abs() < 1e-15);
        assert!((d.iter().sum::<f64>()).abs() < 1e-15);
    }
}
