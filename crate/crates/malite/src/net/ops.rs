//! Forward and backward kernels.
//!
//! All convolutions use "same" padding: the output side is `ceil(in/s)`
//! and the input is physically zero-padded before the dense loop. Padding
//! first keeps the inner loops branch-free and makes the executed
//! multiply count exactly `h_out * w_out * k^2 * cin * cout`, matching the
//! analytic cost model multiply for multiply.

use super::tensor::{Tally, Tensor};

/// Output extent and leading pad for same-padding at stride `s`.
pub fn same_pad(extent: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = extent.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(extent);
    (out, total / 2)
}

/// Zero-pad the spatial dims so a `kernel`/`stride` sweep stays in bounds.
pub fn pad_spatial(x: &Tensor, kernel: usize, stride: usize) -> (Tensor, usize, usize) {
    let (n, h, w, c) = (x.n(), x.h(), x.w(), x.c());
    let (oh, pad_top) = same_pad(h, kernel, stride);
    let (ow, pad_left) = same_pad(w, kernel, stride);
    let ph = (oh - 1) * stride + kernel;
    let pw = (ow - 1) * stride + kernel;
    let mut out = Tensor::zeros([n, ph, pw, c]);
    for ni in 0..n {
        for y in 0..h {
            let src = ((ni * h + y) * w) * c;
            let dst = ((ni * ph + y + pad_top) * pw + pad_left) * c;
            out.data[dst..dst + w * c].copy_from_slice(&x.data[src..src + w * c]);
        }
    }
    (out, oh, ow)
}

/// Drop the padding applied by [`pad_spatial`], returning an (n,h,w,c) view.
pub fn crop_spatial(
    padded: &Tensor,
    h: usize,
    w: usize,
    pad_top: usize,
    pad_left: usize,
) -> Tensor {
    let (n, ph, pw, c) = (padded.n(), padded.h(), padded.w(), padded.c());
    let _ = ph;
    let mut out = Tensor::zeros([n, h, w, c]);
    for ni in 0..n {
        for y in 0..h {
            let src = ((ni * padded.h() + y + pad_top) * pw + pad_left) * c;
            let dst = ((ni * h + y) * w) * c;
            out.data[dst..dst + w * c].copy_from_slice(&padded.data[src..src + w * c]);
        }
    }
    out
}

/// Full convolution, weights laid out `[ky][kx][cin][cout]`. Returns the
/// output and the padded input (cached by layers for the backward pass).
pub fn conv2d_forward<T: Tally>(
    x: &Tensor,
    weight: &[f32],
    kernel: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    tally: &mut T,
) -> (Tensor, Tensor) {
    assert_eq!(x.c(), cin, "conv input channels");
    let (xp, oh, ow) = pad_spatial(x, kernel, stride);
    let (n, pw) = (xp.n(), xp.w());
    let mut out = Tensor::zeros([n, oh, ow, cout]);
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_at = ((ni * oh + oy) * ow + ox) * cout;
                let acc = &mut out.data[out_at..out_at + cout];
                for ky in 0..kernel {
                    let iy = oy * stride + ky;
                    for kx in 0..kernel {
                        let ix = ox * stride + kx;
                        let in_at = ((ni * xp.h() + iy) * pw + ix) * cin;
                        let w_at = ((ky * kernel + kx) * cin) * cout;
                        for ci in 0..cin {
                            let a = xp.data[in_at + ci];
                            let wrow = &weight[w_at + ci * cout..w_at + (ci + 1) * cout];
                            for (o, &wv) in acc.iter_mut().zip(wrow) {
                                *o += a * wv;
                                tally.add(1);
                            }
                        }
                    }
                }
            }
        }
    }
    out.debug_assert_finite("conv2d");
    (out, xp)
}

/// Gradients for [`conv2d_forward`] given the cached padded input.
/// Returns (grad wrt unpadded input, grad wrt weights).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x_shape: [usize; 4],
    xp: &Tensor,
    weight: &[f32],
    kernel: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    grad_out: &Tensor,
) -> (Tensor, Vec<f32>) {
    let (n, oh, ow) = (grad_out.n(), grad_out.h(), grad_out.w());
    let pw = xp.w();
    let mut grad_xp = Tensor::zeros(xp.shape);
    let mut grad_w = vec![0.0f32; weight.len()];
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let go_at = ((ni * oh + oy) * ow + ox) * cout;
                let go = &grad_out.data[go_at..go_at + cout];
                for ky in 0..kernel {
                    let iy = oy * stride + ky;
                    for kx in 0..kernel {
                        let ix = ox * stride + kx;
                        let in_at = ((ni * xp.h() + iy) * pw + ix) * cin;
                        let w_at = ((ky * kernel + kx) * cin) * cout;
                        for ci in 0..cin {
                            let a = xp.data[in_at + ci];
                            let mut dx = 0.0f32;
                            let wrow = &weight[w_at + ci * cout..w_at + (ci + 1) * cout];
                            let gw = &mut grad_w[w_at + ci * cout..w_at + (ci + 1) * cout];
                            for ((&g, &wv), gwv) in go.iter().zip(wrow).zip(gw) {
                                dx += g * wv;
                                *gwv += a * g;
                            }
                            grad_xp.data[in_at + ci] += dx;
                        }
                    }
                }
            }
        }
    }
    let (_, pad_top) = same_pad(x_shape[1], kernel, stride);
    let (_, pad_left) = same_pad(x_shape[2], kernel, stride);
    let grad_x = crop_spatial(&grad_xp, x_shape[1], x_shape[2], pad_top, pad_left);
    (grad_x, grad_w)
}

/// Per-channel spatial convolution, weights `[ky][kx][c]`.
pub fn depthwise_forward<T: Tally>(
    x: &Tensor,
    weight: &[f32],
    kernel: usize,
    stride: usize,
    tally: &mut T,
) -> (Tensor, Tensor) {
    let ch = x.c();
    let (xp, oh, ow) = pad_spatial(x, kernel, stride);
    let (n, pw) = (xp.n(), xp.w());
    let mut out = Tensor::zeros([n, oh, ow, ch]);
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_at = ((ni * oh + oy) * ow + ox) * ch;
                let acc = &mut out.data[out_at..out_at + ch];
                for ky in 0..kernel {
                    let iy = oy * stride + ky;
                    for kx in 0..kernel {
                        let ix = ox * stride + kx;
                        let in_at = ((ni * xp.h() + iy) * pw + ix) * ch;
                        let w_at = (ky * kernel + kx) * ch;
                        for c in 0..ch {
                            acc[c] += xp.data[in_at + c] * weight[w_at + c];
                            tally.add(1);
                        }
                    }
                }
            }
        }
    }
    out.debug_assert_finite("depthwise_conv");
    (out, xp)
}

pub fn depthwise_backward(
    x_shape: [usize; 4],
    xp: &Tensor,
    weight: &[f32],
    kernel: usize,
    stride: usize,
    grad_out: &Tensor,
) -> (Tensor, Vec<f32>) {
    let ch = xp.c();
    let (n, oh, ow) = (grad_out.n(), grad_out.h(), grad_out.w());
    let pw = xp.w();
    let mut grad_xp = Tensor::zeros(xp.shape);
    let mut grad_w = vec![0.0f32; weight.len()];
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let go_at = ((ni * oh + oy) * ow + ox) * ch;
                for ky in 0..kernel {
                    let iy = oy * stride + ky;
                    for kx in 0..kernel {
                        let ix = ox * stride + kx;
                        let in_at = ((ni * xp.h() + iy) * pw + ix) * ch;
                        let w_at = (ky * kernel + kx) * ch;
                        for c in 0..ch {
                            let g = grad_out.data[go_at + c];
                            grad_xp.data[in_at + c] += g * weight[w_at + c];
                            grad_w[w_at + c] += g * xp.data[in_at + c];
                        }
                    }
                }
            }
        }
    }
    let (_, pad_top) = same_pad(x_shape[1], kernel, stride);
    let (_, pad_left) = same_pad(x_shape[2], kernel, stride);
    let grad_x = crop_spatial(&grad_xp, x_shape[1], x_shape[2], pad_top, pad_left);
    (grad_x, grad_w)
}

/// Saved activations batch-norm needs for its backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub x_hat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Train-mode batch norm: normalize by the biased batch statistics and
/// blend them into the running estimates with `momentum`.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
    momentum: f32,
    eps: f32,
) -> (Tensor, BnCache) {
    let ch = x.c();
    let m = (x.data.len() / ch) as f64;
    let mut mean = vec![0.0f64; ch];
    let mut var = vec![0.0f64; ch];
    for (i, &v) in x.data.iter().enumerate() {
        mean[i % ch] += v as f64;
    }
    for mu in &mut mean {
        *mu /= m;
    }
    for (i, &v) in x.data.iter().enumerate() {
        let d = v as f64 - mean[i % ch];
        var[i % ch] += d * d;
    }
    for vr in &mut var {
        *vr /= m;
    }
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / (v + eps as f64).sqrt()) as f32)
        .collect();
    let mut out = Tensor::zeros(x.shape);
    let mut x_hat = vec![0.0f32; x.data.len()];
    for (i, &v) in x.data.iter().enumerate() {
        let c = i % ch;
        let xh = (v - mean[c] as f32) * inv_std[c];
        x_hat[i] = xh;
        out.data[i] = gamma[c] * xh + beta[c];
    }
    for c in 0..ch {
        running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c] as f32;
        running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] as f32;
    }
    out.debug_assert_finite("batch_norm(train)");
    (out, BnCache { x_hat, inv_std })
}

/// Inference-mode batch norm over the running statistics.
pub fn batch_norm_infer(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    eps: f32,
) -> Tensor {
    let ch = x.c();
    let scale: Vec<f32> = (0..ch)
        .map(|c| gamma[c] / (running_var[c] + eps).sqrt())
        .collect();
    let mut out = Tensor::zeros(x.shape);
    for (i, &v) in x.data.iter().enumerate() {
        let c = i % ch;
        out.data[i] = (v - running_mean[c]) * scale[c] + beta[c];
    }
    out.debug_assert_finite("batch_norm(infer)");
    out
}

/// Gradients through train-mode batch norm.
/// Returns (grad_x, grad_gamma, grad_beta).
pub fn batch_norm_backward(
    cache: &BnCache,
    gamma: &[f32],
    grad_out: &Tensor,
) -> (Tensor, Vec<f32>, Vec<f32>) {
    let ch = grad_out.c();
    let m = (grad_out.data.len() / ch) as f64;
    let mut grad_gamma = vec![0.0f64; ch];
    let mut grad_beta = vec![0.0f64; ch];
    for (i, &g) in grad_out.data.iter().enumerate() {
        let c = i % ch;
        grad_gamma[c] += g as f64 * cache.x_hat[i] as f64;
        grad_beta[c] += g as f64;
    }
    let mut grad_x = Tensor::zeros(grad_out.shape);
    for (i, &g) in grad_out.data.iter().enumerate() {
        let c = i % ch;
        let term = g as f64 - grad_beta[c] / m - cache.x_hat[i] as f64 * grad_gamma[c] / m;
        grad_x.data[i] = (gamma[c] as f64 * cache.inv_std[c] as f64 * term) as f32;
    }
    (
        grad_x,
        grad_gamma.iter().map(|&v| v as f32).collect(),
        grad_beta.iter().map(|&v| v as f32).collect(),
    )
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// `mask` is the forward output: positive entries pass gradient through.
pub fn relu_backward(mask: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = Tensor::zeros(grad_out.shape);
    for i in 0..grad.data.len() {
        if mask.data[i] > 0.0 {
            grad.data[i] = grad_out.data[i];
        }
    }
    grad
}

/// Global average pool to (n, 1, 1, c).
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, h, w, c) = (x.n(), x.h(), x.w(), x.c());
    let area = (h * w) as f32;
    let mut out = Tensor::zeros([n, 1, 1, c]);
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let at = ((ni * h + y) * w + xx) * c;
                for ci in 0..c {
                    out.data[ni * c + ci] += x.data[at + ci];
                }
            }
        }
    }
    for v in &mut out.data {
        *v /= area;
    }
    out
}

pub fn global_avg_pool_backward(x_shape: [usize; 4], grad_out: &Tensor) -> Tensor {
    let (n, h, w, c) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let inv_area = 1.0 / (h * w) as f32;
    let mut grad = Tensor::zeros(x_shape);
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let at = ((ni * h + y) * w + xx) * c;
                for ci in 0..c {
                    grad.data[at + ci] = grad_out.data[ni * c + ci] * inv_area;
                }
            }
        }
    }
    grad
}

/// Fully connected layer on (n, 1, 1, in): `y = x W + b`, weights `[in][out]`.
pub fn dense_forward<T: Tally>(
    x: &Tensor,
    weight: &[f32],
    bias: &[f32],
    in_dim: usize,
    out_dim: usize,
    tally: &mut T,
) -> Tensor {
    let n = x.n();
    let mut out = Tensor::zeros([n, 1, 1, out_dim]);
    for ni in 0..n {
        let row = &x.data[ni * in_dim..(ni + 1) * in_dim];
        let acc = &mut out.data[ni * out_dim..(ni + 1) * out_dim];
        acc.copy_from_slice(bias);
        for (i, &xi) in row.iter().enumerate() {
            let wrow = &weight[i * out_dim..(i + 1) * out_dim];
            for (o, &wv) in acc.iter_mut().zip(wrow) {
                *o += xi * wv;
                tally.add(1);
            }
        }
    }
    out.debug_assert_finite("dense");
    out
}

/// Returns (grad_x, grad_w, grad_b).
pub fn dense_backward(
    x: &Tensor,
    weight: &[f32],
    in_dim: usize,
    out_dim: usize,
    grad_out: &Tensor,
) -> (Tensor, Vec<f32>, Vec<f32>) {
    let n = x.n();
    let mut grad_x = Tensor::zeros(x.shape);
    let mut grad_w = vec![0.0f32; weight.len()];
    let mut grad_b = vec![0.0f32; out_dim];
    for ni in 0..n {
        let row = &x.data[ni * in_dim..(ni + 1) * in_dim];
        let go = &grad_out.data[ni * out_dim..(ni + 1) * out_dim];
        for (o, &g) in go.iter().enumerate() {
            grad_b[o] += g;
        }
        for (i, &xi) in row.iter().enumerate() {
            let wrow = &weight[i * out_dim..(i + 1) * out_dim];
            let gwrow = &mut grad_w[i * out_dim..(i + 1) * out_dim];
            let mut dx = 0.0f32;
            for ((&g, &wv), gw) in go.iter().zip(wrow).zip(gwrow.iter_mut()) {
                dx += g * wv;
                *gw += xi * g;
            }
            grad_x.data[ni * in_dim + i] += dx;
        }
    }
    (grad_x, grad_w, grad_b)
}

/// Row-wise stable softmax over (n, 1, 1, k) logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.c();
    let mut out = Tensor::zeros(logits.shape);
    for (row_in, row_out) in logits.data.chunks(k).zip(out.data.chunks_mut(k)) {
        let max = row_in.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in row_out.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Mean categorical cross-entropy straight from logits.
/// Returns (loss, grad wrt logits).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let (n, k) = (logits.n(), logits.c());
    assert_eq!(labels.len(), n, "one label per row");
    let probs = softmax(logits);
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(logits.shape);
    for (ni, (row, &label)) in probs.data.chunks(k).zip(labels).enumerate() {
        loss -= (row[label].max(f32::MIN_POSITIVE) as f64).ln();
        for (c, &p) in row.iter().enumerate() {
            let y = if c == label { 1.0 } else { 0.0 };
            grad.data[ni * k + c] = (p - y) / n as f32;
        }
    }
    (loss / n as f64, grad)
}
