//! Double-precision reference forwards for gradient checking.
//!
//! Written independently of the production kernels: no pre-padding, plain
//! bounds checks treat out-of-range taps as zero. Finite differences on
//! these stay accurate to ~1e-10, so a checker comparing them against the
//! analytic f32 gradients isolates real backward-pass bugs from float
//! noise.

fn same_pad(extent: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = extent.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(extent);
    (out, total / 2)
}

pub fn conv2d(
    x: &[f64],
    shape: [usize; 4],
    w: &[f64],
    kernel: usize,
    cout: usize,
    stride: usize,
) -> Vec<f64> {
    let [n, h, wd, cin] = shape;
    let (oh, pad_top) = same_pad(h, kernel, stride);
    let (ow, pad_left) = same_pad(wd, kernel, stride);
    let mut out = vec![0.0; n * oh * ow * cout];
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = (oy * stride + ky) as isize - pad_top as isize;
                            let ix = (ox * stride + kx) as isize - pad_left as isize;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[((ni * h + iy as usize) * wd + ix as usize) * cin + ci];
                                let wv = w[((ky * kernel + kx) * cin + ci) * cout + co];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise(
    x: &[f64],
    shape: [usize; 4],
    w: &[f64],
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let [n, h, wd, ch] = shape;
    let (oh, pad_top) = same_pad(h, kernel, stride);
    let (ow, pad_left) = same_pad(wd, kernel, stride);
    let mut out = vec![0.0; n * oh * ow * ch];
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = (oy * stride + ky) as isize - pad_top as isize;
                            let ix = (ox * stride + kx) as isize - pad_left as isize;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += x[((ni * h + iy as usize) * wd + ix as usize) * ch + c]
                                * w[(ky * kernel + kx) * ch + c];
                        }
                    }
                    out[((ni * oh + oy) * ow + ox) * ch + c] = acc;
                }
            }
        }
    }
    out
}

pub fn batch_norm_train(x: &[f64], ch: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let m = (x.len() / ch) as f64;
    let mut mean = vec![0.0; ch];
    for (i, &v) in x.iter().enumerate() {
        mean[i % ch] += v / m;
    }
    let mut var = vec![0.0; ch];
    for (i, &v) in x.iter().enumerate() {
        var[i % ch] += (v - mean[i % ch]).powi(2) / m;
    }
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % ch;
            gamma[c] * (v - mean[c]) / (var[c] + eps).sqrt() + beta[c]
        })
        .collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn dense(x: &[f64], n: usize, in_dim: usize, w: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * out_dim];
    for ni in 0..n {
        for o in 0..out_dim {
            let mut acc = b[o];
            for i in 0..in_dim {
                acc += x[ni * in_dim + i] * w[i * out_dim + o];
            }
            out[ni * out_dim + o] = acc;
        }
    }
    out
}

pub fn softmax_ce(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let n = logits.len() / k;
    let mut loss = 0.0;
    for (row, &label) in logits.chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    loss / n as f64
}
