//! Forward and backward kernels on flat row-major buffers.
//!
//! No autodiff bookkeeping lives here; the tape in [`super::tape`] wires
//! these kernels together.

use crate::error::{Error, Result};

/// Dimensions of a `[batch, channels, height, width]` buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the loop vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out[b, i] = sum_j weight[i, j] * input[b, j] + bias[i]`.
pub fn linear_forward(
    input: &[f64],
    batch: usize,
    n_in: usize,
    weight: &[f64],
    bias: &[f64],
    n_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * n_out];
    for b in 0..batch {
        let x = &input[b * n_in..(b + 1) * n_in];
        for i in 0..n_out {
            out[b * n_out + i] = dot(&weight[i * n_in..(i + 1) * n_in], x) + bias[i];
        }
    }
    out
}

/// Gradients of [`linear_forward`]: `(d_input, d_weight, d_bias)`.
pub fn linear_backward(
    grad_out: &[f64],
    input: &[f64],
    batch: usize,
    n_in: usize,
    weight: &[f64],
    n_out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d_in = vec![0.0; batch * n_in];
    let mut d_w = vec![0.0; n_out * n_in];
    let mut d_b = vec![0.0; n_out];
    for b in 0..batch {
        let x = &input[b * n_in..(b + 1) * n_in];
        let dx = &mut d_in[b * n_in..(b + 1) * n_in];
        for i in 0..n_out {
            let g = grad_out[b * n_out + i];
            if g == 0.0 {
                continue;
            }
            axpy(dx, g, &weight[i * n_in..(i + 1) * n_in]);
            axpy(&mut d_w[i * n_in..(i + 1) * n_in], g, x);
            d_b[i] += g;
        }
    }
    (d_in, d_w, d_b)
}

/// Output dimensions of a valid-padding, stride-1 convolution.
pub fn conv2d_out_dims(input: Dims4, c_out: usize, k_rows: usize, k_cols: usize) -> Result<Dims4> {
    if k_rows == 0 || k_cols == 0 || k_rows > input.h || k_cols > input.w {
        return Err(Error::shape(format!(
            "kernel {k_rows}x{k_cols} does not fit input {}x{}",
            input.h, input.w
        )));
    }
    Ok(Dims4::new(input.n, c_out, input.h - k_rows + 1, input.w - k_cols + 1))
}

/// Valid 2D cross-correlation summed over input channels plus a per-output-channel bias.
///
/// `kernels` is `[c_out, c_in, k_rows, k_cols]`.
pub fn conv2d_forward(
    input: &[f64],
    dims: Dims4,
    kernels: &[f64],
    bias: &[f64],
    c_out: usize,
    k_rows: usize,
    k_cols: usize,
) -> Result<(Vec<f64>, Dims4)> {
    let od = conv2d_out_dims(dims, c_out, k_rows, k_cols)?;
    let mut out = vec![0.0; od.len()];
    let k_chan = k_rows * k_cols;
    for b in 0..dims.n {
        for co in 0..c_out {
            let o_base = (b * c_out + co) * od.plane();
            out[o_base..o_base + od.plane()].fill(bias[co]);
            for ci in 0..dims.c {
                let i_base = (b * dims.c + ci) * dims.plane();
                let k_base = (co * dims.c + ci) * k_chan;
                for a in 0..k_rows {
                    for bb in 0..k_cols {
                        let wv = kernels[k_base + a * k_cols + bb];
                        for i in 0..od.h {
                            let src = i_base + (i + a) * dims.w + bb;
                            let dst = o_base + i * od.w;
                            axpy(&mut out[dst..dst + od.w], wv, &input[src..src + od.w]);
                        }
                    }
                }
            }
        }
    }
    Ok((out, od))
}

/// Gradients of [`conv2d_forward`]: `(d_input, d_kernels, d_bias)`.
pub fn conv2d_backward(
    grad_out: &[f64],
    input: &[f64],
    dims: Dims4,
    kernels: &[f64],
    c_out: usize,
    k_rows: usize,
    k_cols: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let od = Dims4::new(dims.n, c_out, dims.h - k_rows + 1, dims.w - k_cols + 1);
    let k_chan = k_rows * k_cols;
    let mut d_in = vec![0.0; dims.len()];
    let mut d_k = vec![0.0; kernels.len()];
    let mut d_b = vec![0.0; c_out];
    for b in 0..dims.n {
        for co in 0..c_out {
            let o_base = (b * c_out + co) * od.plane();
            let g_plane = &grad_out[o_base..o_base + od.plane()];
            d_b[co] += g_plane.iter().sum::<f64>();
            for ci in 0..dims.c {
                let i_base = (b * dims.c + ci) * dims.plane();
                let k_base = (co * dims.c + ci) * k_chan;
                for a in 0..k_rows {
                    for bb in 0..k_cols {
                        let kidx = k_base + a * k_cols + bb;
                        let wv = kernels[kidx];
                        let mut acc = 0.0;
                        for i in 0..od.h {
                            let src = i_base + (i + a) * dims.w + bb;
                            let g_row = &g_plane[i * od.w..(i + 1) * od.w];
                            acc += dot(g_row, &input[src..src + od.w]);
                            axpy(&mut d_in[src..src + od.w], wv, g_row);
                        }
                        d_k[kidx] += acc;
                    }
                }
            }
        }
    }
    (d_in, d_k, d_b)
}

/// Output dimensions of non-overlapping average pooling; trailing remainders are dropped.
pub fn avg_pool_out_dims(input: Dims4, rows: usize, cols: usize) -> Result<Dims4> {
    if rows == 0 || cols == 0 || rows > input.h || cols > input.w {
        return Err(Error::shape(format!(
            "pool {rows}x{cols} does not fit input {}x{}",
            input.h, input.w
        )));
    }
    Ok(Dims4::new(input.n, input.c, input.h / rows, input.w / cols))
}

pub fn avg_pool_forward(input: &[f64], dims: Dims4, rows: usize, cols: usize) -> Result<(Vec<f64>, Dims4)> {
    let od = avg_pool_out_dims(dims, rows, cols)?;
    let scale = 1.0 / (rows * cols) as f64;
    let mut out = vec![0.0; od.len()];
    for nc in 0..dims.n * dims.c {
        let src = &input[nc * dims.plane()..(nc + 1) * dims.plane()];
        let dst = &mut out[nc * od.plane()..(nc + 1) * od.plane()];
        for oi in 0..od.h {
            for oj in 0..od.w {
                let mut s = 0.0;
                for r in 0..rows {
                    let row = (oi * rows + r) * dims.w + oj * cols;
                    s += src[row..row + cols].iter().sum::<f64>();
                }
                dst[oi * od.w + oj] = s * scale;
            }
        }
    }
    Ok((out, od))
}

pub fn avg_pool_backward(grad_out: &[f64], dims: Dims4, rows: usize, cols: usize) -> Vec<f64> {
    let od = Dims4::new(dims.n, dims.c, dims.h / rows, dims.w / cols);
    let scale = 1.0 / (rows * cols) as f64;
    let mut d_in = vec![0.0; dims.len()];
    for nc in 0..dims.n * dims.c {
        let g = &grad_out[nc * od.plane()..(nc + 1) * od.plane()];
        let dst = &mut d_in[nc * dims.plane()..(nc + 1) * dims.plane()];
        for oi in 0..od.h {
            for oj in 0..od.w {
                let gv = g[oi * od.w + oj] * scale;
                for r in 0..rows {
                    let row = (oi * rows + r) * dims.w + oj * cols;
                    dst[row..row + cols].iter_mut().for_each(|d| *d += gv);
                }
            }
        }
    }
    d_in
}

/// Per-channel batch statistics of a `[n, c, h, w]` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

pub fn channel_stats(input: &[f64], dims: Dims4) -> ChannelStats {
    let count = dims.n * dims.plane();
    let mut mean = vec![0.0; dims.c];
    let mut var = vec![0.0; dims.c];
    for c in 0..dims.c {
        let planes = || (0..dims.n).map(|b| &input[(b * dims.c + c) * dims.plane()..][..dims.plane()]);
        let x0 = input[c * dims.plane()];
        let dev: f64 = planes().map(|p| p.iter().map(|&x| x - x0).sum::<f64>()).sum();
        let m = x0 + dev / count as f64;
        let ss: f64 = planes()
            .map(|p| p.iter().map(|&x| (x - m) * (x - m)).sum::<f64>())
            .sum();
        mean[c] = m;
        var[c] = ss / count as f64;
    }
    ChannelStats { mean, var, count }
}

/// Normalizes each channel with the given statistics, then applies `gamma`/`beta`.
///
/// Returns `(output, x_hat, inv_std)`.
pub fn batch_norm_apply(
    input: &[f64],
    dims: Dims4,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = vec![0.0; input.len()];
    let mut xhat = vec![0.0; input.len()];
    for b in 0..dims.n {
        for c in 0..dims.c {
            let base = (b * dims.c + c) * dims.plane();
            for k in base..base + dims.plane() {
                let xh = (input[k] - mean[c]) * inv_std[c];
                xhat[k] = xh;
                out[k] = gamma[c] * xh + beta[c];
            }
        }
    }
    (out, xhat, inv_std)
}

/// Gradients of batch norm.
///
/// With `batch_stats` the mean and variance are functions of the input (train
/// mode); otherwise they are constants (running statistics).
/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward(
    grad_out: &[f64],
    dims: Dims4,
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let count = (dims.n * dims.plane()) as f64;
    let mut d_in = vec![0.0; grad_out.len()];
    let mut d_gamma = vec![0.0; dims.c];
    let mut d_beta = vec![0.0; dims.c];
    for c in 0..dims.c {
        let idx = || (0..dims.n).flat_map(move |b| {
            let base = (b * dims.c + c) * dims.plane();
            base..base + dims.plane()
        });
        let (mut sg, mut sgx) = (0.0, 0.0);
        for k in idx() {
            sg += grad_out[k];
            sgx += grad_out[k] * xhat[k];
        }
        d_beta[c] = sg;
        d_gamma[c] = sgx;
        let gi = gamma[c] * inv_std[c];
        if batch_stats {
            let (mg, mgx) = (sg / count, sgx / count);
            for k in idx() {
                d_in[k] = gi * (grad_out[k] - mg - xhat[k] * mgx);
            }
        } else {
            for k in idx() {
                d_in[k] = gi * grad_out[k];
            }
        }
    }
    (d_in, d_gamma, d_beta)
}

pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x
    }
}

pub fn leaky_relu_grad(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        alpha
    }
}

/// `100 * sqrt(mean((pred - target)^2))`.
///
/// Residuals are scaled by their largest magnitude before squaring, so equal
/// residuals give `100 * |r|` without rounding in the square root.
pub fn rmse100(pred: &[f64], target: &[f64]) -> f64 {
    let peak = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let ms = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = (p - t) / peak;
            r * r
        })
        .sum::<f64>()
        / pred.len() as f64;
    100.0 * peak * ms.sqrt()
}
