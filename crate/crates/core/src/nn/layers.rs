//! Layer math: forward and backward ops over NHWC batches.
//!
//! Convolution uses the cross-correlation convention (no kernel flip) with
//! weights shaped [kh, kw, in_channels, filters]. All backward passes are
//! validated against central finite differences in the test suite.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// out[m x n] += a[m x k] * b[k x n]
fn matmul_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            if av != 0.0 {
                let b_row = &b[l * n..(l + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Gathers one image's receptive fields into a [oh*ow, kh*kw*c] matrix.
/// Out-of-bounds (padding) cells are zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let k = kh * kw * c;
    debug_assert_eq!(cols.len(), oh * ow * k);
    for v in cols.iter_mut() {
        *v = 0.0;
    }
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * k;
            for ky in 0..kh {
                let sy = (oy * stride + ky) as isize - padding as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = (ox * stride + kx) as isize - padding as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = ((sy as usize * w) + sx as usize) * c;
                    let dst = row + (ky * kw + kx) * c;
                    cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
}

/// Scatters column gradients back onto the input image (inverse of im2col).
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    gx: &mut [f64],
) {
    let k = kh * kw * c;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * k;
            for ky in 0..kh {
                let sy = (oy * stride + ky) as isize - padding as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = (ox * stride + kx) as isize - padding as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = ((sy as usize * w) + sx as usize) * c;
                    let src = row + (ky * kw + kx) * c;
                    for i in 0..c {
                        gx[dst + i] += dcols[src + i];
                    }
                }
            }
        }
    }
}

fn conv_dims(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    let [n, h, iw, c] = match *x.shape() {
        [n, h, w, c] => [n, h, w, c],
        _ => {
            return Err(Error::Shape(format!(
                "conv2d expects an NHWC input, got shape {:?}",
                x.shape()
            )))
        }
    };
    let [kh, kw, wc, f] = match *w.shape() {
        [kh, kw, wc, f] => [kh, kw, wc, f],
        _ => {
            return Err(Error::Shape(format!(
                "conv2d expects [kh, kw, in_c, filters] weights, got {:?}",
                w.shape()
            )))
        }
    };
    if wc != c {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {c}, weights expect {wc}"
        )));
    }
    let oh = conv_out_dim(h, kh, stride, padding)
        .ok_or_else(|| Error::Shape(format!("kernel {kh} too large for padded height {h}+2*{padding}")))?;
    let ow = conv_out_dim(iw, kw, stride, padding)
        .ok_or_else(|| Error::Shape(format!("kernel {kw} too large for padded width {iw}+2*{padding}")))?;
    Ok((n, h, iw, c, kh, kw, f, oh, ow))
}

/// Cross-correlation convolution of an NHWC batch.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, h, iw, c, kh, kw, f, oh, ow) = conv_dims(x, w, stride, padding)?;
    if b.shape() != [f] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?} does not match {f} filters",
            b.shape()
        )));
    }
    let k = kh * kw * c;
    let mut out = Tensor::zeros(vec![n, oh, ow, f]);
    let mut cols = vec![0.0; oh * ow * k];
    let img_in = h * iw * c;
    let img_out = oh * ow * f;
    for img in 0..n {
        let x_img = &x.data()[img * img_in..(img + 1) * img_in];
        im2col(x_img, h, iw, c, kh, kw, stride, padding, oh, ow, &mut cols);
        let out_img = &mut out.data_mut()[img * img_out..(img + 1) * img_out];
        for (row, bias) in out_img.chunks_exact_mut(f).zip(std::iter::repeat(b.data())) {
            row.copy_from_slice(bias);
        }
        matmul_acc(&cols, oh * ow, k, w.data(), f, out_img);
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, h, iw, c, kh, kw, f, oh, ow) = conv_dims(x, w, stride, padding)?;
    if grad_out.shape() != [n, oh, ow, f] {
        return Err(Error::Shape(format!(
            "conv2d grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, oh, ow, f]
        )));
    }
    let k = kh * kw * c;
    let mut gx = Tensor::zeros(x.shape().to_vec());
    let mut gw = Tensor::zeros(w.shape().to_vec());
    let mut gb = Tensor::zeros(vec![f]);
    let mut cols = vec![0.0; oh * ow * k];
    let mut dcols = vec![0.0; oh * ow * k];
    let img_in = h * iw * c;
    let img_out = oh * ow * f;
    for img in 0..n {
        let x_img = &x.data()[img * img_in..(img + 1) * img_in];
        let g_img = &grad_out.data()[img * img_out..(img + 1) * img_out];
        im2col(x_img, h, iw, c, kh, kw, stride, padding, oh, ow, &mut cols);
        // gw[q, f] += sum_p cols[p, q] * g[p, f]
        let gw_data = gw.data_mut();
        for p in 0..oh * ow {
            let col_row = &cols[p * k..(p + 1) * k];
            let g_row = &g_img[p * f..(p + 1) * f];
            for (q, &cv) in col_row.iter().enumerate() {
                if cv != 0.0 {
                    let gw_row = &mut gw_data[q * f..(q + 1) * f];
                    for (o, &gv) in gw_row.iter_mut().zip(g_row) {
                        *o += cv * gv;
                    }
                }
            }
            for (o, &gv) in gb.data_mut().iter_mut().zip(g_row) {
                *o += gv;
            }
        }
        // dcols[p, q] = sum_f g[p, f] * w[q, f]
        for p in 0..oh * ow {
            let g_row = &g_img[p * f..(p + 1) * f];
            let d_row = &mut dcols[p * k..(p + 1) * k];
            for (q, dv) in d_row.iter_mut().enumerate() {
                let w_row = &w.data()[q * f..(q + 1) * f];
                let mut acc = 0.0;
                for (gv, wv) in g_row.iter().zip(w_row) {
                    acc += gv * wv;
                }
                *dv = acc;
            }
        }
        let gx_img = &mut gx.data_mut()[img * img_in..(img + 1) * img_in];
        col2im(&dcols, h, iw, c, kh, kw, stride, padding, oh, ow, gx_img);
    }
    Ok((gx, gw, gb))
}

/// Windowed max over NHWC spatial dims; returns the output and the flat
/// source index of each maximum (first maximum wins on ties).
pub fn maxpool_forward(x: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let [n, h, w, c] = match *x.shape() {
        [n, h, w, c] => [n, h, w, c],
        _ => {
            return Err(Error::Shape(format!(
                "maxpool expects an NHWC input, got shape {:?}",
                x.shape()
            )))
        }
    };
    if size == 0 || stride == 0 {
        return Err(Error::Shape("maxpool size and stride must be positive".into()));
    }
    if h < size || w < size {
        return Err(Error::Shape(format!(
            "maxpool window {size} exceeds input {h}x{w}"
        )));
    }
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = Tensor::zeros(vec![n, oh, ow, c]);
    let mut argmax = vec![0usize; n * oh * ow * c];
    let data = x.data();
    let out_data = out.data_mut();
    for img in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..size {
                        for kx in 0..size {
                            let sy = oy * stride + ky;
                            let sx = ox * stride + kx;
                            let idx = ((img * h + sy) * w + sx) * c + ch;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = ((img * oh + oy) * ow + ox) * c + ch;
                    out_data[oidx] = best;
                    argmax[oidx] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes gradients to the recorded maxima. Overlapping windows accumulate.
pub fn maxpool_backward(x_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.numel() {
        return Err(Error::Shape("maxpool backward before forward".into()));
    }
    let mut gx = Tensor::zeros(x_shape.to_vec());
    let gx_data = gx.data_mut();
    for (i, &src) in argmax.iter().enumerate() {
        gx_data[src] += grad_out.data()[i];
    }
    Ok(gx)
}

/// Pads NHWC spatial dims with `size` zeros on every side.
pub fn zeropad_forward(x: &Tensor, size: usize) -> Result<Tensor> {
    let [n, h, w, c] = match *x.shape() {
        [n, h, w, c] => [n, h, w, c],
        _ => {
            return Err(Error::Shape(format!(
                "zeropad expects an NHWC input, got shape {:?}",
                x.shape()
            )))
        }
    };
    let (ph, pw) = (h + 2 * size, w + 2 * size);
    let mut out = Tensor::zeros(vec![n, ph, pw, c]);
    let out_data = out.data_mut();
    for img in 0..n {
        for y in 0..h {
            let src = ((img * h + y) * w) * c;
            let dst = ((img * ph + y + size) * pw + size) * c;
            out_data[dst..dst + w * c].copy_from_slice(&x.data()[src..src + w * c]);
        }
    }
    Ok(out)
}

pub fn zeropad_backward(x_shape: &[usize], size: usize, grad_out: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = match *x_shape {
        [n, h, w, c] => [n, h, w, c],
        _ => return Err(Error::Shape("zeropad backward expects an NHWC shape".into())),
    };
    let ph = h + 2 * size;
    let pw = w + 2 * size;
    let mut gx = Tensor::zeros(x_shape.to_vec());
    let gx_data = gx.data_mut();
    for img in 0..n {
        for y in 0..h {
            let dst = ((img * h + y) * w) * c;
            let src = ((img * ph + y + size) * pw + size) * c;
            gx_data[dst..dst + w * c].copy_from_slice(&grad_out.data()[src..src + w * c]);
        }
    }
    Ok(gx)
}

/// Fully connected layer: out = x * w + b for x [n, d], w [d, u], b [u].
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, d] = match *x.shape() {
        [n, d] => [n, d],
        _ => {
            return Err(Error::Shape(format!(
                "dense expects a [n, features] input, got {:?}",
                x.shape()
            )))
        }
    };
    let [wd, u] = match *w.shape() {
        [wd, u] => [wd, u],
        _ => return Err(Error::Shape("dense weights must be 2-d".into())),
    };
    if wd != d || b.shape() != [u] {
        return Err(Error::Shape(format!(
            "dense shape mismatch: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(vec![n, u]);
    let out_data = out.data_mut();
    for row in out_data.chunks_exact_mut(u) {
        row.copy_from_slice(b.data());
    }
    matmul_acc(x.data(), n, d, w.data(), u, out_data);
    Ok(out)
}

pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let u = w.shape()[1];
    if grad_out.shape() != [n, u] {
        return Err(Error::Shape("dense gradient shape mismatch".into()));
    }
    let mut gx = Tensor::zeros(vec![n, d]);
    let mut gw = Tensor::zeros(vec![d, u]);
    let mut gb = Tensor::zeros(vec![u]);
    // gw[f, j] += sum_n x[n, f] * g[n, j]; gb[j] += sum_n g[n, j]
    let gw_data = gw.data_mut();
    for i in 0..n {
        let x_row = &x.data()[i * d..(i + 1) * d];
        let g_row = &grad_out.data()[i * u..(i + 1) * u];
        for (f, &xv) in x_row.iter().enumerate() {
            if xv != 0.0 {
                let gw_row = &mut gw_data[f * u..(f + 1) * u];
                for (o, &gv) in gw_row.iter_mut().zip(g_row) {
                    *o += xv * gv;
                }
            }
        }
        for (o, &gv) in gb.data_mut().iter_mut().zip(g_row) {
            *o += gv;
        }
    }
    // gx[n, f] = sum_j g[n, j] * w[f, j]
    let gx_data = gx.data_mut();
    for i in 0..n {
        let g_row = &grad_out.data()[i * u..(i + 1) * u];
        let gx_row = &mut gx_data[i * d..(i + 1) * d];
        for (f, out) in gx_row.iter_mut().enumerate() {
            let w_row = &w.data()[f * u..(f + 1) * u];
            let mut acc = 0.0;
            for (gv, wv) in g_row.iter().zip(w_row) {
                acc += gv * wv;
            }
            *out = acc;
        }
    }
    Ok((gx, gw, gb))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(x.shape().to_vec());
    for ((g, &xv), &gv) in gx.data_mut().iter_mut().zip(x.data()).zip(grad_out.data()) {
        *g = if xv > 0.0 { gv } else { 0.0 };
    }
    gx
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.99;

/// Cache of train-mode batch statistics needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub channels: usize,
}

/// Per-channel standardization over all non-channel axes (channel = last
/// axis). Train mode uses biased batch statistics and folds them into the
/// running stats with momentum; eval mode standardizes by the running stats.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut [f64],
    running_var: &mut [f64],
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("batchnorm needs at least one axis".into()))?;
    if gamma.shape() != [c] || beta.shape() != [c] || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape("batchnorm parameter shape mismatch".into()));
    }
    let m = x.numel() / c;
    let mut out = Tensor::zeros(x.shape().to_vec());
    match mode {
        Mode::Train => {
            if x.shape()[0] < 2 {
                return Err(Error::Shape(
                    "batchnorm in train mode needs a batch of at least 2".into(),
                ));
            }
            let mut mean = vec![0.0f64; c];
            for row in x.data().chunks_exact(c) {
                for (acc, &v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            for v in mean.iter_mut() {
                *v /= m as f64;
            }
            let mut var = vec![0.0f64; c];
            for row in x.data().chunks_exact(c) {
                for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= m as f64;
            }
            let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0f64; x.numel()];
            for (i, row) in x.data().chunks_exact(c).enumerate() {
                for (ch, &v) in row.iter().enumerate() {
                    let xh = (v - mean[ch]) * inv_std[ch];
                    xhat[i * c + ch] = xh;
                    out.data_mut()[i * c + ch] = gamma.data()[ch] * xh + beta.data()[ch];
                }
            }
            for ch in 0..c {
                running_mean[ch] = momentum * running_mean[ch] + (1.0 - momentum) * mean[ch];
                running_var[ch] = momentum * running_var[ch] + (1.0 - momentum) * var[ch];
            }
            Ok((
                out,
                Some(BatchNormCache {
                    xhat,
                    inv_std,
                    channels: c,
                }),
            ))
        }
        Mode::Eval => {
            for (i, row) in x.data().chunks_exact(c).enumerate() {
                for (ch, &v) in row.iter().enumerate() {
                    let xh = (v - running_mean[ch]) / (running_var[ch] + eps).sqrt();
                    out.data_mut()[i * c + ch] = gamma.data()[ch] * xh + beta.data()[ch];
                }
            }
            Ok((out, None))
        }
    }
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = cache.channels;
    let m = grad_out.numel() / c;
    let mut dgamma = Tensor::zeros(vec![c]);
    let mut dbeta = Tensor::zeros(vec![c]);
    for (i, row) in grad_out.data().chunks_exact(c).enumerate() {
        for (ch, &g) in row.iter().enumerate() {
            dbeta.data_mut()[ch] += g;
            dgamma.data_mut()[ch] += g * cache.xhat[i * c + ch];
        }
    }
    let mut gx = Tensor::zeros(grad_out.shape().to_vec());
    let mf = m as f64;
    for (i, row) in grad_out.data().chunks_exact(c).enumerate() {
        for (ch, &g) in row.iter().enumerate() {
            let term = mf * g - dbeta.data()[ch] - cache.xhat[i * c + ch] * dgamma.data()[ch];
            gx.data_mut()[i * c + ch] = gamma.data()[ch] * cache.inv_std[ch] / mf * term;
        }
    }
    Ok((gx, dgamma, dbeta))
}

/// Inverted dropout: kept activations are scaled by 1/keep at train time so
/// eval is the identity. Returns the multiplier mask used.
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), vec![1.0; x.numel()]));
    }
    let rng = rng.ok_or_else(|| {
        Error::Run("dropout in train mode needs a generator".into())
    })?;
    let keep = 1.0 - rate;
    let mut mask = vec![0.0f64; x.numel()];
    for v in mask.iter_mut() {
        if rng.gen_range(0.0..1.0) < keep {
            *v = 1.0 / keep;
        }
    }
    let mut out = x.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, mask))
}

pub fn dropout_backward(mask: &[f64], grad_out: &Tensor) -> Tensor {
    let mut gx = grad_out.clone();
    for (g, &m) in gx.data_mut().iter_mut().zip(mask) {
        *g *= m;
    }
    gx
}

/// Row-wise softmax with the max-subtraction trick.
pub fn softmax_forward(logits: &Tensor) -> Result<Tensor> {
    let [n, k] = match *logits.shape() {
        [n, k] => [n, k],
        _ => return Err(Error::Shape("softmax expects a [n, classes] input".into())),
    };
    let mut out = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let out_row = &mut out.data_mut()[i * k..(i + 1) * k];
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Mean categorical cross entropy of logits against class indices; returns
/// the loss and the softmax probabilities.
pub fn softmax_xent_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k] = match *logits.shape() {
        [n, k] => [n, k],
        _ => return Err(Error::Shape("loss expects [n, classes] logits".into())),
    };
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut probs = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        if labels[i] >= k {
            return Err(Error::Shape(format!(
                "label {} out of range for {k} classes",
                labels[i]
            )));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        loss -= row[labels[i]] - lse;
        let p_row = &mut probs.data_mut()[i * k..(i + 1) * k];
        for (p, &v) in p_row.iter_mut().zip(row) {
            *p = (v - lse).exp();
        }
    }
    Ok((loss / n as f64, probs))
}

/// Gradient of the mean cross entropy with respect to the logits:
/// (probs - onehot) / n.
pub fn softmax_xent_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let [n, k] = match *probs.shape() {
        [n, k] => [n, k],
        _ => return Err(Error::Shape("grad expects [n, classes] probs".into())),
    };
    let mut grad = probs.clone();
    let nf = n as f64;
    for i in 0..n {
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        row[labels[i]] -= 1.0;
        for v in row.iter_mut() {
            *v /= nf;
        }
    }
    Ok(grad)
}

/// He-uniform initialization for a weight tensor with the given fan-in.
pub fn he_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape, data).expect("sized buffer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn conv_1x1_identity_weights_pass_input_through() {
        let x = tensor(vec![1, 3, 3, 2], (0..18).map(|v| v as f64 * 0.5).collect());
        // 1x1 kernel, 2 in channels -> 2 filters, identity mixing matrix.
        let w = tensor(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::zeros(vec![2]);
        let out = conv2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_all_ones_3x3_sums_to_nine() {
        let x = Tensor::filled(vec![1, 3, 3, 1], 1.0);
        let w = Tensor::filled(vec![3, 3, 1, 1], 1.0);
        let b = Tensor::zeros(vec![1]);
        let out = conv2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    /// Independent quadruple-loop convolution used as the forward oracle.
    fn conv_naive(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Tensor {
        let (n, h, iw, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw, f) = (w.shape()[0], w.shape()[1], w.shape()[3]);
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (iw + 2 * padding - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![n, oh, ow, f]);
        for img in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for fl in 0..f {
                        let mut acc = b.data()[fl];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                for ch in 0..c {
                                    let sy = (oy * stride + ky) as isize - padding as isize;
                                    let sx = (ox * stride + kx) as isize - padding as isize;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= iw as isize {
                                        continue;
                                    }
                                    let xi = ((img * h + sy as usize) * iw + sx as usize) * c + ch;
                                    let wi = ((ky * kw + kx) * c + ch) * f + fl;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        let oi = ((img * oh + oy) * ow + ox) * f + fl;
                        out.data_mut()[oi] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut r = rng::seeded(21, 0);
        for &(stride, padding) in &[(1usize, 0usize), (1, 1), (2, 0), (2, 1)] {
            let x = random_tensor(vec![2, 5, 5, 3], &mut r);
            let w = random_tensor(vec![3, 3, 3, 4], &mut r);
            let b = random_tensor(vec![4], &mut r);
            let fast = conv2d_forward(&x, &w, &b, stride, padding).unwrap();
            let slow = conv_naive(&x, &w, &b, stride, padding);
            assert_eq!(fast.shape(), slow.shape());
            for i in 0..fast.numel() {
                assert!(
                    (fast.data()[i] - slow.data()[i]).abs() <= 1e-12,
                    "stride {stride} pad {padding} idx {i}"
                );
            }
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::zeros(vec![1, 2, 2, 1]);
        let w = Tensor::zeros(vec![3, 3, 1, 1]);
        let b = Tensor::zeros(vec![1]);
        assert!(conv2d_forward(&x, &w, &b, 1, 0).is_err());
    }

    #[test]
    fn maxpool_of_constant_is_constant() {
        let x = Tensor::filled(vec![1, 4, 4, 2], 2.5);
        let (out, _) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn maxpool_2x2_picks_max() {
        let x = tensor(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let (out, argmax) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn maxpool_matches_loop_oracle() {
        let mut r = rng::seeded(22, 0);
        let x = random_tensor(vec![2, 6, 6, 3], &mut r);
        for &(size, stride) in &[(2usize, 2usize), (3, 2), (2, 1)] {
            let (out, _) = maxpool_forward(&x, size, stride).unwrap();
            let (h, w, c) = (6, 6, 3);
            let oh = (h - size) / stride + 1;
            let ow = (w - size) / stride + 1;
            for img in 0..2 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            for ky in 0..size {
                                for kx in 0..size {
                                    let idx = ((img * h + oy * stride + ky) * w + ox * stride + kx)
                                        * c
                                        + ch;
                                    best = best.max(x.data()[idx]);
                                }
                            }
                            let oidx = ((img * oh + oy) * ow + ox) * c + ch;
                            assert_eq!(out.data()[oidx], best);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_window_larger_than_input_errors() {
        let x = Tensor::zeros(vec![1, 2, 2, 1]);
        assert!(maxpool_forward(&x, 3, 1).is_err());
    }

    #[test]
    fn zeropad_round_trip() {
        let mut r = rng::seeded(23, 0);
        let x = random_tensor(vec![2, 3, 4, 2], &mut r);
        let padded = zeropad_forward(&x, 2).unwrap();
        assert_eq!(padded.shape(), &[2, 7, 8, 2]);
        let back = zeropad_backward(x.shape(), 2, &padded).unwrap();
        assert_eq!(back.data(), x.data());
        // Border must be zero.
        assert_eq!(padded.data()[0], 0.0);
    }

    #[test]
    fn relu_grad_is_upstream_at_positive_inputs() {
        let x = tensor(vec![2, 2], vec![1.0, -2.0, 0.5, 0.0]);
        let g = tensor(vec![2, 2], vec![10.0, 20.0, 30.0, 40.0]);
        let gx = relu_backward(&x, &g);
        assert_eq!(gx.data(), &[10.0, 0.0, 30.0, 0.0]);
    }

    #[test]
    fn batchnorm_standardized_batch_is_fixed_point() {
        // Batch already has per-channel mean 0 and variance 1.
        let x = tensor(vec![2, 1], vec![1.0, -1.0]);
        let gamma = Tensor::filled(vec![1], 1.0);
        let beta = Tensor::zeros(vec![1]);
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let (out, _) = batchnorm_forward(
            &x,
            &gamma,
            &beta,
            &mut rm,
            &mut rv,
            Mode::Train,
            BATCHNORM_MOMENTUM,
            BATCHNORM_EPS,
        )
        .unwrap();
        for i in 0..2 {
            assert!((out.data()[i] - x.data()[i]).abs() <= 1e-5 + 1e-6);
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut r = rng::seeded(24, 0);
        let x = random_tensor(vec![4, 3, 3, 2], &mut r);
        let gamma = Tensor::filled(vec![2], 1.0);
        let beta = Tensor::zeros(vec![2]);
        let mut rm = vec![0.0; 2];
        let mut rv = vec![1.0; 2];
        let (out, _) = batchnorm_forward(
            &x, &gamma, &beta, &mut rm, &mut rv, Mode::Train, 0.99, BATCHNORM_EPS,
        )
        .unwrap();
        let m = out.numel() / 2;
        for ch in 0..2 {
            let vals: Vec<f64> = out.data().iter().skip(ch).step_by(2).cloned().collect();
            let mean: f64 = vals.iter().sum::<f64>() / m as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            assert!(mean.abs() <= 1e-6, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() <= 1e-4, "channel {ch} var {var}");
        }
    }

    #[test]
    fn batchnorm_matches_direct_formula() {
        let mut r = rng::seeded(25, 0);
        let x = random_tensor(vec![3, 2], &mut r);
        let gamma = tensor(vec![2], vec![1.5, 0.5]);
        let beta = tensor(vec![2], vec![0.1, -0.2]);
        let mut rm = vec![0.0; 2];
        let mut rv = vec![1.0; 2];
        let (out, _) = batchnorm_forward(
            &x, &gamma, &beta, &mut rm, &mut rv, Mode::Train, 0.99, 1e-5,
        )
        .unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = x.data().iter().skip(ch).step_by(2).cloned().collect();
            let mean: f64 = vals.iter().sum::<f64>() / 3.0;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            for i in 0..3 {
                let expected = gamma.data()[ch] * (x.data()[i * 2 + ch] - mean)
                    / (var + 1e-5).sqrt()
                    + beta.data()[ch];
                assert!((out.data()[i * 2 + ch] - expected).abs() <= 1e-12);
            }
        }
        // Running stats moved toward the batch stats by 1 - momentum.
        assert!(rm[0] != 0.0 || rm[1] != 0.0);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats_and_leaves_them_alone() {
        let x = tensor(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let gamma = tensor(vec![2], vec![2.0, 0.5]);
        let beta = tensor(vec![2], vec![0.1, -0.1]);
        let mut rm = vec![1.0, -1.0];
        let mut rv = vec![4.0, 0.25];
        let (out, cache) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, Mode::Eval, 0.99, 1e-5)
                .unwrap();
        assert!(cache.is_none());
        assert_eq!(rm, vec![1.0, -1.0]);
        assert_eq!(rv, vec![4.0, 0.25]);
        for i in 0..2 {
            for ch in 0..2 {
                let expected = gamma.data()[ch] * (x.data()[i * 2 + ch] - rm[ch])
                    / (rv[ch] + 1e-5).sqrt()
                    + beta.data()[ch];
                assert!((out.data()[i * 2 + ch] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_rejects_batch_of_one_in_train_mode() {
        let x = Tensor::zeros(vec![1, 4]);
        let gamma = Tensor::filled(vec![4], 1.0);
        let beta = Tensor::zeros(vec![4]);
        let mut rm = vec![0.0; 4];
        let mut rv = vec![1.0; 4];
        assert!(batchnorm_forward(
            &x, &gamma, &beta, &mut rm, &mut rv, Mode::Train, 0.99, 1e-5
        )
        .is_err());
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut r = rng::seeded(26, 0);
        let x = random_tensor(vec![4, 4], &mut r);
        let (a, _) = dropout_forward(&x, 0.0, Mode::Train, Some(&mut r)).unwrap();
        assert_eq!(a.data(), x.data());
        let (b, _) = dropout_forward(&x, 0.9, Mode::Eval, None).unwrap();
        assert_eq!(b.data(), x.data());
    }

    #[test]
    fn dropout_keeps_about_half_at_rate_half() {
        let mut r = rng::seeded(27, 0);
        let x = Tensor::filled(vec![100_000], 1.0);
        let (out, mask) = dropout_forward(&x, 0.5, Mode::Train, Some(&mut r)).unwrap();
        let kept = mask.iter().filter(|&&m| m > 0.0).count();
        let frac = kept as f64 / mask.len() as f64;
        assert!((0.49..=0.51).contains(&frac), "kept fraction {frac}");
        let mean = out.data().iter().sum::<f64>() / out.numel() as f64;
        assert!((mean - 1.0).abs() <= 0.02, "inverted scaling mean {mean}");
    }

    #[test]
    fn softmax_uniform_logits_give_uniform_probs_and_ln3_loss() {
        let logits = Tensor::filled(vec![2, 3], 0.7);
        let probs = softmax_forward(&logits).unwrap();
        for &p in probs.data() {
            assert!((p - 1.0 / 3.0).abs() <= 1e-12);
        }
        let (loss, _) = softmax_xent_loss(&logits, &[0, 2]).unwrap();
        assert!((loss - 3.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn xent_of_confident_correct_logit_vanishes() {
        let logits = tensor(vec![1, 3], vec![100.0, 0.0, 0.0]);
        let (loss, _) = softmax_xent_loss(&logits, &[0]).unwrap();
        assert!(loss >= 0.0 && loss <= 1e-12);
    }

    #[test]
    fn xent_matches_scalar_oracle() {
        let mut r = rng::seeded(28, 0);
        let logits = random_tensor(vec![5, 3], &mut r);
        let labels = [0usize, 2, 1, 1, 0];
        let (loss, _) = softmax_xent_loss(&logits, &labels).unwrap();
        let mut expected = 0.0;
        for i in 0..5 {
            let row = &logits.data()[i * 3..(i + 1) * 3];
            let denom: f64 = row.iter().map(|&v| v.exp()).sum();
            expected -= (row[labels[i]].exp() / denom).ln();
        }
        expected /= 5.0;
        assert!((loss - expected).abs() <= 1e-12);
    }

    #[test]
    fn combined_softmax_xent_grad_is_probs_minus_onehot() {
        let mut r = rng::seeded(29, 0);
        let logits = random_tensor(vec![4, 3], &mut r);
        let labels = [2usize, 0, 1, 2];
        let (_, probs) = softmax_xent_loss(&logits, &labels).unwrap();
        let grad = softmax_xent_backward(&probs, &labels).unwrap();
        for i in 0..4 {
            for k in 0..3 {
                let onehot = if labels[i] == k { 1.0 } else { 0.0 };
                let expected = (probs.data()[i * 3 + k] - onehot) / 4.0;
                assert!((grad.data()[i * 3 + k] - expected).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut r = rng::seeded(30, 0);
        for _ in 0..50 {
            let logits = random_tensor(vec![3, 3], &mut r);
            let (loss, _) = softmax_xent_loss(&logits, &[0, 1, 2]).unwrap();
            assert!(loss >= 0.0);
        }
    }
}
