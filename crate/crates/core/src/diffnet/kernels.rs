//! Forward and backward kernels.
//!
//! Convolutions use a fixed 4×4 kernel, stride 2 and padding 1, so a
//! convolution halves the spatial extent and a transposed convolution
//! doubles it. Both run as im2col followed by one GEMM over the whole batch.

use serde::{Deserialize, Serialize};

use super::real::{gemm, Op};
use super::{Real, Tensor};
use crate::{par, Error, Result};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
const TAPS: usize = KERNEL * KERNEL;

fn dims4<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(Error::shape(format!("{what} must be 4-D, got {s:?}"))),
    }
}

/// Output positions `[lo, hi)` along one axis whose input index
/// `2·o + k − 1` falls inside `0..len`.
fn valid_range(k: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = usize::from(k < PADDING);
    let hi = if len < k {
        0
    } else {
        ((len - k) / STRIDE + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

/// Unfolds `[b, c, h, w]` into `[c·16, b·(h/2)·(w/2)]` patches.
fn im2col<T: Real>(x: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / STRIDE, w / STRIDE);
    let ncol = b * ho * wo;
    let mut cols = vec![T::zero(); c * TAPS * ncol];
    par::for_each_chunk_mut(&mut cols, ncol, |r, row| {
        let (ci, ky, kx) = (r / TAPS, (r % TAPS) / KERNEL, r % KERNEL);
        let (ylo, yhi) = valid_range(ky, h, ho);
        let (xlo, xhi) = valid_range(kx, w, wo);
        for bi in 0..b {
            let plane = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            let out = &mut row[bi * ho * wo..(bi + 1) * ho * wo];
            for oy in ylo..yhi {
                let iy = oy * STRIDE + ky - PADDING;
                let src = &plane[iy * w + xlo * STRIDE + kx - PADDING..(iy + 1) * w];
                let dst = &mut out[oy * wo + xlo..oy * wo + xhi];
                for (d, s) in dst.iter_mut().zip(src.iter().step_by(STRIDE)) {
                    *d = *s;
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatters patches back, summing overlaps.
fn col2im<T: Real>(cols: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / STRIDE, w / STRIDE);
    let ncol = b * ho * wo;
    let mut x = vec![T::zero(); b * c * h * w];
    par::for_each_chunk_mut(&mut x, h * w, |p, plane| {
        let (bi, ci) = (p / c, p % c);
        for tap in 0..TAPS {
            let (ky, kx) = (tap / KERNEL, tap % KERNEL);
            let (ylo, yhi) = valid_range(ky, h, ho);
            let (xlo, xhi) = valid_range(kx, w, wo);
            let row = &cols[(ci * TAPS + tap) * ncol + bi * ho * wo..][..ho * wo];
            for oy in ylo..yhi {
                let iy = oy * STRIDE + ky - PADDING;
                let dst = &mut plane[iy * w + xlo * STRIDE + kx - PADDING..(iy + 1) * w];
                let src = &row[oy * wo + xlo..oy * wo + xhi];
                for (d, s) in dst.iter_mut().step_by(STRIDE).zip(src) {
                    *d = *d + *s;
                }
            }
        }
    });
    x
}

/// `[b, c, s] → [c, b·s]`.
fn to_channel_major<T: Real>(x: &[T], b: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[ci * b * s + bi * s..][..s].copy_from_slice(&x[(bi * c + ci) * s..][..s]);
        }
    }
    out
}

/// `[c, b·s] → [b, c, s]`.
fn to_batch_major<T: Real>(x: &[T], b: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * s..][..s].copy_from_slice(&x[ci * b * s + bi * s..][..s]);
        }
    }
    out
}

fn add_channel_bias<T: Real>(y: &mut [T], bias: &[T], c: usize, s: usize) {
    for (i, chunk) in y.chunks_mut(s).enumerate() {
        let bv = bias[i % c];
        chunk.iter_mut().for_each(|v| *v = *v + bv);
    }
}

fn channel_sums<T: Real>(dy: &[T], c: usize, s: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; c];
    for (i, chunk) in dy.chunks(s).enumerate() {
        acc[i % c] += chunk.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
    }
    acc.into_iter().map(T::lit).collect()
}

fn check_conv_shapes<T: Real>(
    h: usize,
    w: usize,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    cin: usize,
    transpose: bool,
) -> Result<usize> {
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != KERNEL || ws[3] != KERNEL {
        return Err(Error::shape(format!(
            "weight must be [_, _, 4, 4], got {ws:?}"
        )));
    }
    let (w_in, w_out) = if transpose {
        (ws[0], ws[1])
    } else {
        (ws[1], ws[0])
    };
    if w_in != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels but weight {ws:?} expects {w_in}"
        )));
    }
    if bias.shape() != [w_out] {
        return Err(Error::shape(format!(
            "bias must be [{w_out}], got {:?}",
            bias.shape()
        )));
    }
    if !transpose && (h < KERNEL || w < KERNEL || !h.is_multiple_of(2) || !w.is_multiple_of(2)) {
        return Err(Error::shape(format!(
            "convolution input must be even and at least 4 on each side, got {h}x{w}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("empty spatial extent"));
    }
    Ok(w_out)
}

/// Cross-correlation: `[B, Cin, H, W]` with `[Cout, Cin, 4, 4]` gives `[B, Cout, H/2, W/2]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, cin, h, w) = dims4(input, "conv2d input")?;
    let cout = check_conv_shapes(h, w, weight, bias, cin, false)?;
    let (ho, wo) = (h / STRIDE, w / STRIDE);
    let ncol = b * ho * wo;
    let cols = im2col(input.data(), b, cin, h, w);
    let mut out_cm = vec![T::zero(); cout * ncol];
    gemm(
        cout,
        cin * TAPS,
        ncol,
        weight.data(),
        Op::N,
        &cols,
        Op::N,
        T::zero(),
        &mut out_cm,
    );
    let mut out = to_batch_major(&out_cm, b, cout, ho * wo);
    add_channel_bias(&mut out, bias.data(), cout, ho * wo);
    Tensor::from_vec(&[b, cout, ho, wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, cin, h, w) = dims4(input, "conv2d input")?;
    let cout = weight.shape()[0];
    let (ho, wo) = (h / STRIDE, w / STRIDE);
    if grad_out.shape() != [b, cout, ho, wo] {
        return Err(Error::shape(format!(
            "conv2d grad_out must be {:?}, got {:?}",
            [b, cout, ho, wo],
            grad_out.shape()
        )));
    }
    let ncol = b * ho * wo;
    let d_cm = to_channel_major(grad_out.data(), b, cout, ho * wo);
    let cols = im2col(input.data(), b, cin, h, w);
    let mut dw = vec![T::zero(); cout * cin * TAPS];
    gemm(
        cout,
        ncol,
        cin * TAPS,
        &d_cm,
        Op::N,
        &cols,
        Op::T,
        T::zero(),
        &mut dw,
    );
    let mut dcols = vec![T::zero(); cin * TAPS * ncol];
    gemm(
        cin * TAPS,
        cout,
        ncol,
        weight.data(),
        Op::T,
        &d_cm,
        Op::N,
        T::zero(),
        &mut dcols,
    );
    let dx = col2im(&dcols, b, cin, h, w);
    let db = channel_sums(grad_out.data(), cout, ho * wo);
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(weight.shape(), dw)?,
        Tensor::from_vec(&[cout], db)?,
    ))
}

/// Transposed convolution: `[B, Cin, H, W]` with `[Cin, Cout, 4, 4]` gives
/// `[B, Cout, 2H, 2W]`. With zero bias this is the input-gradient of
/// [`conv2d`] under the same weight.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, cin, h, w) = dims4(input, "conv_transpose2d input")?;
    let cout = check_conv_shapes(h, w, weight, bias, cin, true)?;
    let (ho, wo) = (h * STRIDE, w * STRIDE);
    let ncol = b * h * w;
    let y_cm = to_channel_major(input.data(), b, cin, h * w);
    let mut cols = vec![T::zero(); cout * TAPS * ncol];
    gemm(
        cout * TAPS,
        cin,
        ncol,
        weight.data(),
        Op::T,
        &y_cm,
        Op::N,
        T::zero(),
        &mut cols,
    );
    let mut out = col2im(&cols, b, cout, ho, wo);
    add_channel_bias(&mut out, bias.data(), cout, ho * wo);
    Tensor::from_vec(&[b, cout, ho, wo], out)
}

pub fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, cin, h, w) = dims4(input, "conv_transpose2d input")?;
    let cout = weight.shape()[1];
    let (ho, wo) = (h * STRIDE, w * STRIDE);
    if grad_out.shape() != [b, cout, ho, wo] {
        return Err(Error::shape(format!(
            "conv_transpose2d grad_out must be {:?}, got {:?}",
            [b, cout, ho, wo],
            grad_out.shape()
        )));
    }
    let ncol = b * h * w;
    let dcols = im2col(grad_out.data(), b, cout, ho, wo);
    let mut dy_cm = vec![T::zero(); cin * ncol];
    gemm(
        cin,
        cout * TAPS,
        ncol,
        weight.data(),
        Op::N,
        &dcols,
        Op::N,
        T::zero(),
        &mut dy_cm,
    );
    let y_cm = to_channel_major(input.data(), b, cin, h * w);
    let mut dw = vec![T::zero(); cin * cout * TAPS];
    gemm(
        cin,
        ncol,
        cout * TAPS,
        &y_cm,
        Op::N,
        &dcols,
        Op::T,
        T::zero(),
        &mut dw,
    );
    let dx = to_batch_major(&dy_cm, b, cin, h * w);
    let db = channel_sums(grad_out.data(), cout, ho * wo);
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(weight.shape(), dw)?,
        Tensor::from_vec(&[cout], db)?,
    ))
}

/// Affine map `[B, F] · [F, G] + [G]`.
pub fn dense<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, f, g) = dense_dims(input, weight)?;
    if bias.shape() != [g] {
        return Err(Error::shape(format!(
            "bias must be [{g}], got {:?}",
            bias.shape()
        )));
    }
    let mut out = vec![T::zero(); b * g];
    for row in out.chunks_mut(g) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        b,
        f,
        g,
        input.data(),
        Op::N,
        weight.data(),
        Op::N,
        T::one(),
        &mut out,
    );
    Tensor::from_vec(&[b, g], out)
}

fn dense_dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape()) {
        (&[b, f], &[wf, g]) if f == wf => Ok((b, f, g)),
        (i, w) => Err(Error::shape(format!(
            "dense input {i:?} incompatible with weight {w:?}"
        ))),
    }
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, f, g) = dense_dims(input, weight)?;
    if grad_out.shape() != [b, g] {
        return Err(Error::shape(format!(
            "dense grad_out must be [{b}, {g}], got {:?}",
            grad_out.shape()
        )));
    }
    let mut dw = vec![T::zero(); f * g];
    gemm(
        f,
        b,
        g,
        input.data(),
        Op::T,
        grad_out.data(),
        Op::N,
        T::zero(),
        &mut dw,
    );
    let mut dx = vec![T::zero(); b * f];
    gemm(
        b,
        g,
        f,
        grad_out.data(),
        Op::N,
        weight.data(),
        Op::T,
        T::zero(),
        &mut dx,
    );
    let db = channel_sums(grad_out.data(), g, 1);
    Ok((
        Tensor::from_vec(&[b, f], dx)?,
        Tensor::from_vec(&[f, g], dw)?,
        Tensor::from_vec(&[g], db)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(alpha)
                }
            }
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
        }
    }

    /// Derivative given the forward input `x` and output `y`.
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(alpha)
                }
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn activation<T: Real>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

pub fn activation_backward<T: Real>(
    kind: Activation,
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::shape(format!(
            "activation grad_out {:?} does not match input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * kind.derivative(x, y))
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel normalization results kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased variance (train mode only).
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn bn_dims<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::shape(format!(
            "batch norm needs [B, C, ...], got {s:?}"
        )));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

/// Batch normalization. With `running = None` the batch statistics are used
/// (training); otherwise the supplied running mean and variance.
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&[T], &[T])>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (b, c, s) = bn_dims(x)?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "batch norm over {c} channels got gamma/beta of {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    let n = b * s;
    let (mean, var_biased, var_unbiased): (Vec<f64>, Vec<f64>, Vec<f64>) = match running {
        Some((rm, rv)) => {
            let m: Vec<f64> = rm.iter().map(|v| v.to_f64().unwrap()).collect();
            let v: Vec<f64> = rv.iter().map(|v| v.to_f64().unwrap()).collect();
            (m, v.clone(), v)
        }
        None => {
            if n < 2 {
                return Err(Error::shape(
                    "batch norm in training mode needs more than one value per channel",
                ));
            }
            let mut sum = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            for (i, chunk) in x.data().chunks(s).enumerate() {
                sum[i % c] += chunk.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            }
            let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
            for (i, chunk) in x.data().chunks(s).enumerate() {
                let m = mean[i % c];
                sq[i % c] += chunk
                    .iter()
                    .map(|v| (v.to_f64().unwrap() - m).powi(2))
                    .sum::<f64>();
            }
            let vb = sq.iter().map(|v| v / n as f64).collect();
            let vu = sq.iter().map(|v| v / (n - 1) as f64).collect();
            (mean, vb, vu)
        }
    };
    let inv_std: Vec<f64> = var_biased
        .iter()
        .map(|v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for (i, (src, (xh, out))) in x
        .data()
        .chunks(s)
        .zip(xhat.chunks_mut(s).zip(y.chunks_mut(s)))
        .enumerate()
    {
        let ch = i % c;
        let (m, is) = (T::lit(mean[ch]), T::lit(inv_std[ch]));
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for ((&v, h), o) in src.iter().zip(xh.iter_mut()).zip(out.iter_mut()) {
            *h = (v - m) * is;
            *o = g * *h + bt;
        }
    }
    let cache = NormCache {
        xhat,
        inv_std: inv_std.into_iter().map(T::lit).collect(),
        mean: mean.into_iter().map(T::lit).collect(),
        var: var_unbiased.into_iter().map(T::lit).collect(),
    };
    Ok((Tensor::from_vec(x.shape(), y)?, cache))
}

/// Gradients of [`batch_norm`] with respect to input, gamma and beta.
pub fn batch_norm_backward<T: Real>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, s) = bn_dims(grad_out)?;
    let n = (b * s) as f64;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (i, (g, xh)) in grad_out
        .data()
        .chunks(s)
        .zip(cache.xhat.chunks(s))
        .enumerate()
    {
        for (&gv, &hv) in g.iter().zip(xh) {
            let gv = gv.to_f64().unwrap();
            dgamma[i % c] += gv * hv.to_f64().unwrap();
            dbeta[i % c] += gv;
        }
    }
    let mut dx = vec![T::zero(); grad_out.len()];
    for (i, (out, (g, xh))) in dx
        .chunks_mut(s)
        .zip(grad_out.data().chunks(s).zip(cache.xhat.chunks(s)))
        .enumerate()
    {
        let ch = i % c;
        let scale = gamma.data()[ch].to_f64().unwrap() * cache.inv_std[ch].to_f64().unwrap();
        for ((o, &gv), &hv) in out.iter_mut().zip(g).zip(xh) {
            let gv = gv.to_f64().unwrap();
            *o = T::lit(if training {
                scale * (gv - dbeta[ch] / n - hv.to_f64().unwrap() * dgamma[ch] / n)
            } else {
                scale * gv
            });
        }
    }
    Ok((
        Tensor::from_vec(grad_out.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma.into_iter().map(T::lit).collect())?,
        Tensor::from_vec(&[c], dbeta.into_iter().map(T::lit).collect())?,
    ))
}
