//! Pure tensor operations: shape-checked forwards plus matching backward
//! (vector-Jacobian) functions.
//!
//! Forwards never mutate their inputs and backwards never touch global
//! state, so the same code serves eval-mode inference, tape recording and
//! finite-difference probing. Per-element reductions accumulate in f64; all
//! buffers stay f32.

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor};

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

fn conv_check(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<(usize, usize, usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv input has {} channels, spec expects {}",
            c, spec.in_channels
        )));
    }
    let want = spec.weight_shape();
    if weight.shape() != want {
        return Err(Error::shape(format!(
            "conv weight shape {:?} does not match spec {:?}",
            weight.shape(),
            want
        )));
    }
    match (spec.bias, bias) {
        (true, Some(b)) => {
            if b.shape() != [spec.out_channels] {
                return Err(Error::shape(format!(
                    "conv bias shape {:?}, expected [{}]",
                    b.shape(),
                    spec.out_channels
                )));
            }
        }
        (true, None) => return Err(Error::shape("conv spec has bias but none was passed")),
        (false, Some(_)) => return Err(Error::shape("conv spec has no bias but one was passed")),
        (false, None) => {}
    }
    let (oh, ow) = spec.out_hw(h, w)?;
    Ok((n, c, h, w, oh, ow))
}

/// 2-D cross-correlation over NCHW input with stride, zero padding, dilation
/// and channel groups. Weight layout `[out, in/groups, kh, kw]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = conv_check(input, weight, bias, spec)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let cout = spec.out_channels;
    let cg = c / spec.groups; // input channels per group
    let og = cout / spec.groups; // output channels per group

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; n * cout * oh * ow];

    // Fast path: pointwise conv is a plain matrix product over the pixel axis.
    if kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0 && spec.groups == 1 {
        let hw = h * w;
        let mut acc = vec![0.0f64; hw];
        for b in 0..n {
            let xb = &x[b * c * hw..(b + 1) * c * hw];
            for oc in 0..cout {
                let base = bias.map_or(0.0, |bt| bt.data()[oc] as f64);
                for a in acc.iter_mut() {
                    *a = base;
                }
                for ic in 0..c {
                    let wv = wt[oc * c + ic] as f64;
                    let xrow = &xb[ic * hw..(ic + 1) * hw];
                    for (a, &xv) in acc.iter_mut().zip(xrow) {
                        *a += wv * xv as f64;
                    }
                }
                let orow = &mut out[(b * cout + oc) * hw..(b * cout + oc + 1) * hw];
                for (o, &a) in orow.iter_mut().zip(acc.iter()) {
                    *o = a as f32;
                }
            }
        }
        return Tensor::from_vec(&[n, cout, oh, ow], out);
    }

    for b in 0..n {
        for oc in 0..cout {
            let g = oc / og;
            let c0 = g * cg;
            let bval = bias.map_or(0.0, |bt| bt.data()[oc] as f64);
            let wbase = oc * cg * kh * kw;
            for oy in 0..oh {
                let iy0 = (oy * sh) as isize - ph as isize;
                for ox in 0..ow {
                    let ix0 = (ox * sw) as isize - pw as isize;
                    let mut acc = bval;
                    for ic in 0..cg {
                        let xplane = ((b * c + c0 + ic) * h) as isize;
                        let wrow = wbase + ic * kh * kw;
                        for ky in 0..kh {
                            let iy = iy0 + (ky * dh) as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = ((xplane + iy) * w as isize) as usize;
                            for kx in 0..kw {
                                let ix = ix0 + (kx * dw) as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[wrow + ky * kw + kx] as f64
                                    * x[xrow + ix as usize] as f64;
                            }
                        }
                    }
                    out[((b * cout + oc) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, oh, ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = spec.out_hw(h, w)?;
    if grad_out.shape() != [n, spec.out_channels, oh, ow] {
        return Err(Error::shape(format!(
            "conv grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, spec.out_channels, oh, ow]
        )));
    }
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let cout = spec.out_channels;
    let cg = c / spec.groups;
    let og = cout / spec.groups;

    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();

    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; wt.len()];
    let mut gb = if spec.bias { Some(vec![0.0f64; cout]) } else { None };

    for b in 0..n {
        for oc in 0..cout {
            let g = oc / og;
            let c0 = g * cg;
            let wbase = oc * cg * kh * kw;
            for oy in 0..oh {
                let iy0 = (oy * sh) as isize - ph as isize;
                for ox in 0..ow {
                    let gval = go[((b * cout + oc) * oh + oy) * ow + ox] as f64;
                    if gval == 0.0 {
                        continue;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[oc] += gval;
                    }
                    let ix0 = (ox * sw) as isize - pw as isize;
                    for ic in 0..cg {
                        let xplane = ((b * c + c0 + ic) * h) as isize;
                        let wrow = wbase + ic * kh * kw;
                        for ky in 0..kh {
                            let iy = iy0 + (ky * dh) as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = ((xplane + iy) * w as isize) as usize;
                            for kx in 0..kw {
                                let ix = ix0 + (kx * dw) as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = xrow + ix as usize;
                                let wi = wrow + ky * kw + kx;
                                gx[xi] += wt[wi] as f64 * gval;
                                gw[wi] += x[xi] as f64 * gval;
                            }
                        }
                    }
                }
            }
        }
    }

    let gx = Tensor::from_vec(&[n, c, h, w], gx.iter().map(|&v| v as f32).collect())?;
    let gw = Tensor::from_vec(
        &spec.weight_shape(),
        gw.iter().map(|&v| v as f32).collect(),
    )?;
    let gb = match gb {
        Some(v) => Some(Tensor::from_vec(&[cout], v.iter().map(|&x| x as f32).collect())?),
        None => None,
    };
    Ok((gx, gw, gb))
}

// ---------------------------------------------------------------------------
// batch norm / layer norm
// ---------------------------------------------------------------------------

/// Per-channel batch statistics captured by a training-mode forward.
/// Variance is the biased estimate (divide by the element count).
#[derive(Clone, Debug)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn bn_check(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "batch norm affine shapes {:?}/{:?} do not match {} channels",
            gamma.shape(),
            beta.shape(),
            c
        )));
    }
    Ok((n, c, h, w))
}

/// Training-mode batch norm: normalizes with the batch statistics and
/// returns them so the caller can fold them into running buffers.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<(Tensor, BnStats)> {
    let (n, c, h, w) = bn_check(x, gamma, beta)?;
    let m = (n * h * w) as f64;
    let xd = x.data();
    let hw = h * w;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            let plane = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for &v in plane {
                s += v as f64;
            }
        }
        let mu = s / m;
        let mut sq = 0.0f64;
        for b in 0..n {
            let plane = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for &v in plane {
                let d = v as f64 - mu;
                sq += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    let mut out = vec![0.0f32; xd.len()];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + eps as f64).sqrt();
        let g = gamma.data()[ch] as f64;
        let b0 = beta.data()[ch] as f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let xv = xd[base + i] as f64;
                out[base + i] = (g * (xv - mean[ch]) * inv + b0) as f32;
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, h, w], out)?, BnStats { mean, var }))
}

/// Inference-mode batch norm using fixed running statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let (n, c, h, w) = bn_check(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batch norm running stats length mismatch".to_string()));
    }
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] as f64 + eps as f64).sqrt();
        let scale = gamma.data()[ch] as f64 * inv;
        let shift = beta.data()[ch] as f64 - scale * mean[ch] as f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                out[base + i] = (scale * xd[base + i] as f64 + shift) as f32;
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

/// Backward for training-mode batch norm (gradients flow through the batch
/// statistics).
pub fn batch_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &BnStats,
    eps: f32,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let xd = x.data();
    let go = grad_out.data();
    let mut gx = vec![0.0f32; xd.len()];
    let mut ggamma = vec![0.0f32; c];
    let mut gbeta = vec![0.0f32; c];
    for ch in 0..c {
        let inv = 1.0 / (stats.var[ch] + eps as f64).sqrt();
        let mu = stats.mean[ch];
        let g = gamma.data()[ch] as f64;
        let mut s1 = 0.0f64; // sum of grad
        let mut s2 = 0.0f64; // sum of grad * xhat
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let gv = go[base + i] as f64;
                let xh = (xd[base + i] as f64 - mu) * inv;
                s1 += gv;
                s2 += gv * xh;
            }
        }
        ggamma[ch] = s2 as f32;
        gbeta[ch] = s1 as f32;
        let k1 = s1 / m;
        let k2 = s2 / m;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let gv = go[base + i] as f64;
                let xh = (xd[base + i] as f64 - mu) * inv;
                gx[base + i] = (g * inv * (gv - k1 - xh * k2)) as f32;
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, h, w], gx)?,
        Tensor::from_vec(&[c], ggamma)?,
        Tensor::from_vec(&[c], gbeta)?,
    ))
}

/// Backward for eval-mode batch norm (statistics are constants).
pub fn batch_norm_eval_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f32],
    var: &[f32],
    eps: f32,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let xd = x.data();
    let go = grad_out.data();
    let mut gx = vec![0.0f32; xd.len()];
    let mut ggamma = vec![0.0f32; c];
    let mut gbeta = vec![0.0f32; c];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] as f64 + eps as f64).sqrt();
        let g = gamma.data()[ch] as f64;
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let gv = go[base + i] as f64;
                let xh = (xd[base + i] as f64 - mean[ch] as f64) * inv;
                s1 += gv;
                s2 += gv * xh;
                gx[base + i] = (g * inv * gv) as f32;
            }
        }
        ggamma[ch] = s2 as f32;
        gbeta[ch] = s1 as f32;
    }
    Ok((
        Tensor::from_vec(&[n, c, h, w], gx)?,
        Tensor::from_vec(&[c], ggamma)?,
        Tensor::from_vec(&[c], gbeta)?,
    ))
}

/// Per-row statistics captured by a layer-norm forward.
#[derive(Clone, Debug)]
pub struct LnStats {
    pub mean: Vec<f64>,
    pub invstd: Vec<f64>,
}

/// Layer norm over the last axis of a `[rows, features]` matrix.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<(Tensor, LnStats)> {
    let (t, c) = x.dims2()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "layer norm affine shapes {:?}/{:?} do not match {} features",
            gamma.shape(),
            beta.shape(),
            c
        )));
    }
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    let mut mean = vec![0.0f64; t];
    let mut invstd = vec![0.0f64; t];
    for r in 0..t {
        let row = &xd[r * c..(r + 1) * c];
        let mu = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v as f64 - mu) * (v as f64 - mu)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        mean[r] = mu;
        invstd[r] = inv;
        for i in 0..c {
            let xh = (row[i] as f64 - mu) * inv;
            out[r * c + i] = (gamma.data()[i] as f64 * xh + beta.data()[i] as f64) as f32;
        }
    }
    Ok((Tensor::from_vec(&[t, c], out)?, LnStats { mean, invstd }))
}

pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &LnStats,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (t, c) = x.dims2()?;
    let xd = x.data();
    let go = grad_out.data();
    let mut gx = vec![0.0f32; xd.len()];
    let mut ggamma = vec![0.0f64; c];
    let mut gbeta = vec![0.0f64; c];
    for r in 0..t {
        let mu = stats.mean[r];
        let inv = stats.invstd[r];
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for i in 0..c {
            let gg = go[r * c + i] as f64 * gamma.data()[i] as f64;
            let xh = (xd[r * c + i] as f64 - mu) * inv;
            s1 += gg;
            s2 += gg * xh;
            ggamma[i] += go[r * c + i] as f64 * xh;
            gbeta[i] += go[r * c + i] as f64;
        }
        let k1 = s1 / c as f64;
        let k2 = s2 / c as f64;
        for i in 0..c {
            let gg = go[r * c + i] as f64 * gamma.data()[i] as f64;
            let xh = (xd[r * c + i] as f64 - mu) * inv;
            gx[r * c + i] = (inv * (gg - k1 - xh * k2)) as f32;
        }
    }
    Ok((
        Tensor::from_vec(&[t, c], gx)?,
        Tensor::from_vec(&[c], ggamma.iter().map(|&v| v as f32).collect())?,
        Tensor::from_vec(&[c], gbeta.iter().map(|&v| v as f32).collect())?,
    ))
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect()).expect("same shape")
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let g: Vec<f32> = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), g).expect("same shape")
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let d = x
        .data()
        .iter()
        .map(|&v| (1.0 / (1.0 + (-v as f64).exp())) as f32)
        .collect();
    Tensor::from_vec(x.shape(), d).expect("same shape")
}

/// Takes the forward output `y`: dy/dx = y * (1 - y).
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let g: Vec<f32> = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&yv, &gv)| {
            let y64 = yv as f64;
            (gv as f64 * y64 * (1.0 - y64)) as f32
        })
        .collect();
    Tensor::from_vec(y.shape(), g).expect("same shape")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let d = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), d)
}

/// Elementwise product where every axis of `gate` is either equal to the
/// corresponding axis of `x` or 1 (broadcast). Both tensors must be rank 4.
pub fn mul_broadcast(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (gn, gc, gh, gw) = gate.dims4()?;
    for (xa, ga, name) in [(n, gn, "n"), (c, gc, "c"), (h, gh, "h"), (w, gw, "w")] {
        if ga != xa && ga != 1 {
            return Err(Error::shape(format!(
                "broadcast mul: gate axis {} is {}, expected {} or 1",
                name, ga, xa
            )));
        }
    }
    let xd = x.data();
    let gd = gate.data();
    let mut out = vec![0.0f32; xd.len()];
    let (sn, sc, sh, sw) = bcast_strides(gn, gc, gh, gw);
    let mut i = 0;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let gi = b.min(gn - 1) * sn + ch.min(gc - 1) * sc + y.min(gh - 1) * sh + xx.min(gw - 1) * sw;
                    out[i] = xd[i] * gd[gi];
                    i += 1;
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

fn bcast_strides(n: usize, c: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let sw = if w == 1 { 0 } else { 1 };
    let sh = if h == 1 { 0 } else { w };
    let sc = if c == 1 { 0 } else { h * w };
    let sn = if n == 1 { 0 } else { c * h * w };
    (sn, sc, sh, sw)
}

/// Gradients of [`mul_broadcast`]: the gate gradient sums over broadcast axes.
pub fn mul_broadcast_backward(x: &Tensor, gate: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let (gn, gc, gh, gw) = gate.dims4()?;
    let xd = x.data();
    let gd = gate.data();
    let go = grad_out.data();
    let mut gx = vec![0.0f32; xd.len()];
    let mut ggate = vec![0.0f64; gd.len()];
    let (sn, sc, sh, sw) = bcast_strides(gn, gc, gh, gw);
    let mut i = 0;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let gi = b.min(gn - 1) * sn + ch.min(gc - 1) * sc + y.min(gh - 1) * sh + xx.min(gw - 1) * sw;
                    gx[i] = go[i] * gd[gi];
                    ggate[gi] += go[i] as f64 * xd[i] as f64;
                    i += 1;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, h, w], gx)?,
        Tensor::from_vec(gate.shape(), ggate.iter().map(|&v| v as f32).collect())?,
    ))
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let rank = x.shape().len();
    if axis >= rank {
        return Err(Error::shape(format!("softmax axis {} out of range for rank {}", axis, rank)));
    }
    let len = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = f32::NEG_INFINITY;
            for k in 0..len {
                mx = mx.max(xd[base + k * inner]);
            }
            let mut sum = 0.0f64;
            for k in 0..len {
                sum += ((xd[base + k * inner] - mx) as f64).exp();
            }
            for k in 0..len {
                out[base + k * inner] = (((xd[base + k * inner] - mx) as f64).exp() / sum) as f32;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Takes the forward output `y`: dz = y * (g - sum(g * y)) per lane.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    let len = y.shape()[axis];
    let inner: usize = y.shape()[axis + 1..].iter().product();
    let outer: usize = y.shape()[..axis].iter().product();
    let yd = y.data();
    let go = grad_out.data();
    let mut gx = vec![0.0f32; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0f64;
            for k in 0..len {
                dot += go[base + k * inner] as f64 * yd[base + k * inner] as f64;
            }
            for k in 0..len {
                let idx = base + k * inner;
                gx[idx] = (yd[idx] as f64 * (go[idx] as f64 - dot)) as f32;
            }
        }
    }
    Tensor::from_vec(y.shape(), gx)
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

fn pool_check(x: &Tensor, window: (usize, usize)) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    let (kh, kw) = window;
    if kh == 0 || kw == 0 {
        return Err(Error::shape("pool window must be >= 1".to_string()));
    }
    if h % kh != 0 || w % kw != 0 {
        return Err(Error::shape(format!(
            "pool window ({}, {}) must divide spatial extents ({}, {})",
            kh, kw, h, w
        )));
    }
    Ok((n, c, h, w))
}

/// Non-overlapping average pool; the window must divide the extents.
pub fn avg_pool2d(x: &Tensor, window: (usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = pool_check(x, window)?;
    let (kh, kw) = window;
    let (oh, ow) = (h / kh, w / kw);
    let xd = x.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    let inv = 1.0 / (kh * kw) as f64;
    for p in 0..n * c {
        let xp = &xd[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for ky in 0..kh {
                    for kx in 0..kw {
                        acc += xp[(oy * kh + ky) * w + ox * kw + kx] as f64;
                    }
                }
                out[(p * oh + oy) * ow + ox] = (acc * inv) as f32;
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn avg_pool2d_backward(in_shape: &[usize], window: (usize, usize), grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (kh, kw) = window;
    let (oh, ow) = (h / kh, w / kw);
    let go = grad_out.data();
    let inv = 1.0 / (kh * kw) as f32;
    let mut gx = vec![0.0f32; n * c * h * w];
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = go[(p * oh + oy) * ow + ox] * inv;
                for ky in 0..kh {
                    for kx in 0..kw {
                        gx[(p * h + oy * kh + ky) * w + ox * kw + kx] = g;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], gx)
}

/// Non-overlapping max pool. Returns the flat input index of each chosen
/// maximum (first maximum in scan order wins) for the backward pass.
pub fn max_pool2d(x: &Tensor, window: (usize, usize)) -> Result<(Tensor, Vec<u32>)> {
    let (n, c, h, w) = pool_check(x, window)?;
    let (kh, kw) = window;
    let (oh, ow) = (h / kh, w / kw);
    let xd = x.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    let mut arg = vec![0u32; out.len()];
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut bi = 0usize;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let idx = base + (oy * kh + ky) * w + ox * kw + kx;
                        if xd[idx] > best {
                            best = xd[idx];
                            bi = idx;
                        }
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                out[o] = best;
                arg[o] = bi as u32;
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, arg))
}

pub fn max_pool2d_backward(in_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    let numel: usize = in_shape.iter().product();
    let mut gx = vec![0.0f32; numel];
    for (i, &g) in grad_out.data().iter().enumerate() {
        gx[argmax[i] as usize] += g;
    }
    Tensor::from_vec(in_shape, gx)
}

/// Mean over each spatial plane: output is N x C x 1 x 1.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let xd = x.data();
    let mut out = vec![0.0f32; n * c];
    let inv = 1.0 / (h * w) as f64;
    for p in 0..n * c {
        let mut acc = 0.0f64;
        for &v in &xd[p * h * w..(p + 1) * h * w] {
            acc += v as f64;
        }
        out[p] = (acc * inv) as f32;
    }
    Tensor::from_vec(&[n, c, 1, 1], out)
}

pub fn global_avg_pool_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let inv = 1.0 / (h * w) as f32;
    let go = grad_out.data();
    let mut gx = vec![0.0f32; in_shape.iter().product()];
    for p in 0..go.len() {
        let g = go[p] * inv;
        for v in &mut gx[p * h * w..(p + 1) * h * w] {
            *v = g;
        }
    }
    Tensor::from_vec(in_shape, gx)
}

/// Mean over the channel axis: output is N x 1 x H x W.
pub fn channel_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let xd = x.data();
    let hw = h * w;
    let mut out = vec![0.0f32; n * hw];
    let inv = 1.0 / c as f64;
    for b in 0..n {
        for i in 0..hw {
            let mut acc = 0.0f64;
            for ch in 0..c {
                acc += xd[(b * c + ch) * hw + i] as f64;
            }
            out[b * hw + i] = (acc * inv) as f32;
        }
    }
    Tensor::from_vec(&[n, 1, h, w], out)
}

pub fn channel_avg_pool_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let hw = h * w;
    let inv = 1.0 / c as f32;
    let go = grad_out.data();
    let mut gx = vec![0.0f32; n * c * hw];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..hw {
                gx[(b * c + ch) * hw + i] = go[b * hw + i] * inv;
            }
        }
    }
    Tensor::from_vec(in_shape, gx)
}

/// Max over the channel axis: output is N x 1 x H x W plus winning channel.
pub fn channel_max_pool(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    let xd = x.data();
    let hw = h * w;
    let mut out = vec![0.0f32; n * hw];
    let mut arg = vec![0u32; n * hw];
    for b in 0..n {
        for i in 0..hw {
            let mut best = f32::NEG_INFINITY;
            let mut bc = 0usize;
            for ch in 0..c {
                let v = xd[(b * c + ch) * hw + i];
                if v > best {
                    best = v;
                    bc = ch;
                }
            }
            out[b * hw + i] = best;
            arg[b * hw + i] = bc as u32;
        }
    }
    Ok((Tensor::from_vec(&[n, 1, h, w], out)?, arg))
}

pub fn channel_max_pool_backward(in_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let hw = h * w;
    let go = grad_out.data();
    let mut gx = vec![0.0f32; n * c * hw];
    for b in 0..n {
        for i in 0..hw {
            let ch = argmax[b * hw + i] as usize;
            gx[(b * c + ch) * hw + i] = go[b * hw + i];
        }
    }
    Tensor::from_vec(in_shape, gx)
}

// ---------------------------------------------------------------------------
// channel shuffle
// ---------------------------------------------------------------------------

/// Interleaves channel groups: source channel `c` lands at
/// `(c % groups) * (C / groups) + c / groups`. Shuffling with `groups` and
/// then with `C / groups` restores the original order.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(format!(
            "channel shuffle groups {} must divide {} channels",
            groups, c
        )));
    }
    let hw = h * w;
    let per = c / groups;
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let dst = (ch % groups) * per + ch / groups;
            let src = (b * c + ch) * hw;
            let dst = (b * c + dst) * hw;
            out[dst..dst + hw].copy_from_slice(&xd[src..src + hw]);
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

// ---------------------------------------------------------------------------
// bilinear resize
// ---------------------------------------------------------------------------

/// Source coordinate and tap weights for one output coordinate under the
/// half-pixel (align_corners = false) convention, with edge clamping.
fn bilinear_taps(out_i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = (out_i as f64 + 0.5) * scale - 0.5;
    let src = src.max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let frac = src - i0 as f64;
    (i0, i1, frac.min(1.0))
}

/// Bilinear interpolation to a new spatial size (align_corners = false).
/// Identity when the target extents equal the input extents.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target extents must be >= 1".to_string()));
    }
    let xd = x.data();
    let mut out = vec![0.0f32; n * c * out_h * out_w];
    // Precompute per-axis taps once; planes reuse them.
    let ytaps: Vec<(usize, usize, f64)> = (0..out_h).map(|i| bilinear_taps(i, h, out_h)).collect();
    let xtaps: Vec<(usize, usize, f64)> = (0..out_w).map(|i| bilinear_taps(i, w, out_w)).collect();
    for p in 0..n * c {
        let xp = &xd[p * h * w..(p + 1) * h * w];
        let op = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = ytaps[oy];
            for ox in 0..out_w {
                let (x0, x1, fx) = xtaps[ox];
                let v00 = xp[y0 * w + x0] as f64;
                let v01 = xp[y0 * w + x1] as f64;
                let v10 = xp[y1 * w + x0] as f64;
                let v11 = xp[y1 * w + x1] as f64;
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                op[oy * out_w + ox] = (top + (bot - top) * fy) as f32;
            }
        }
    }
    Tensor::from_vec(&[n, c, out_h, out_w], out)
}

pub fn resize_bilinear_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, _, oh, ow) = grad_out.dims4()?;
    let go = grad_out.data();
    let ytaps: Vec<(usize, usize, f64)> = (0..oh).map(|i| bilinear_taps(i, h, oh)).collect();
    let xtaps: Vec<(usize, usize, f64)> = (0..ow).map(|i| bilinear_taps(i, w, ow)).collect();
    let mut gx = vec![0.0f64; n * c * h * w];
    for p in 0..n * c {
        let gp = &go[p * oh * ow..(p + 1) * oh * ow];
        let xp = &mut gx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = ytaps[oy];
            for ox in 0..ow {
                let (x0, x1, fx) = xtaps[ox];
                let g = gp[oy * ow + ox] as f64;
                xp[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                xp[y0 * w + x1] += g * (1.0 - fy) * fx;
                xp[y1 * w + x0] += g * fy * (1.0 - fx);
                xp[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    Tensor::from_vec(in_shape, gx.iter().map(|&v| v as f32).collect())
}

// ---------------------------------------------------------------------------
// linear / matmul on token matrices
// ---------------------------------------------------------------------------

/// Fully connected layer on a `[rows, in]` matrix; weight is `[out, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (t, cin) = x.dims2()?;
    let (cout, win) = weight.dims2()?;
    if win != cin {
        return Err(Error::shape(format!(
            "linear: input features {} do not match weight {:?}",
            cin,
            weight.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(format!(
                "linear bias shape {:?}, expected [{}]",
                b.shape(),
                cout
            )));
        }
    }
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0f32; t * cout];
    for r in 0..t {
        let xrow = &xd[r * cin..(r + 1) * cin];
        for o in 0..cout {
            let wrow = &wd[o * cin..(o + 1) * cin];
            let mut acc = bias.map_or(0.0f64, |b| b.data()[o] as f64);
            for i in 0..cin {
                acc += xrow[i] as f64 * wrow[i] as f64;
            }
            out[r * cout + o] = acc as f32;
        }
    }
    Tensor::from_vec(&[t, cout], out)
}

pub fn linear_backward(
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let (t, cin) = x.dims2()?;
    let (cout, _) = weight.dims2()?;
    let xd = x.data();
    let wd = weight.data();
    let go = grad_out.data();
    let mut gx = vec![0.0f64; t * cin];
    let mut gw = vec![0.0f64; cout * cin];
    let mut gb = vec![0.0f64; cout];
    for r in 0..t {
        let xrow = &xd[r * cin..(r + 1) * cin];
        let gxrow = &mut gx[r * cin..(r + 1) * cin];
        for o in 0..cout {
            let g = go[r * cout + o] as f64;
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let wrow = &wd[o * cin..(o + 1) * cin];
            let gwrow = &mut gw[o * cin..(o + 1) * cin];
            for i in 0..cin {
                gxrow[i] += g * wrow[i] as f64;
                gwrow[i] += g * xrow[i] as f64;
            }
        }
    }
    Ok((
        Tensor::from_vec(&[t, cin], gx.iter().map(|&v| v as f32).collect())?,
        Tensor::from_vec(&[cout, cin], gw.iter().map(|&v| v as f32).collect())?,
        if has_bias {
            Some(Tensor::from_vec(&[cout], gb.iter().map(|&v| v as f32).collect())?)
        } else {
            None
        },
    ))
}

// ---------------------------------------------------------------------------
// segmented multi-head attention
// ---------------------------------------------------------------------------

fn attention_check(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, segments: usize) -> Result<(usize, usize, usize, usize)> {
    let (t, c) = q.dims2()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape(format!(
            "attention q/k/v shapes differ: {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::shape(format!("attention heads {} must divide {} features", heads, c)));
    }
    if segments == 0 || t % segments != 0 {
        return Err(Error::shape(format!(
            "attention segments {} must divide {} tokens",
            segments, t
        )));
    }
    Ok((t, c, c / heads, t / segments))
}

/// Scaled dot-product attention applied independently per token segment and
/// per head: `softmax(Q K^T / sqrt(d)) V` on `[tokens, features]` matrices,
/// where each of the `segments` contiguous token ranges attends only to
/// itself.
pub fn segmented_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, segments: usize) -> Result<Tensor> {
    segmented_attention_impl(q, k, v, heads, segments, None)
}

/// Same as [`segmented_attention`] but also returns the attention weights as
/// a `[segments * heads, L, L]` tensor (row-stochastic per construction).
pub fn segmented_attention_with_weights(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    segments: usize,
) -> Result<(Tensor, Tensor)> {
    let (t, _, _, l) = attention_check(q, k, v, heads, segments)?;
    let _ = t;
    let mut weights = vec![0.0f32; segments * heads * l * l];
    let out = segmented_attention_impl(q, k, v, heads, segments, Some(&mut weights))?;
    Ok((out, Tensor::from_vec(&[segments * heads, l, l], weights)?))
}

fn segmented_attention_impl(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    segments: usize,
    mut weights_out: Option<&mut Vec<f32>>,
) -> Result<Tensor> {
    let (t, c, d, l) = attention_check(q, k, v, heads, segments)?;
    let scale = 1.0 / (d as f64).sqrt();
    let qd = q.data();
    let kd = k.data();
    let vd = v.data();
    let mut out = vec![0.0f32; t * c];
    let mut scores = vec![0.0f64; l * l];
    for seg in 0..segments {
        let t0 = seg * l;
        for hh in 0..heads {
            let c0 = hh * d;
            // scores = scale * Q K^T
            for i in 0..l {
                let qrow = &qd[(t0 + i) * c + c0..(t0 + i) * c + c0 + d];
                for j in 0..l {
                    let krow = &kd[(t0 + j) * c + c0..(t0 + j) * c + c0 + d];
                    let mut acc = 0.0f64;
                    for e in 0..d {
                        acc += qrow[e] as f64 * krow[e] as f64;
                    }
                    scores[i * l + j] = acc * scale;
                }
            }
            // softmax rows, then weights * V
            for i in 0..l {
                let row = &mut scores[i * l..(i + 1) * l];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0f64;
                for s in row.iter_mut() {
                    *s = (*s - mx).exp();
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
                if let Some(wo) = weights_out.as_deref_mut() {
                    let base = (seg * heads + hh) * l * l + i * l;
                    for j in 0..l {
                        wo[base + j] = row[j] as f32;
                    }
                }
                let orow = &mut out[(t0 + i) * c + c0..(t0 + i) * c + c0 + d];
                let mut acc = vec![0.0f64; d];
                for j in 0..l {
                    let w = row[j];
                    let vrow = &vd[(t0 + j) * c + c0..(t0 + j) * c + c0 + d];
                    for e in 0..d {
                        acc[e] += w * vrow[e] as f64;
                    }
                }
                for e in 0..d {
                    orow[e] = acc[e] as f32;
                }
            }
        }
    }
    Tensor::from_vec(&[t, c], out)
}

/// Gradients of [`segmented_attention`]; recomputes the softmax weights.
pub fn segmented_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    segments: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (t, c, d, l) = attention_check(q, k, v, heads, segments)?;
    let scale = 1.0 / (d as f64).sqrt();
    let qd = q.data();
    let kd = k.data();
    let vd = v.data();
    let go = grad_out.data();
    let mut gq = vec![0.0f64; t * c];
    let mut gk = vec![0.0f64; t * c];
    let mut gv = vec![0.0f64; t * c];
    let mut s = vec![0.0f64; l * l];
    let mut ds = vec![0.0f64; l * l];
    for seg in 0..segments {
        let t0 = seg * l;
        for hh in 0..heads {
            let c0 = hh * d;
            // recompute softmax(scale * Q K^T)
            for i in 0..l {
                let qrow = &qd[(t0 + i) * c + c0..(t0 + i) * c + c0 + d];
                for j in 0..l {
                    let krow = &kd[(t0 + j) * c + c0..(t0 + j) * c + c0 + d];
                    let mut acc = 0.0f64;
                    for e in 0..d {
                        acc += qrow[e] as f64 * krow[e] as f64;
                    }
                    s[i * l + j] = acc * scale;
                }
                let row = &mut s[i * l..(i + 1) * l];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0f64;
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            // dV = S^T gO ; dS = gO V^T ; dZ = softmax vjp ; dQ, dK
            for i in 0..l {
                let gorow = &go[(t0 + i) * c + c0..(t0 + i) * c + c0 + d];
                for j in 0..l {
                    let vrow = &vd[(t0 + j) * c + c0..(t0 + j) * c + c0 + d];
                    let w = s[i * l + j];
                    let gvrow = &mut gv[(t0 + j) * c + c0..(t0 + j) * c + c0 + d];
                    let mut dot = 0.0f64;
                    for e in 0..d {
                        gvrow[e] += w * gorow[e] as f64;
                        dot += gorow[e] as f64 * vrow[e] as f64;
                    }
                    ds[i * l + j] = dot;
                }
            }
            for i in 0..l {
                let mut dot = 0.0f64;
                for j in 0..l {
                    dot += ds[i * l + j] * s[i * l + j];
                }
                for j in 0..l {
                    // dz, folded with the scale factor of the score matrix
                    let dz = s[i * l + j] * (ds[i * l + j] - dot) * scale;
                    if dz == 0.0 {
                        continue;
                    }
                    let krow = &kd[(t0 + j) * c + c0..(t0 + j) * c + c0 + d];
                    let qrow = &qd[(t0 + i) * c + c0..(t0 + i) * c + c0 + d];
                    let gqrow = &mut gq[(t0 + i) * c + c0..(t0 + i) * c + c0 + d];
                    for e in 0..d {
                        gqrow[e] += dz * krow[e] as f64;
                    }
                    let gkrow = &mut gk[(t0 + j) * c + c0..(t0 + j) * c + c0 + d];
                    for e in 0..d {
                        gkrow[e] += dz * qrow[e] as f64;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[t, c], gq.iter().map(|&v| v as f32).collect())?,
        Tensor::from_vec(&[t, c], gk.iter().map(|&v| v as f32).collect())?,
        Tensor::from_vec(&[t, c], gv.iter().map(|&v| v as f32).collect())?,
    ))
}

// ---------------------------------------------------------------------------
// channel 1-D convolution (attention gate over pooled channels)
// ---------------------------------------------------------------------------

/// 1-D convolution across the channel axis of an N x C x 1 x 1 tensor with a
/// single odd-width kernel, zero padded so the extent is preserved.
pub fn channel_conv1d(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h != 1 || w != 1 {
        return Err(Error::shape(format!(
            "channel conv1d expects N x C x 1 x 1 input, got {:?}",
            x.shape()
        )));
    }
    let klen = match weight.shape() {
        &[k] => k,
        s => return Err(Error::shape(format!("channel conv1d weight must be rank 1, got {:?}", s))),
    };
    if klen % 2 == 0 || klen == 0 {
        return Err(Error::shape(format!("channel conv1d kernel width {} must be odd", klen)));
    }
    let off = (klen - 1) / 2;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0f32; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0f64;
            for j in 0..klen {
                let src = ch as isize + j as isize - off as isize;
                if src >= 0 && (src as usize) < c {
                    acc += wd[j] as f64 * xd[b * c + src as usize] as f64;
                }
            }
            out[b * c + ch] = acc as f32;
        }
    }
    Tensor::from_vec(&[n, c, 1, 1], out)
}

pub fn channel_conv1d_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c, _, _) = x.dims4()?;
    let klen = weight.shape()[0];
    let off = (klen - 1) / 2;
    let xd = x.data();
    let wd = weight.data();
    let go = grad_out.data();
    let mut gx = vec![0.0f64; n * c];
    let mut gw = vec![0.0f64; klen];
    for b in 0..n {
        for ch in 0..c {
            let g = go[b * c + ch] as f64;
            if g == 0.0 {
                continue;
            }
            for j in 0..klen {
                let src = ch as isize + j as isize - off as isize;
                if src >= 0 && (src as usize) < c {
                    gw[j] += g * xd[b * c + src as usize] as f64;
                    gx[b * c + src as usize] += g * wd[j] as f64;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, 1, 1], gx.iter().map(|&v| v as f32).collect())?,
        Tensor::from_vec(&[klen], gw.iter().map(|&v| v as f32).collect())?,
    ))
}

// ---------------------------------------------------------------------------
// concat / reshape / reductions
// ---------------------------------------------------------------------------

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::shape("concat needs at least one input".to_string()));
    }
    let (n, _, h, w) = parts[0].dims4()?;
    let mut ctotal = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if pn != n || ph != h || pw != w {
            return Err(Error::shape(format!(
                "concat shape mismatch: {:?} vs {:?}",
                p.shape(),
                parts[0].shape()
            )));
        }
        ctotal += pc;
    }
    let hw = h * w;
    let mut out = vec![0.0f32; n * ctotal * hw];
    for b in 0..n {
        let mut cofs = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = &p.data()[b * pc * hw..(b + 1) * pc * hw];
            let dst = (b * ctotal + cofs) * hw;
            out[dst..dst + pc * hw].copy_from_slice(src);
            cofs += pc;
        }
    }
    Tensor::from_vec(&[n, ctotal, h, w], out)
}

/// Splits a gradient of the concatenated tensor back into per-part gradients.
pub fn concat_channels_backward(part_channels: &[usize], grad_out: &Tensor) -> Result<Vec<Tensor>> {
    let (n, ctotal, h, w) = grad_out.dims4()?;
    if part_channels.iter().sum::<usize>() != ctotal {
        return Err(Error::shape("concat backward channel split mismatch".to_string()));
    }
    let hw = h * w;
    let go = grad_out.data();
    let mut grads = Vec::with_capacity(part_channels.len());
    let mut cofs = 0;
    for &pc in part_channels {
        let mut g = vec![0.0f32; n * pc * hw];
        for b in 0..n {
            let src = (b * ctotal + cofs) * hw;
            g[b * pc * hw..(b + 1) * pc * hw].copy_from_slice(&go[src..src + pc * hw]);
        }
        grads.push(Tensor::from_vec(&[n, pc, h, w], g)?);
        cofs += pc;
    }
    Ok(grads)
}

/// Flattens N x C x H x W into a token matrix `[N*H*W, C]`, raster order per
/// image, so contiguous token ranges never span two batch elements.
pub fn nchw_to_tokens(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let plane = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (i, &v) in plane.iter().enumerate() {
                out[(b * hw + i) * c + ch] = v;
            }
        }
    }
    Tensor::from_vec(&[n * hw, c], out)
}

/// Inverse of [`nchw_to_tokens`].
pub fn tokens_to_nchw(t: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let (rows, tc) = t.dims2()?;
    if rows != n * h * w || tc != c {
        return Err(Error::shape(format!(
            "token matrix {:?} does not reshape to [{}, {}, {}, {}]",
            t.shape(),
            n,
            c,
            h,
            w
        )));
    }
    let hw = h * w;
    let td = t.data();
    let mut out = vec![0.0f32; td.len()];
    for b in 0..n {
        for ch in 0..c {
            let plane = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (i, slot) in plane.iter_mut().enumerate() {
                *slot = td[(b * hw + i) * c + ch];
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

/// Full reduction to a single-element tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    Tensor::scalar(s as f32)
}

/// Dot product against a fixed coefficient vector, reduced in f64. Used as a
/// scalar readout when probing gradients.
pub fn weighted_sum_f64(x: &Tensor, coeffs: &[f32]) -> f64 {
    debug_assert_eq!(x.numel(), coeffs.len());
    x.data()
        .iter()
        .zip(coeffs)
        .map(|(&v, &c)| v as f64 * c as f64)
        .sum()
}

// ---------------------------------------------------------------------------
// classification loss
// ---------------------------------------------------------------------------

/// Result of a softmax cross-entropy forward: scalar loss, the full gradient
/// with respect to the logits, and how many pixels actually contributed.
pub struct CeOut {
    pub loss: f32,
    pub grad: Tensor,
    pub valid: usize,
}

/// Softmax cross-entropy over N x K x H x W logits against per-pixel labels
/// in raster order. Pixels labeled `ignore` contribute nothing; the loss is
/// the (optionally class-weighted) negative log-likelihood averaged over the
/// number of non-ignored pixels. With zero valid pixels the loss and
/// gradient are zero.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[u32],
    class_weights: Option<&[f32]>,
    ignore: u32,
) -> Result<CeOut> {
    let (n, k, h, w) = logits.dims4()?;
    let hw = h * w;
    if labels.len() != n * hw {
        return Err(Error::shape(format!(
            "{} labels for {} logit pixels",
            labels.len(),
            n * hw
        )));
    }
    if let Some(cw) = class_weights {
        if cw.len() != k {
            return Err(Error::shape(format!(
                "{} class weights for {} classes",
                cw.len(),
                k
            )));
        }
    }
    let xd = logits.data();
    let mut grad = vec![0.0f32; xd.len()];
    let mut total = 0.0f64;
    let mut valid = 0usize;
    let mut probs = vec![0.0f64; k];
    for b in 0..n {
        for i in 0..hw {
            let y = labels[b * hw + i];
            if y == ignore {
                continue;
            }
            if y as usize >= k {
                return Err(Error::data(format!(
                    "label {} out of range for {} classes",
                    y, k
                )));
            }
            valid += 1;
            let wy = class_weights.map_or(1.0f64, |cw| cw[y as usize] as f64);
            let mut mx = f64::NEG_INFINITY;
            for c in 0..k {
                mx = mx.max(xd[(b * k + c) * hw + i] as f64);
            }
            let mut sum = 0.0f64;
            for c in 0..k {
                let e = (xd[(b * k + c) * hw + i] as f64 - mx).exp();
                probs[c] = e;
                sum += e;
            }
            let lse = mx + sum.ln();
            let zy = xd[(b * k + y as usize) * hw + i] as f64;
            total += wy * (lse - zy);
            for c in 0..k {
                let p = probs[c] / sum;
                let onehot = if c == y as usize { 1.0 } else { 0.0 };
                grad[(b * k + c) * hw + i] = (wy * (p - onehot)) as f32;
            }
        }
    }
    let loss = if valid == 0 { 0.0 } else { total / valid as f64 };
    if valid > 0 {
        let inv = 1.0 / valid as f32;
        for g in grad.iter_mut() {
            *g *= inv;
        }
    } else {
        grad.iter_mut().for_each(|g| *g = 0.0);
    }
    Ok(CeOut {
        loss: loss as f32,
        grad: Tensor::from_vec(&[n, k, h, w], grad)?,
        valid,
    })
}

/// Per-pixel argmax over the class axis of N x K x H x W logits. Ties pick
/// the lowest class index.
pub fn argmax_channels(logits: &Tensor) -> Result<(usize, usize, usize, Vec<u32>)> {
    let (n, k, h, w) = logits.dims4()?;
    let hw = h * w;
    let xd = logits.data();
    let mut out = vec![0u32; n * hw];
    for b in 0..n {
        for i in 0..hw {
            let mut best = f32::NEG_INFINITY;
            let mut bc = 0u32;
            for c in 0..k {
                let v = xd[(b * k + c) * hw + i];
                if v > best {
                    best = v;
                    bc = c as u32;
                }
            }
            out[b * hw + i] = bc;
        }
    }
    Ok((n, h, w, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(n: usize, c: usize, h: usize, w: usize, f: impl FnMut(usize) -> f32) -> Tensor {
        Tensor::from_fn(&[n, c, h, w], f)
    }

    #[test]
    fn conv_ones_kernel_padded_ramp() {
        // 4x4 ramp 0..15, 3x3 ones kernel, pad 1: each output is the sum of
        // the 3x3 neighborhood restricted to the grid.
        let x = t4(1, 1, 4, 4, |i| i as f32);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let spec = ConvSpec::new(1, 1, (3, 3)).padding((1, 1));
        let y = conv2d(&x, &w, None, &spec).unwrap();
        let expect = [
            10.0, 18.0, 24.0, 18.0, 27.0, 45.0, 54.0, 39.0, 51.0, 81.0, 90.0, 63.0, 42.0, 66.0,
            72.0, 50.0,
        ];
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        for (got, want) in y.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-5, "got {} want {}", got, want);
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t4(1, 1, 5, 5, |i| (i as f32).sin());
        let w = Tensor::ones(&[1, 1, 1, 1]);
        let spec = ConvSpec::new(1, 1, (1, 1));
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_stride_dilation_groups_hand_case() {
        // 1x2x4x4, groups=2, 2x2 kernel, stride 2: each group is independent.
        let x = t4(1, 2, 4, 4, |i| i as f32);
        // group 0 kernel all ones; group 1 kernel all twos
        let mut wd = vec![1.0f32; 4];
        wd.extend(vec![2.0f32; 4]);
        let w = Tensor::from_vec(&[2, 1, 2, 2], wd).unwrap();
        let spec = ConvSpec::new(2, 2, (2, 2)).stride((2, 2)).groups(2);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        // plane 0 windows: (0+1+4+5)=10, (2+3+6+7)=18, (8+9+12+13)=42, (10+11+14+15)=50
        // plane 1 windows doubled: base values are 16..31
        assert_eq!(y.shape(), [1, 2, 2, 2]);
        assert_eq!(&y.data()[..4], &[10.0, 18.0, 42.0, 50.0]);
        assert_eq!(&y.data()[4..], &[2.0 * 74.0, 2.0 * 82.0, 2.0 * 106.0, 2.0 * 114.0]);
    }

    #[test]
    fn conv_bias_reaches_every_output() {
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[2, 1, 1, 1]);
        let b = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let spec = ConvSpec::new(1, 2, (1, 1)).bias(true);
        let y = conv2d(&x, &w, Some(&b), &spec).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
        assert!(y.data()[9..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn batch_norm_train_normalizes() {
        let x = t4(2, 3, 4, 4, |i| (i as f32 * 0.37).sin() * 3.0 + 1.0);
        let gamma = Tensor::ones(&[3]);
        let beta = Tensor::zeros(&[3]);
        let (y, stats) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        // per-channel mean ~0, biased variance ~1 (up to the eps in the denom)
        for c in 0..3 {
            let mut s = 0.0f64;
            let mut sq = 0.0f64;
            let hw = 16;
            for n in 0..2 {
                for i in 0..hw {
                    let v = y.data()[(n * 3 + c) * hw + i] as f64;
                    s += v;
                    sq += v * v;
                }
            }
            let m = 32.0;
            let mean = s / m;
            let var = sq / m - mean * mean;
            assert!(mean.abs() < 1e-6, "channel {} mean {}", c, mean);
            assert!((var - 1.0).abs() < 1e-4, "channel {} var {}", c, var);
            assert!(stats.var[c] > 0.0);
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let x = t4(1, 1, 2, 2, |i| i as f32);
        let gamma = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let beta = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let y = batch_norm_eval(&x, &gamma, &beta, &[1.0], &[4.0], 0.0).unwrap();
        // (x - 1) / 2 * 2 + 1 = x
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_known_values() {
        let x = Tensor::from_vec(&[3], vec![0.0, 2.0, -2.0]).unwrap();
        let y = sigmoid(&x);
        assert!((y.data()[0] - 0.5).abs() < 1e-7);
        assert!((y.data()[1] - 0.880797).abs() < 1e-6);
        assert!((y.data()[2] - 0.119203).abs() < 1e-6);
    }

    #[test]
    fn softmax_uniform_and_shift_invariance() {
        let x = Tensor::full(&[1, 19, 1, 1], 3.25);
        let y = softmax(&x, 1).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 19.0).abs() < 1e-7);
        }
        let a = Tensor::from_vec(&[5], vec![0.3, -1.2, 2.0, 0.0, 0.7]).unwrap();
        let b = Tensor::from_vec(&[5], a.data().iter().map(|v| v + 100.0).collect()).unwrap();
        let ya = softmax(&a, 0).unwrap();
        let yb = softmax(&b, 0).unwrap();
        for (u, v) in ya.data().iter().zip(yb.data()) {
            assert!((u - v).abs() < 1e-6);
        }
        let sum: f32 = ya.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn avg_pool_2x2_of_4x4() {
        let x = t4(1, 1, 4, 4, |i| i as f32);
        let y = avg_pool2d(&x, (2, 2)).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(avg_pool2d(&x, (3, 3)).is_err());
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let (y, arg) = max_pool2d(&x, (2, 2)).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(arg, vec![1]);
        let go = Tensor::from_vec(&[1, 1, 1, 1], vec![7.0]).unwrap();
        let g = max_pool2d_backward(&[1, 1, 2, 2], &arg, &go).unwrap();
        assert_eq!(g.data(), &[0.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn channel_shuffle_small_example() {
        // C=4, g=2: [0,1,2,3] -> [0,2,1,3]
        let x = t4(1, 4, 1, 1, |i| i as f32);
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0]);
        // C=6, g=3: channel 4 lands at index (4%3)*2 + 4/3 = 3
        let x = t4(1, 6, 1, 1, |i| i as f32);
        let y = channel_shuffle(&x, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn channel_shuffle_inverse_pair() {
        let x = t4(2, 12, 2, 3, |i| (i as f32).cos());
        let y = channel_shuffle(&x, 4).unwrap();
        let z = channel_shuffle(&y, 3).unwrap();
        assert_eq!(z.data(), x.data());
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let x = t4(1, 2, 5, 7, |i| (i as f32 * 0.77).sin());
        let y = resize_bilinear(&x, 5, 7).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn resize_2x2_to_4x4_known_values() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = resize_bilinear(&x, 4, 4).unwrap();
        // half-pixel convention: corner stays, interior blends at 0.25/0.75
        let want = [
            0.0, 0.25, 0.75, 1.0, 0.5, 0.75, 1.25, 1.5, 1.5, 1.75, 2.25, 2.5, 2.0, 2.25, 2.75,
            3.0,
        ];
        for (got, want) in y.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-6, "got {} want {}", got, want);
        }
    }

    #[test]
    fn attention_single_token_segments_pass_values_through() {
        let t = 6;
        let c = 4;
        let q = Tensor::from_fn(&[t, c], |i| (i as f32 * 0.3).sin());
        let k = Tensor::from_fn(&[t, c], |i| (i as f32 * 0.7).cos());
        let v = Tensor::from_fn(&[t, c], |i| i as f32 * 0.1);
        let y = segmented_attention(&q, &k, &v, 2, t).unwrap();
        assert_eq!(y.data(), v.data());
    }

    #[test]
    fn attention_weights_are_row_stochastic() {
        let t = 8;
        let c = 4;
        let q = Tensor::from_fn(&[t, c], |i| (i as f32 * 0.13).sin());
        let k = Tensor::from_fn(&[t, c], |i| (i as f32 * 0.29).cos());
        let v = Tensor::from_fn(&[t, c], |i| (i as f32 * 0.05).tan());
        let (_, w) = segmented_attention_with_weights(&q, &k, &v, 2, 2).unwrap();
        let l = 4;
        for row in 0..(2 * 2 * l) {
            let s: f32 = w.data()[row * l..(row + 1) * l].iter().sum();
            assert!((s - 1.0).abs() < 1e-5, "row {} sums to {}", row, s);
            assert!(w.data()[row * l..(row + 1) * l].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn tokens_round_trip() {
        let x = t4(2, 3, 2, 2, |i| i as f32);
        let t = nchw_to_tokens(&x).unwrap();
        assert_eq!(t.shape(), [8, 3]);
        // token 0 of image 0 is pixel (0,0) across channels
        assert_eq!(&t.data()[..3], &[0.0, 4.0, 8.0]);
        let back = tokens_to_nchw(&t, 2, 3, 2, 2).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn concat_and_split_round_trip() {
        let a = t4(1, 2, 2, 2, |i| i as f32);
        let b = t4(1, 1, 2, 2, |i| 100.0 + i as f32);
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), [1, 3, 2, 2]);
        let grads = concat_channels_backward(&[2, 1], &y).unwrap();
        assert_eq!(grads[0].data(), a.data());
        assert_eq!(grads[1].data(), b.data());
    }

    #[test]
    fn channel_pools_reduce_over_channels() {
        let x = t4(1, 3, 1, 2, |i| i as f32); // channels: [0,1], [2,3], [4,5]
        let a = channel_avg_pool(&x).unwrap();
        assert_eq!(a.data(), &[2.0, 3.0]);
        let (m, arg) = channel_max_pool(&x).unwrap();
        assert_eq!(m.data(), &[4.0, 5.0]);
        assert_eq!(arg, vec![2, 2]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_k() {
        let k = 7;
        let logits = Tensor::zeros(&[1, k, 2, 2]);
        let labels = vec![0u32, 1, 2, 3];
        let out = softmax_cross_entropy(&logits, &labels, None, 255).unwrap();
        assert!((out.loss as f64 - (k as f64).ln()).abs() < 1e-6);
        assert_eq!(out.valid, 4);
    }

    #[test]
    fn cross_entropy_two_class_hand_case() {
        // single pixel, logits (2, 0), label 0:
        // p0 = e^2/(e^2+1), loss = -ln p0 = ln(1 + e^-2)
        let logits = Tensor::from_vec(&[1, 2, 1, 1], vec![2.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0], None, 255).unwrap();
        let want = (1.0f64 + (-2.0f64).exp()).ln();
        assert!((out.loss as f64 - want).abs() < 1e-6);
        // grad = p - onehot
        let p0 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((out.grad.data()[0] as f64 - (p0 - 1.0)).abs() < 1e-6);
        assert!((out.grad.data()[1] as f64 - (1.0 - p0)).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_ignores_and_weights() {
        // planes are channel-major: pixel 0 sees logits (1, 1), pixel 1 (0, 0)
        let logits = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        // second pixel ignored: loss over one valid pixel only
        let out = softmax_cross_entropy(&logits, &[0, 255], None, 255).unwrap();
        assert_eq!(out.valid, 1);
        assert!((out.loss as f64 - (2.0f64).ln()).abs() < 1e-6);
        assert_eq!(out.grad.data()[1], 0.0);
        assert_eq!(out.grad.data()[3], 0.0);
        // class weight doubles the contribution
        let wout = softmax_cross_entropy(&logits, &[0, 255], Some(&[2.0, 1.0]), 255).unwrap();
        assert!((wout.loss - 2.0 * out.loss).abs() < 1e-6);
        // all ignored: zero loss, zero grad
        let zout = softmax_cross_entropy(&logits, &[255, 255], None, 255).unwrap();
        assert_eq!(zout.valid, 0);
        assert_eq!(zout.loss, 0.0);
        assert!(zout.grad.data().iter().all(|&g| g == 0.0));
        // out-of-range label is a data error
        assert!(softmax_cross_entropy(&logits, &[5, 255], None, 255).is_err());
    }

    #[test]
    fn mul_broadcast_channel_gate() {
        let x = t4(1, 2, 2, 2, |_| 1.0);
        let gate = Tensor::from_vec(&[1, 2, 1, 1], vec![0.5, 2.0]).unwrap();
        let y = mul_broadcast(&x, &gate).unwrap();
        assert_eq!(&y.data()[..4], &[0.5; 4]);
        assert_eq!(&y.data()[4..], &[2.0; 4]);
        let (gx, gg) = mul_broadcast_backward(&x, &gate, &Tensor::ones(&[1, 2, 2, 2])).unwrap();
        assert_eq!(&gx.data()[..4], &[0.5; 4]);
        assert_eq!(gg.data(), &[4.0, 4.0]);
    }
}
