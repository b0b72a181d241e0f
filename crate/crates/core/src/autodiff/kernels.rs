//! Forward and vector-Jacobian kernels. Reductions accumulate in `f64` and
//! round once when written back to `f32` storage.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) const GELU_COEFF: f64 = 0.044715;
pub(crate) const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

pub(crate) fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (k_dim, n_dim) = match w.shape() {
        &[k, n] => (k, n),
        s => return Err(Error::dim("linear", x.shape(), s)),
    };
    if x.last_dim() != k_dim {
        return Err(Error::dim("linear", x.shape(), w.shape()));
    }
    if let Some(b) = b {
        if b.shape() != [n_dim] {
            return Err(Error::dim("linear bias", w.shape(), b.shape()));
        }
    }
    let rows = x.rows();
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = n_dim;
    let mut out = vec![0f32; rows * n_dim];
    let mut acc = vec![0f64; n_dim];
    let wd = w.data();
    for (xr, or) in x.data().chunks(k_dim).zip(out.chunks_mut(n_dim)) {
        acc.fill(0.0);
        for (k, &xv) in xr.iter().enumerate() {
            let xv = xv as f64;
            for (a, &wv) in acc.iter_mut().zip(&wd[k * n_dim..(k + 1) * n_dim]) {
                *a += xv * wv as f64;
            }
        }
        for (o, &a) in or.iter_mut().zip(&acc) {
            *o = a as f32;
        }
        if let Some(b) = b {
            for (o, &bv) in or.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub(crate) fn linear_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let k_dim = w.shape()[0];
    let n_dim = w.shape()[1];
    let wd = w.data();
    let mut gx = Tensor::zeros_like(x);
    let mut gw = vec![0f64; k_dim * n_dim];
    let mut gb = vec![0f64; n_dim];
    for ((xr, gr), gxr) in x
        .data()
        .chunks(k_dim)
        .zip(g.data().chunks(n_dim))
        .zip(gx.data_mut().chunks_mut(k_dim))
    {
        for (k, (&xv, gxv)) in xr.iter().zip(gxr.iter_mut()).enumerate() {
            let wrow = &wd[k * n_dim..(k + 1) * n_dim];
            let mut s = 0f64;
            for (&gv, &wv) in gr.iter().zip(wrow) {
                s += gv as f64 * wv as f64;
            }
            *gxv = s as f32;
            let xv = xv as f64;
            for (acc, &gv) in gw[k * n_dim..(k + 1) * n_dim].iter_mut().zip(gr) {
                *acc += xv * gv as f64;
            }
        }
        for (acc, &gv) in gb.iter_mut().zip(gr) {
            *acc += gv as f64;
        }
    }
    (
        gx,
        to_f32_tensor(w.shape(), &gw),
        to_f32_tensor(&[n_dim], &gb),
    )
}

pub(crate) fn to_f32_tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::from_vec(shape, v.iter().map(|&a| a as f32).collect()).expect("shape matches buffer")
}

pub(crate) fn gelu(x: f32) -> f32 {
    let x = x as f64;
    let inner = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    (0.5 * x * (1.0 + inner.tanh())) as f32
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let x = x as f64;
    let inner = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    let t = inner.tanh();
    let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x);
    (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner) as f32
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    let x = x as f64;
    (1.0 / (1.0 + (-x).exp())) as f32
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut out = Tensor::zeros_like(x);
    let xd = x.data();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| xd[idx(j)]).fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0f64;
            for j in 0..len {
                total += ((xd[idx(j)] - max) as f64).exp();
            }
            for j in 0..len {
                od[idx(j)] = (((xd[idx(j)] - max) as f64).exp() / total) as f32;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut gx = Tensor::zeros_like(y);
    let (yd, gd) = (y.data(), g.data());
    let gxd = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| yd[idx(j)] as f64 * gd[idx(j)] as f64).sum();
            for j in 0..len {
                gxd[idx(j)] = (yd[idx(j)] as f64 * (gd[idx(j)] as f64 - dot)) as f32;
            }
        }
    }
    gx
}

pub(crate) struct LayerNormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<(Tensor, LayerNormStats)> {
    let d = x.last_dim();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::dim("layer_norm", x.shape(), gamma.shape()));
    }
    let rows = x.rows();
    let mut out = Tensor::zeros_like(x);
    let mut stats = LayerNormStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for (token, (xr, or)) in x
        .data()
        .chunks(d)
        .zip(out.data_mut().chunks_mut(d))
        .enumerate()
    {
        if xr.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "layer_norm",
                token,
            });
        }
        let mean = xr.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = xr
            .iter()
            .map(|&v| {
                let c = v as f64 - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let rstd = 1.0 / (var + eps as f64).sqrt();
        for ((o, &v), (&g, &b)) in or
            .iter_mut()
            .zip(xr)
            .zip(gamma.data().iter().zip(beta.data()))
        {
            *o = (((v as f64 - mean) * rstd) * g as f64 + b as f64) as f32;
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((out, stats))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub(crate) fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &LayerNormStats,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d = x.last_dim();
    let mut gx = Tensor::zeros_like(x);
    let mut ggamma = vec![0f64; d];
    let mut gbeta = vec![0f64; d];
    let mut xhat = vec![0f64; d];
    let mut dxhat = vec![0f64; d];
    for (row, ((xr, gr), gxr)) in x
        .data()
        .chunks(d)
        .zip(g.data().chunks(d))
        .zip(gx.data_mut().chunks_mut(d))
        .enumerate()
    {
        let (mean, rstd) = (stats.mean[row], stats.rstd[row]);
        let mut sum_dxhat = 0f64;
        let mut sum_dxhat_xhat = 0f64;
        for j in 0..d {
            xhat[j] = (xr[j] as f64 - mean) * rstd;
            dxhat[j] = gr[j] as f64 * gamma.data()[j] as f64;
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
            ggamma[j] += gr[j] as f64 * xhat[j];
            gbeta[j] += gr[j] as f64;
        }
        let inv_d = 1.0 / d as f64;
        for j in 0..d {
            gxr[j] = (rstd * (dxhat[j] - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d))
                as f32;
        }
    }
    (
        gx,
        to_f32_tensor(&[d], &ggamma),
        to_f32_tensor(&[d], &gbeta),
    )
}

/// Mean over every axis between the first and the last: `[N, .., C] -> [N, C]`.
pub(crate) fn pool_mean_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(Error::Shape(format!("pooling needs rank >= 2, got {:?}", x.shape())));
    }
    let n = x.shape()[0];
    let c = x.last_dim();
    let positions = x.len() / (n * c);
    let mut out = vec![0f32; n * c];
    let mut acc = vec![0f64; c];
    for (xb, ob) in x.data().chunks(positions * c).zip(out.chunks_mut(c)) {
        acc.fill(0.0);
        for row in xb.chunks(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        for (o, &a) in ob.iter_mut().zip(&acc) {
            *o = (a / positions as f64) as f32;
        }
    }
    Tensor::from_vec(&[n, c], out)
}

pub(crate) fn pool_mean_backward(x_shape: &[usize], g: &Tensor) -> Tensor {
    let n = x_shape[0];
    let c = *x_shape.last().unwrap();
    let total: usize = x_shape.iter().product();
    let positions = total / (n * c);
    let inv = 1.0 / positions as f64;
    let mut out = vec![0f32; total];
    for (ob, gb) in out.chunks_mut(positions * c).zip(g.data().chunks(c)) {
        let scaled: Vec<f32> = gb.iter().map(|&v| (v as f64 * inv) as f32).collect();
        for row in ob.chunks_mut(c) {
            row.copy_from_slice(&scaled);
        }
    }
    Tensor::from_vec(x_shape, out).expect("same shape")
}

/// Stride and zero padding of a channels-last 3D convolution over
/// `(T, H, W)`; a 2D convolution is the `kernel[0] == 1` case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn spatial(stride: usize, padding: usize) -> Self {
        Self {
            stride: [1, stride, stride],
            padding: [0, padding, padding],
        }
    }

    pub fn output_extent(&self, input: [usize; 3], kernel: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if self.stride[a] == 0 || padded < kernel[a] {
                return Err(Error::Shape(format!(
                    "degenerate convolution output: input {input:?}, kernel {kernel:?}, {self:?}"
                )));
            }
            out[a] = (padded - kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

pub(crate) fn conv_dims(x: &Tensor, w: &Tensor, geom: &ConvGeometry) -> Result<ConvDims> {
    let [n, t, h, wd, cin] = x.dims5()?;
    let (kernel, wcin, cout) = match w.shape() {
        &[kt, kh, kw, ci, co] => ([kt, kh, kw], ci, co),
        s => return Err(Error::dim("conv", x.shape(), s)),
    };
    if wcin != cin {
        return Err(Error::dim("conv", x.shape(), w.shape()));
    }
    let output = geom.output_extent([t, h, wd], kernel)?;
    Ok(ConvDims {
        n,
        input: [t, h, wd],
        output,
        kernel,
        cin,
        cout,
    })
}

/// Visits every (output position, kernel tap) pair whose input position is
/// in bounds, passing flat output-row and input-row offsets and the tap index.
fn for_each_tap(d: &ConvDims, geom: &ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
    let [to, ho, wo] = d.output;
    let [ti, hi, wi] = d.input;
    let [kt, kh, kw] = d.kernel;
    for b in 0..d.n {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let orow = ((b * to + ot) * ho + oh) * wo + ow;
                    for a in 0..kt {
                        let it = (ot * geom.stride[0] + a) as isize - geom.padding[0] as isize;
                        if it < 0 || it >= ti as isize {
                            continue;
                        }
                        for c in 0..kh {
                            let ih = (oh * geom.stride[1] + c) as isize - geom.padding[1] as isize;
                            if ih < 0 || ih >= hi as isize {
                                continue;
                            }
                            for e in 0..kw {
                                let iw =
                                    (ow * geom.stride[2] + e) as isize - geom.padding[2] as isize;
                                if iw < 0 || iw >= wi as isize {
                                    continue;
                                }
                                let irow = ((b * ti + it as usize) * hi + ih as usize) * wi
                                    + iw as usize;
                                f(orow, irow, (a * kh + c) * kw + e);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    let d = conv_dims(x, w, geom)?;
    if let Some(b) = b {
        if b.shape() != [d.cout] {
            return Err(Error::dim("conv bias", w.shape(), b.shape()));
        }
    }
    let out_rows = d.n * d.output.iter().product::<usize>();
    let (cin, cout) = (d.cin, d.cout);
    let mut acc = vec![0f64; out_rows * cout];
    let (xd, wd) = (x.data(), w.data());
    for_each_tap(&d, geom, |orow, irow, tap| {
        let arow = &mut acc[orow * cout..(orow + 1) * cout];
        for ci in 0..cin {
            let xv = xd[irow * cin + ci] as f64;
            let wrow = &wd[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            for (a, &wv) in arow.iter_mut().zip(wrow) {
                *a += xv * wv as f64;
            }
        }
    });
    let mut out: Vec<f32> = acc.iter().map(|&a| a as f32).collect();
    if let Some(b) = b {
        for row in out.chunks_mut(cout) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    let [to, ho, wo] = d.output;
    Tensor::from_vec(&[d.n, to, ho, wo, cout], out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub(crate) fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    geom: &ConvGeometry,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = conv_dims(x, w, geom)?;
    let (cin, cout) = (d.cin, d.cout);
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut gx = vec![0f64; x.len()];
    let mut gw = vec![0f64; w.len()];
    for_each_tap(&d, geom, |orow, irow, tap| {
        let grow = &gd[orow * cout..(orow + 1) * cout];
        for ci in 0..cin {
            let widx = (tap * cin + ci) * cout;
            let wrow = &wd[widx..widx + cout];
            let mut s = 0f64;
            for (&gv, &wv) in grow.iter().zip(wrow) {
                s += gv as f64 * wv as f64;
            }
            gx[irow * cin + ci] += s;
            let xv = xd[irow * cin + ci] as f64;
            for (acc, &gv) in gw[widx..widx + cout].iter_mut().zip(grow) {
                *acc += xv * gv as f64;
            }
        }
    });
    let mut gb = vec![0f64; cout];
    for row in gd.chunks(cout) {
        for (acc, &gv) in gb.iter_mut().zip(row) {
            *acc += gv as f64;
        }
    }
    Ok((
        to_f32_tensor(x.shape(), &gx),
        to_f32_tensor(w.shape(), &gw),
        to_f32_tensor(&[cout], &gb),
    ))
}

/// Depthwise `k x k` convolution applied to every frame, stride 1 and
/// zero padding `k / 2`.
pub(crate) fn dwconv_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, t, h, w, c] = x.dims5()?;
    let ks = match k.shape() {
        &[kh, kw, kc] if kh == kw && kh % 2 == 1 && kc == c => kh,
        s => return Err(Error::dim("depthwise_conv2d", x.shape(), s)),
    };
    if b.shape() != [c] {
        return Err(Error::dim("depthwise_conv2d bias", k.shape(), b.shape()));
    }
    let pad = (ks / 2) as isize;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0f32; x.len()];
    let mut acc = vec![0f64; c];
    for frame in 0..n * t {
        for oh in 0..h {
            for ow in 0..w {
                acc.fill(0.0);
                for a in 0..ks {
                    let ih = oh as isize + a as isize - pad;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for e in 0..ks {
                        let iw = ow as isize + e as isize - pad;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let irow = (frame * h + ih as usize) * w + iw as usize;
                        let xr = &xd[irow * c..(irow + 1) * c];
                        let kr = &kd[(a * ks + e) * c..(a * ks + e + 1) * c];
                        for ((acc, &xv), &kv) in acc.iter_mut().zip(xr).zip(kr) {
                            *acc += xv as f64 * kv as f64;
                        }
                    }
                }
                let orow = (frame * h + oh) * w + ow;
                for ((o, &a), &bv) in out[orow * c..(orow + 1) * c]
                    .iter_mut()
                    .zip(&acc)
                    .zip(b.data())
                {
                    *o = a as f32 + bv;
                }
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub(crate) fn dwconv_backward(x: &Tensor, k: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [n, t, h, w, c] = x.dims5().expect("checked in forward");
    let ks = k.shape()[0];
    let pad = (ks / 2) as isize;
    let (xd, kd, gd) = (x.data(), k.data(), g.data());
    let mut gx = vec![0f64; x.len()];
    let mut gk = vec![0f64; k.len()];
    let mut gb = vec![0f64; c];
    for frame in 0..n * t {
        for oh in 0..h {
            for ow in 0..w {
                let orow = (frame * h + oh) * w + ow;
                let gr = &gd[orow * c..(orow + 1) * c];
                for (acc, &gv) in gb.iter_mut().zip(gr) {
                    *acc += gv as f64;
                }
                for a in 0..ks {
                    let ih = oh as isize + a as isize - pad;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for e in 0..ks {
                        let iw = ow as isize + e as isize - pad;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let irow = (frame * h + ih as usize) * w + iw as usize;
                        let tap = (a * ks + e) * c;
                        for ch in 0..c {
                            let gv = gr[ch] as f64;
                            gx[irow * c + ch] += gv * kd[tap + ch] as f64;
                            gk[tap + ch] += gv * xd[irow * c + ch] as f64;
                        }
                    }
                }
            }
        }
    }
    (
        to_f32_tensor(x.shape(), &gx),
        to_f32_tensor(k.shape(), &gk),
        to_f32_tensor(&[c], &gb),
    )
}

pub(crate) fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let shape = x.shape();
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::Shape(format!(
            "invalid permutation {perm:?} for shape {shape:?}"
        )));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * shape[a + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let xd = x.data();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(xd[off]);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::from_vec(&out_shape, out)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `[B, M, K] x [B, K, N] -> [B, M, N]`.
pub(crate) fn bmm_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, m, k, n) = match (a.shape(), b.shape()) {
        (&[ba, m, k], &[bb, kb, n]) if ba == bb && k == kb => (ba, m, k, n),
        _ => return Err(Error::dim("bmm", a.shape(), b.shape())),
    };
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0f32; batch * m * n];
    let mut acc = vec![0f64; n];
    for bi in 0..batch {
        for i in 0..m {
            acc.fill(0.0);
            for kk in 0..k {
                let av = ad[(bi * m + i) * k + kk] as f64;
                let brow = &bd[(bi * k + kk) * n..(bi * k + kk + 1) * n];
                for (s, &bv) in acc.iter_mut().zip(brow) {
                    *s += av * bv as f64;
                }
            }
            for (o, &s) in out[(bi * m + i) * n..(bi * m + i + 1) * n].iter_mut().zip(&acc) {
                *o = s as f32;
            }
        }
    }
    Tensor::from_vec(&[batch, m, n], out)
}

pub(crate) fn bmm_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[2];
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut ga = vec![0f64; a.len()];
    let mut gb = vec![0f64; b.len()];
    for bi in 0..batch {
        for i in 0..m {
            let grow = &gd[(bi * m + i) * n..(bi * m + i + 1) * n];
            for kk in 0..k {
                let brow = &bd[(bi * k + kk) * n..(bi * k + kk + 1) * n];
                let mut s = 0f64;
                for (&gv, &bv) in grow.iter().zip(brow) {
                    s += gv as f64 * bv as f64;
                }
                ga[(bi * m + i) * k + kk] += s;
                let av = ad[(bi * m + i) * k + kk] as f64;
                for (acc, &gv) in gb[(bi * k + kk) * n..(bi * k + kk + 1) * n]
                    .iter_mut()
                    .zip(grow)
                {
                    *acc += av * gv as f64;
                }
            }
        }
    }
    (to_f32_tensor(a.shape(), &ga), to_f32_tensor(b.shape(), &gb))
}
