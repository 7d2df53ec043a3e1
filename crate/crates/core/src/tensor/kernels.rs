//! Forward and backward kernels for the primitive operations.
//!
//! Every reduction runs in a fixed order, so parallel execution over
//! independent output planes gives bit-identical results to a serial run.

use rayon::prelude::*;

use super::{ensure_same_shape, Gemm, Scalar, Shape, Tensor};
use crate::error::{Axis, Error, Result};

/// Geometry of a 2-D convolution. Kernels are square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            dilation: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    /// Stride 1 with "same" padding for a `kernel`-sized kernel.
    pub fn same(kernel: usize, dilation: usize, groups: usize) -> Self {
        Conv2dParams {
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
            groups,
        }
    }
}

/// `floor((len + 2p - d(k-1) - 1) / s) + 1`, or `None` when that is below 1.
pub fn conv_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = len + 2 * padding;
    if padded < span || stride == 0 {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Output positions `lo..hi` whose tap at offset `off` lands inside the input.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let last = in_len as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Eight independent accumulators so the reduction vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] = lanes[i] + x[i] * y[i];
        }
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

fn conv_geometry(
    x: Shape,
    w: Shape,
    bias_len: Option<usize>,
    p: &Conv2dParams,
) -> Result<Shape> {
    if p.groups == 0 || p.stride == 0 || p.dilation == 0 {
        return Err(Error::Config(
            "conv2d stride, dilation and groups must be positive".into(),
        ));
    }
    if !x.c.is_multiple_of(p.groups) {
        return Err(Error::Config(format!(
            "conv2d: {} input channels not divisible by {} groups",
            x.c, p.groups
        )));
    }
    if !w.n.is_multiple_of(p.groups) {
        return Err(Error::Config(format!(
            "conv2d: {} output channels not divisible by {} groups",
            w.n, p.groups
        )));
    }
    if w.c != x.c / p.groups {
        return Err(Error::dim("conv2d", Axis::Channels, x.c / p.groups, w.c));
    }
    if w.h != w.w {
        return Err(Error::dim("conv2d", Axis::Kernel, w.h, w.w));
    }
    if let Some(len) = bias_len {
        if len != w.n {
            return Err(Error::dim("conv2d bias", Axis::Channels, w.n, len));
        }
    }
    let span = p.dilation * (w.h - 1) + 1;
    let oh = conv_output_len(x.h, w.h, p.stride, p.dilation, p.padding)
        .ok_or(Error::dim("conv2d", Axis::Height, span, x.h + 2 * p.padding))?;
    let ow = conv_output_len(x.w, w.w, p.stride, p.dilation, p.padding)
        .ok_or(Error::dim("conv2d", Axis::Width, span, x.w + 2 * p.padding))?;
    Ok(Shape::new(x.n, w.n, oh, ow))
}

/// Cross-correlation of `x` with `w`, plus optional per-output-channel bias.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    p: &Conv2dParams,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_geometry(xs, ws, bias.map(|b| b.len()), p)?;
    let mut out = Tensor::zeros(os);
    if is_pointwise(ws, p) {
        let (pl, cin, cout) = (xs.plane(), xs.c, os.c);
        for n in 0..xs.n {
            let o = &mut out.data_mut()[n * cout * pl..][..cout * pl];
            if let Some(b) = bias {
                for (row, &bv) in o.chunks_mut(pl).zip(b) {
                    row.fill(bv);
                }
            }
            let d = Gemm { m: cout, k: cin, n: pl, a: (cin, 1), b: (pl, 1), c: (pl, 1) };
            T::gemm(d, T::one(), w.data(), &x.data()[n * cin * pl..][..cin * pl], T::one(), o);
        }
        return Ok(out);
    }
    let cout_g = ws.n / p.groups;
    let cin_g = ws.c;
    let k = ws.h;
    let (xd, wd) = (x.data(), w.data());
    let plane_in = xs.plane();

    out.data_mut()
        .par_chunks_mut(os.plane())
        .enumerate()
        .for_each(|(idx, oplane)| {
            let (n, co) = (idx / os.c, idx % os.c);
            if let Some(b) = bias {
                oplane.fill(b[co]);
            }
            let g = co / cout_g;
            for cig in 0..cin_g {
                let ci = g * cin_g + cig;
                let iplane = &xd[(n * xs.c + ci) * plane_in..][..plane_in];
                let wbase = (co * cin_g + cig) * k * k;
                for ky in 0..k {
                    let offy = (ky * p.dilation) as isize - p.padding as isize;
                    let (ylo, yhi) = valid_range(os.h, xs.h, p.stride, offy);
                    for kx in 0..k {
                        let wv = wd[wbase + ky * k + kx];
                        let offx = (kx * p.dilation) as isize - p.padding as isize;
                        let (xlo, xhi) = valid_range(os.w, xs.w, p.stride, offx);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = (oy * p.stride) as isize + offy;
                            let irow = &iplane[iy as usize * xs.w..][..xs.w];
                            let orow = &mut oplane[oy * os.w..][..os.w];
                            if p.stride == 1 {
                                let start = (xlo as isize + offx) as usize;
                                let src = &irow[start..start + (xhi - xlo)];
                                for (o, &i) in orow[xlo..xhi].iter_mut().zip(src) {
                                    *o = *o + wv * i;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    let ix = ((ox * p.stride) as isize + offx) as usize;
                                    orow[ox] = orow[ox] + wv * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// 1x1, ungrouped, unit stride, no padding: a matrix product per sample.
fn is_pointwise(ws: Shape, p: &Conv2dParams) -> bool {
    ws.h == 1 && ws.w == 1 && p.groups == 1 && p.stride == 1 && p.padding == 0
}

fn pointwise_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let xs = x.shape();
    let (pl, cin, cout) = (xs.plane(), xs.c, w.shape().n);
    let gd = grad_out.data();
    let mut gw = Tensor::zeros(w.shape());
    let mut gx = need_input.then(|| Tensor::zeros(xs));
    for n in 0..xs.n {
        let g = &gd[n * cout * pl..][..cout * pl];
        let xn = &x.data()[n * cin * pl..][..cin * pl];
        // gW += G X^T
        let d = Gemm { m: cout, k: pl, n: cin, a: (pl, 1), b: (1, pl), c: (cin, 1) };
        T::gemm(d, T::one(), g, xn, T::one(), gw.data_mut());
        if let Some(gx) = gx.as_mut() {
            // gX = W^T G
            let d = Gemm { m: cin, k: cout, n: pl, a: (1, cin), b: (pl, 1), c: (pl, 1) };
            T::gemm(d, T::one(), w.data(), g, T::zero(), &mut gx.data_mut()[n * cin * pl..][..cin * pl]);
        }
    }
    let bias = has_bias.then(|| {
        (0..cout)
            .map(|co| (0..xs.n).map(|n| gd[(n * cout + co) * pl..][..pl].iter().copied().sum::<T>()).sum())
            .collect()
    });
    ConvGrads { input: gx, weight: gw, bias }
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    p: &Conv2dParams,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_geometry(xs, ws, None, p)?;
    ensure_same_shape("conv2d backward", os, grad_out.shape())?;
    if is_pointwise(ws, p) {
        return Ok(pointwise_backward(x, w, has_bias, grad_out, need_input));
    }
    let cout_g = ws.n / p.groups;
    let cin_g = ws.c;
    let k = ws.h;
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let (plane_in, plane_out) = (xs.plane(), os.plane());

    // Weight gradient: one task per output channel.
    let mut gw = Tensor::zeros(ws);
    gw.data_mut()
        .par_chunks_mut(cin_g * k * k)
        .enumerate()
        .for_each(|(co, gwc)| {
            let g = co / cout_g;
            for n in 0..xs.n {
                let gplane = &gd[(n * os.c + co) * plane_out..][..plane_out];
                for cig in 0..cin_g {
                    let ci = g * cin_g + cig;
                    let iplane = &xd[(n * xs.c + ci) * plane_in..][..plane_in];
                    for ky in 0..k {
                        let offy = (ky * p.dilation) as isize - p.padding as isize;
                        let (ylo, yhi) = valid_range(os.h, xs.h, p.stride, offy);
                        for kx in 0..k {
                            let offx = (kx * p.dilation) as isize - p.padding as isize;
                            let (xlo, xhi) = valid_range(os.w, xs.w, p.stride, offx);
                            if xlo >= xhi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for oy in ylo..yhi {
                                let iy = ((oy * p.stride) as isize + offy) as usize;
                                let irow = &iplane[iy * xs.w..][..xs.w];
                                let grow = &gplane[oy * os.w..][..os.w];
                                if p.stride == 1 {
                                    let start = (xlo as isize + offx) as usize;
                                    acc = acc + dot(&grow[xlo..xhi], &irow[start..start + (xhi - xlo)]);
                                } else {
                                    for ox in xlo..xhi {
                                        let ix = ((ox * p.stride) as isize + offx) as usize;
                                        acc = acc + grow[ox] * irow[ix];
                                    }
                                }
                            }
                            let slot = &mut gwc[(cig * k + ky) * k + kx];
                            *slot = *slot + acc;
                        }
                    }
                }
            }
        });

    let gb = has_bias.then(|| {
        (0..os.c)
            .map(|co| {
                let mut acc = T::zero();
                for n in 0..os.n {
                    for &v in &gd[(n * os.c + co) * plane_out..][..plane_out] {
                        acc = acc + v;
                    }
                }
                acc
            })
            .collect()
    });

    let gx = need_input.then(|| {
        let mut gx = Tensor::zeros(xs);
        gx.data_mut()
            .par_chunks_mut(plane_in)
            .enumerate()
            .for_each(|(idx, gxplane)| {
                let (n, ci) = (idx / xs.c, idx % xs.c);
                let g = ci / cin_g;
                let cig = ci % cin_g;
                for co in g * cout_g..(g + 1) * cout_g {
                    let gplane = &gd[(n * os.c + co) * plane_out..][..plane_out];
                    let wbase = (co * cin_g + cig) * k * k;
                    for ky in 0..k {
                        let offy = (ky * p.dilation) as isize - p.padding as isize;
                        let (ylo, yhi) = valid_range(os.h, xs.h, p.stride, offy);
                        for kx in 0..k {
                            let wv = wd[wbase + ky * k + kx];
                            let offx = (kx * p.dilation) as isize - p.padding as isize;
                            let (xlo, xhi) = valid_range(os.w, xs.w, p.stride, offx);
                            if xlo >= xhi {
                                continue;
                            }
                            for oy in ylo..yhi {
                                let iy = ((oy * p.stride) as isize + offy) as usize;
                                let grow = &gplane[oy * os.w..][..os.w];
                                let xrow = &mut gxplane[iy * xs.w..][..xs.w];
                                if p.stride == 1 {
                                    let start = (xlo as isize + offx) as usize;
                                    let dst = &mut xrow[start..start + (xhi - xlo)];
                                    for (d, &gv) in dst.iter_mut().zip(&grow[xlo..xhi]) {
                                        *d = *d + wv * gv;
                                    }
                                } else {
                                    for ox in xlo..xhi {
                                        let ix = ((ox * p.stride) as isize + offx) as usize;
                                        xrow[ix] = xrow[ix] + wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        gx
    });

    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

fn pool_geometry(s: Shape, kernel: usize, stride: usize) -> Result<Shape> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("avg_pool2d kernel and stride must be positive".into()));
    }
    if s.h < kernel {
        return Err(Error::dim("avg_pool2d", Axis::Height, kernel, s.h));
    }
    if s.w < kernel {
        return Err(Error::dim("avg_pool2d", Axis::Width, kernel, s.w));
    }
    Ok(Shape::new(
        s.n,
        s.c,
        (s.h - kernel) / stride + 1,
        (s.w - kernel) / stride + 1,
    ))
}

/// Mean over each `kernel x kernel` window.
pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    let os = pool_geometry(xs, kernel, stride)?;
    let scale = T::of(1.0 / (kernel * kernel) as f64);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    out.data_mut()
        .par_chunks_mut(os.plane())
        .enumerate()
        .for_each(|(idx, oplane)| {
            let iplane = &xd[idx * xs.plane()..][..xs.plane()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = T::zero();
                    for ky in 0..kernel {
                        let row = &iplane[(oy * stride + ky) * xs.w + ox * stride..][..kernel];
                        for &v in row {
                            acc = acc + v;
                        }
                    }
                    oplane[oy * os.w + ox] = acc * scale;
                }
            }
        });
    Ok(out)
}

pub fn avg_pool2d_backward<T: Scalar>(
    input_shape: Shape,
    grad_out: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let os = pool_geometry(input_shape, kernel, stride)?;
    ensure_same_shape("avg_pool2d backward", os, grad_out.shape())?;
    let scale = T::of(1.0 / (kernel * kernel) as f64);
    let mut gx = Tensor::zeros(input_shape);
    let gd = grad_out.data();
    gx.data_mut()
        .par_chunks_mut(input_shape.plane())
        .enumerate()
        .for_each(|(idx, gplane)| {
            let oplane = &gd[idx * os.plane()..][..os.plane()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = oplane[oy * os.w + ox] * scale;
                    for ky in 0..kernel {
                        let row = &mut gplane
                            [(oy * stride + ky) * input_shape.w + ox * stride..][..kernel];
                        for v in row {
                            *v = *v + g;
                        }
                    }
                }
            }
        });
    Ok(gx)
}

/// Source taps for one output coordinate: `(lo, hi, weight of hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-center mapping `src = (dst + 0.5) * in/out - 0.5`, clamped to
/// the valid source range.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

fn resize_check(s: Shape, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 {
        return Err(Error::dim("bilinear_resize", Axis::Height, 1, 0));
    }
    if out_w == 0 {
        return Err(Error::dim("bilinear_resize", Axis::Width, 1, 0));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::Contract("bilinear_resize of an empty plane".into()));
    }
    Ok(())
}

pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    resize_check(xs, out_h, out_w)?;
    let os = Shape::new(xs.n, xs.c, out_h, out_w);
    let ty = bilinear_taps(xs.h, out_h);
    let tx = bilinear_taps(xs.w, out_w);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    out.data_mut()
        .par_chunks_mut(os.plane())
        .enumerate()
        .for_each(|(idx, oplane)| {
            let iplane = &xd[idx * xs.plane()..][..xs.plane()];
            for (oy, ty) in ty.iter().enumerate() {
                let fy = T::of(ty.frac);
                let r0 = &iplane[ty.lo * xs.w..][..xs.w];
                let r1 = &iplane[ty.hi * xs.w..][..xs.w];
                for (ox, tx) in tx.iter().enumerate() {
                    let fx = T::of(tx.frac);
                    let top = r0[tx.lo] * (T::one() - fx) + r0[tx.hi] * fx;
                    let bot = r1[tx.lo] * (T::one() - fx) + r1[tx.hi] * fx;
                    oplane[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        });
    Ok(out)
}

pub fn bilinear_resize_backward<T: Scalar>(
    input_shape: Shape,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let os = grad_out.shape();
    resize_check(input_shape, os.h, os.w)?;
    let ty = bilinear_taps(input_shape.h, os.h);
    let tx = bilinear_taps(input_shape.w, os.w);
    let mut gx = Tensor::zeros(input_shape);
    let gd = grad_out.data();
    let iw = input_shape.w;
    gx.data_mut()
        .par_chunks_mut(input_shape.plane())
        .enumerate()
        .for_each(|(idx, gplane)| {
            let oplane = &gd[idx * os.plane()..][..os.plane()];
            for (oy, ty) in ty.iter().enumerate() {
                let fy = T::of(ty.frac);
                for (ox, tx) in tx.iter().enumerate() {
                    let fx = T::of(tx.frac);
                    let g = oplane[oy * os.w + ox];
                    let top = g * (T::one() - fy);
                    let bot = g * fy;
                    gplane[ty.lo * iw + tx.lo] = gplane[ty.lo * iw + tx.lo] + top * (T::one() - fx);
                    gplane[ty.lo * iw + tx.hi] = gplane[ty.lo * iw + tx.hi] + top * fx;
                    gplane[ty.hi * iw + tx.lo] = gplane[ty.hi * iw + tx.lo] + bot * (T::one() - fx);
                    gplane[ty.hi * iw + tx.hi] = gplane[ty.hi * iw + tx.hi] + bot * fx;
                }
            }
        });
    Ok(gx)
}

/// Concatenation along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Contract("concat_channels needs at least one input".into()))?
        .shape();
    let mut c = 0;
    for t in xs {
        let s = t.shape();
        if s.n != first.n {
            return Err(Error::dim("concat_channels", Axis::Batch, first.n, s.n));
        }
        if s.h != first.h {
            return Err(Error::dim("concat_channels", Axis::Height, first.h, s.h));
        }
        if s.w != first.w {
            return Err(Error::dim("concat_channels", Axis::Width, first.w, s.w));
        }
        c += s.c;
    }
    let os = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(os.numel());
    for n in 0..first.n {
        for t in xs {
            let per = t.shape().c * first.plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(os, data)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its output.
pub fn relu_backward<T: Scalar>(out: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = out
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(out.shape(), data).expect("same shape")
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Per-channel statistics of one training-mode batch-norm application.
#[derive(Clone, Debug)]
pub struct BnBatch<T> {
    pub mean: Vec<T>,
    /// Biased variance (divides by `N*H*W`).
    pub var: Vec<T>,
    pub invstd: Vec<T>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

fn check_bn_vec(op: &'static str, c: usize, v: &[impl Copy]) -> Result<()> {
    if v.len() != c {
        return Err(Error::dim(op, Axis::Channels, c, v.len()));
    }
    Ok(())
}

/// Normalizes with batch statistics over `N*H*W` per channel.
/// Returns the output, the normalized input `xhat`, and the batch statistics.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>, BnBatch<T>)> {
    let s = x.shape();
    check_bn_vec("batchnorm", s.c, gamma)?;
    check_bn_vec("batchnorm", s.c, beta)?;
    let count = s.n * s.plane();
    if count == 0 {
        return Err(Error::Contract("batchnorm over an empty batch".into()));
    }
    let inv_count = T::of(1.0 / count as f64);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            for &v in x.plane(n, c) {
                acc = acc + v;
            }
        }
        let m = acc * inv_count;
        let mut sq = T::zero();
        for n in 0..s.n {
            for &v in x.plane(n, c) {
                let d = v - m;
                sq = sq + d * d;
            }
        }
        mean[c] = m;
        var[c] = sq * inv_count;
    }
    let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
    let mut xhat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let p = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            let src = &x.data()[base..base + p];
            let xh = &mut xhat.data_mut()[base..base + p];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean[c]) * invstd[c];
            }
            let xh = &xhat.data()[base..base + p];
            let dst = &mut y.data_mut()[base..base + p];
            for (d, &v) in dst.iter_mut().zip(xh) {
                *d = gamma[c] * v + beta[c];
            }
        }
    }
    Ok((
        y,
        xhat,
        BnBatch {
            mean,
            var,
            invstd,
            count,
        },
    ))
}

/// Normalizes with fixed statistics. Returns the output and `invstd`.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<(Tensor<T>, Vec<T>)> {
    let s = x.shape();
    for v in [gamma, beta, running_mean, running_var] {
        check_bn_vec("batchnorm", s.c, v)?;
    }
    let invstd: Vec<T> = running_var
        .iter()
        .map(|&v| T::one() / (v + T::of(eps)).sqrt())
        .collect();
    let mut y = Tensor::zeros(s);
    let p = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            let scale = gamma[c] * invstd[c];
            let shift = beta[c] - running_mean[c] * scale;
            for (d, &v) in y.data_mut()[base..base + p]
                .iter_mut()
                .zip(&x.data()[base..base + p])
            {
                *d = v * scale + shift;
            }
        }
    }
    Ok((y, invstd))
}

/// Gradients of a training-mode batch norm: `(dx, dgamma, dbeta)`.
pub fn batchnorm_train_backward<T: Scalar>(
    xhat: &Tensor<T>,
    invstd: &[T],
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = xhat.shape();
    let p = s.plane();
    let m = T::of((s.n * p) as f64);
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            for (&g, &xh) in grad_out.plane(n, c).iter().zip(xhat.plane(n, c)) {
                dbeta[c] = dbeta[c] + g;
                dgamma[c] = dgamma[c] + g * xh;
            }
        }
    }
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let k = gamma[c] * invstd[c] / m;
            let base = (n * s.c + c) * p;
            for ((d, &g), &xh) in dx.data_mut()[base..base + p]
                .iter_mut()
                .zip(grad_out.plane(n, c))
                .zip(xhat.plane(n, c))
            {
                *d = k * (m * g - dbeta[c] - xh * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Gradients of an eval-mode batch norm: `(dx, dgamma, dbeta)`.
pub fn batchnorm_eval_backward<T: Scalar>(
    x: &Tensor<T>,
    running_mean: &[T],
    invstd: &[T],
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = x.shape();
    let p = s.plane();
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            let scale = gamma[c] * invstd[c];
            for ((d, &g), &v) in dx.data_mut()[base..base + p]
                .iter_mut()
                .zip(grad_out.plane(n, c))
                .zip(x.plane(n, c))
            {
                *d = g * scale;
                dbeta[c] = dbeta[c] + g;
                dgamma[c] = dgamma[c] + g * (v - running_mean[c]) * invstd[c];
            }
        }
    }
    (dx, dgamma, dbeta)
}
