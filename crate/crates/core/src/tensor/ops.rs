//! Differentiable operations over tensors.
//!
//! Each operation validates shapes (and value finiteness in checked mode),
//! computes its forward result through the raw kernels, and — when a tape is
//! active and the output participates in differentiation — records a backward
//! rule that routes gradients to its inputs.

use super::kernels;
use super::tape;
use super::{check_finite, Elem, Tensor};
use crate::error::{shape_err, Error, Result};

/// (outer, channels, inner) split of a shape for channel-axis broadcasting.
/// The channel axis is axis 0 for tensors up to 3 dimensions ([C], [C,M],
/// [C,H,W]) and axis 1 for 4-dimensional image batches ([N,C,H,W]).
fn channel_split(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        0 => (1, 1, 1),
        1 => (1, shape[0], 1),
        2 | 3 => (1, shape[0], shape[1..].iter().product()),
        _ => (shape[0], shape[1], shape[2..].iter().product()),
    }
}

enum Broadcast {
    Elementwise,
    Channel { outer: usize, c: usize, inner: usize },
}

fn binary_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Elementwise);
    }
    let (outer, c, inner) = channel_split(a);
    if b.len() == 1 && b[0] == c {
        return Ok(Broadcast::Channel { outer, c, inner });
    }
    Err(shape_err(
        op,
        format!("broadcast-incompatible shapes {a:?} and {b:?}"),
    ))
}

fn reduce_to_channels<E: Elem>(g: &[E], outer: usize, c: usize, inner: usize) -> Vec<E> {
    let mut out = vec![E::zero(); c];
    for o in 0..outer {
        for ch in 0..c {
            let mut acc = E::zero();
            for &v in &g[(o * c + ch) * inner..][..inner] {
                acc = acc + v;
            }
            out[ch] = out[ch] + acc;
        }
    }
    out
}

/// Elementwise sum; the right operand may be a per-channel vector.
pub fn add<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("add", "lhs", &a.data())?;
    check_finite("add", "rhs", &b.data())?;
    let bc = binary_broadcast("add", a.shape(), b.shape())?;
    let ad = a.data();
    let bd = b.data();
    let data: Vec<E> = match bc {
        Broadcast::Elementwise => ad.iter().zip(bd.iter()).map(|(&x, &y)| x + y).collect(),
        Broadcast::Channel { outer, c, inner } => {
            let mut out = Vec::with_capacity(ad.len());
            for o in 0..outer {
                for ch in 0..c {
                    let bv = bd[ch];
                    out.extend(ad[(o * c + ch) * inner..][..inner].iter().map(|&x| x + bv));
                }
            }
            out
        }
    };
    drop(ad);
    drop(bd);
    let out = Tensor::from_op(
        data,
        a.shape().to_vec(),
        a.requires_grad() || b.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (ai, bi, oi) = (a.clone(), b.clone(), out.clone());
        let bshape = b.shape().to_vec();
        let ashape = a.shape().to_vec();
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            if ai.requires_grad() {
                ai.accumulate_grad(&g);
            }
            if bi.requires_grad() {
                match binary_broadcast("add", &ashape, &bshape).unwrap() {
                    Broadcast::Elementwise => bi.accumulate_grad(&g),
                    Broadcast::Channel { outer, c, inner } => {
                        bi.accumulate_grad(&reduce_to_channels(&g, outer, c, inner))
                    }
                }
            }
        });
    }
    Ok(out)
}

/// Elementwise difference (equal shapes).
pub fn sub<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("sub", "lhs", &a.data())?;
    check_finite("sub", "rhs", &b.data())?;
    if a.shape() != b.shape() {
        return Err(shape_err(
            "sub",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data: Vec<E> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x - y)
        .collect();
    let out = Tensor::from_op(
        data,
        a.shape().to_vec(),
        a.requires_grad() || b.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (ai, bi, oi) = (a.clone(), b.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            if ai.requires_grad() {
                ai.accumulate_grad(&g);
            }
            if bi.requires_grad() {
                let neg: Vec<E> = g.iter().map(|&v| -v).collect();
                bi.accumulate_grad(&neg);
            }
        });
    }
    Ok(out)
}

/// Elementwise (Hadamard) product; the right operand may be a per-channel
/// vector.
pub fn mul<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("mul", "lhs", &a.data())?;
    check_finite("mul", "rhs", &b.data())?;
    let bc = binary_broadcast("mul", a.shape(), b.shape())?;
    let ad = a.data();
    let bd = b.data();
    let data: Vec<E> = match bc {
        Broadcast::Elementwise => ad.iter().zip(bd.iter()).map(|(&x, &y)| x * y).collect(),
        Broadcast::Channel { outer, c, inner } => {
            let mut out = Vec::with_capacity(ad.len());
            for o in 0..outer {
                for ch in 0..c {
                    let bv = bd[ch];
                    out.extend(ad[(o * c + ch) * inner..][..inner].iter().map(|&x| x * bv));
                }
            }
            out
        }
    };
    drop(ad);
    drop(bd);
    let out = Tensor::from_op(
        data,
        a.shape().to_vec(),
        a.requires_grad() || b.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (ai, bi, oi) = (a.clone(), b.clone(), out.clone());
        let ashape = a.shape().to_vec();
        let bshape = b.shape().to_vec();
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let ad = ai.to_vec();
            let bd = bi.to_vec();
            match binary_broadcast("mul", &ashape, &bshape).unwrap() {
                Broadcast::Elementwise => {
                    if ai.requires_grad() {
                        let da: Vec<E> = g.iter().zip(&bd).map(|(&gv, &bv)| gv * bv).collect();
                        ai.accumulate_grad(&da);
                    }
                    if bi.requires_grad() {
                        let db: Vec<E> = g.iter().zip(&ad).map(|(&gv, &av)| gv * av).collect();
                        bi.accumulate_grad(&db);
                    }
                }
                Broadcast::Channel { outer, c, inner } => {
                    if ai.requires_grad() {
                        let mut da = Vec::with_capacity(g.len());
                        for o in 0..outer {
                            for ch in 0..c {
                                let bv = bd[ch];
                                da.extend(
                                    g[(o * c + ch) * inner..][..inner].iter().map(|&gv| gv * bv),
                                );
                            }
                        }
                        ai.accumulate_grad(&da);
                    }
                    if bi.requires_grad() {
                        let prod: Vec<E> = g.iter().zip(&ad).map(|(&gv, &av)| gv * av).collect();
                        bi.accumulate_grad(&reduce_to_channels(&prod, outer, c, inner));
                    }
                }
            }
        });
    }
    Ok(out)
}

pub fn mul_scalar<E: Elem>(a: &Tensor<E>, s: E) -> Result<Tensor<E>> {
    check_finite("mul_scalar", "input", &a.data())?;
    let data: Vec<E> = a.data().iter().map(|&x| x * s).collect();
    let out = Tensor::from_op(data, a.shape().to_vec(), a.requires_grad());
    if tape::recording() && out.requires_grad() {
        let (ai, oi) = (a.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let da: Vec<E> = g.iter().map(|&gv| gv * s).collect();
            ai.accumulate_grad(&da);
        });
    }
    Ok(out)
}

pub fn relu<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("relu", "input", &x.data())?;
    let data: Vec<E> = x
        .data()
        .iter()
        .map(|&v| if v > E::zero() { v } else { E::zero() })
        .collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), x.requires_grad());
    if tape::recording() && out.requires_grad() {
        let (xi, oi) = (x.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let xd = xi.to_vec();
            let dx: Vec<E> = g
                .iter()
                .zip(&xd)
                .map(|(&gv, &xv)| if xv > E::zero() { gv } else { E::zero() })
                .collect();
            xi.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

pub fn sigmoid<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("sigmoid", "input", &x.data())?;
    let data: Vec<E> = x
        .data()
        .iter()
        .map(|&v| E::one() / (E::one() + (-v).exp()))
        .collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), x.requires_grad());
    if tape::recording() && out.requires_grad() {
        let (xi, oi) = (x.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let yd = oi.to_vec();
            let dx: Vec<E> = g
                .iter()
                .zip(&yd)
                .map(|(&gv, &yv)| gv * yv * (E::one() - yv))
                .collect();
            xi.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Layer normalization over the channel axis per spatial site, with learnable
/// per-channel gain and offset.
pub fn layer_norm_channels<E: Elem>(
    x: &Tensor<E>,
    gain: &Tensor<E>,
    offset: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_finite("layer_norm", "input", &x.data())?;
    let (n, c, s) = channel_split(x.shape());
    if gain.shape() != [c] || offset.shape() != [c] {
        return Err(shape_err(
            "layer_norm",
            format!(
                "gain {:?} / offset {:?} must be [{}] for input {:?}",
                gain.shape(),
                offset.shape(),
                c,
                x.shape()
            ),
        ));
    }
    let data = kernels::layer_norm_fwd(&x.data(), n, c, s, &gain.data(), &offset.data());
    let out = Tensor::from_op(
        data,
        x.shape().to_vec(),
        x.requires_grad() || gain.requires_grad() || offset.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (xi, gi, bi, oi) = (x.clone(), gain.clone(), offset.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let (dx, dgain, doffset) =
                kernels::layer_norm_bwd(&xi.data(), &g, n, c, s, &gi.data());
            if xi.requires_grad() {
                xi.accumulate_grad(&dx);
            }
            if gi.requires_grad() {
                gi.accumulate_grad(&dgain);
            }
            if bi.requires_grad() {
                bi.accumulate_grad(&doffset);
            }
        });
    }
    Ok(out)
}

/// Affine map over the last axis; leading axes broadcast.
/// x [..., din], weight [dout, din], bias [dout] -> [..., dout]
pub fn linear<E: Elem>(x: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("linear", "input", &x.data())?;
    if x.ndim() == 0 || weight.ndim() != 2 {
        return Err(shape_err(
            "linear",
            format!("input {:?}, weight {:?}", x.shape(), weight.shape()),
        ));
    }
    let din = *x.shape().last().unwrap();
    let dout = weight.shape()[0];
    if weight.shape()[1] != din {
        return Err(shape_err(
            "linear",
            format!("input last axis {} vs weight {:?}", din, weight.shape()),
        ));
    }
    if bias.shape() != [dout] {
        return Err(shape_err(
            "linear",
            format!("bias {:?} must be [{}]", bias.shape(), dout),
        ));
    }
    let b = x.numel() / din;
    let data = kernels::linear_fwd(&x.data(), b, din, &weight.data(), dout, Some(&bias.data()));
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = dout;
    let out = Tensor::from_op(
        data,
        out_shape,
        x.requires_grad() || weight.requires_grad() || bias.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (xi, wi, bi, oi) = (x.clone(), weight.clone(), bias.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            if xi.requires_grad() {
                let dx = kernels::linear_bwd_input(&g, b, dout, &wi.data(), din);
                xi.accumulate_grad(&dx);
            }
            if wi.requires_grad() {
                let dw = kernels::linear_bwd_weight(&xi.data(), &g, b, din, dout);
                wi.accumulate_grad(&dw);
            }
            if bi.requires_grad() {
                bi.accumulate_grad(&kernels::linear_bwd_bias(&g, b, dout));
            }
        });
    }
    Ok(out)
}

/// Stride-1 cross-correlation with odd kernel and same padding.
/// input [n, ci, h, w], weight [co, ci, k, k], bias [co].
pub fn conv2d<E: Elem>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    padding: usize,
) -> Result<Tensor<E>> {
    check_finite("conv2d", "input", &input.data())?;
    if input.ndim() != 4 || weight.ndim() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("input {:?}, weight {:?}", input.shape(), weight.shape()),
        ));
    }
    let (n, ci, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, wci, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    if kh != kw || kh % 2 == 0 {
        return Err(shape_err(
            "conv2d",
            format!("kernel must be square and odd, got {kh}x{kw}"),
        ));
    }
    if wci != ci {
        return Err(shape_err(
            "conv2d",
            format!("input channels {ci} vs weight channels {wci}"),
        ));
    }
    if padding != (kh - 1) / 2 {
        return Err(Error::InvalidArgument(format!(
            "conv2d supports same padding only: kernel {kh} requires padding {}, got {padding}",
            (kh - 1) / 2
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(shape_err(
                "conv2d",
                format!("bias {:?} must be [{co}]", b.shape()),
            ));
        }
    }
    let k = kh;
    let data = {
        let bd = bias.map(|b| b.data());
        kernels::conv2d_fwd(
            &input.data(),
            n,
            ci,
            h,
            w,
            &weight.data(),
            co,
            k,
            padding,
            bd.as_deref(),
        )
    };
    let requires = input.requires_grad()
        || weight.requires_grad()
        || bias.map(|b| b.requires_grad()).unwrap_or(false);
    let out = Tensor::from_op(data, vec![n, co, h, w], requires);
    if tape::recording() && out.requires_grad() {
        let (xi, wi, oi) = (input.clone(), weight.clone(), out.clone());
        let bi = bias.cloned();
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            if xi.requires_grad() {
                let dx = kernels::conv2d_bwd_input(&g, n, co, h, w, &wi.data(), ci, k, padding);
                xi.accumulate_grad(&dx);
            }
            if wi.requires_grad() {
                let dw = kernels::conv2d_bwd_weight(&xi.data(), &g, n, ci, h, w, co, k, padding);
                wi.accumulate_grad(&dw);
            }
            if let Some(b) = &bi {
                if b.requires_grad() {
                    b.accumulate_grad(&kernels::conv2d_bwd_bias(&g, n, co, h * w));
                }
            }
        });
    }
    Ok(out)
}

/// Bilinear sampling of a feature map at real-valued coordinates expressed in
/// the feature's own pixel frame (cell-center convention, clamp-to-edge).
/// feature [c, h, w], coords -> [c, m]. Differentiable w.r.t. the feature.
pub fn grid_sample<E: Elem>(feature: &Tensor<E>, coords: &[[f64; 2]]) -> Result<Tensor<E>> {
    check_finite("grid_sample", "feature", &feature.data())?;
    if feature.ndim() != 3 {
        return Err(shape_err(
            "grid_sample",
            format!("feature must be [c,h,w], got {:?}", feature.shape()),
        ));
    }
    for (i, c) in coords.iter().enumerate() {
        if !c[0].is_finite() || !c[1].is_finite() {
            return Err(Error::NonFinite {
                op: "grid_sample",
                detail: format!("coords[{i}] = ({}, {})", c[0], c[1]),
            });
        }
    }
    let (c, h, w) = (
        feature.shape()[0],
        feature.shape()[1],
        feature.shape()[2],
    );
    let taps = kernels::bilinear_taps(coords, h, w);
    let data = kernels::grid_sample_fwd(&feature.data(), c, h * w, &taps);
    let out = Tensor::from_op(data, vec![c, coords.len()], feature.requires_grad());
    if tape::recording() && out.requires_grad() {
        let (fi, oi) = (feature.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let df = kernels::grid_sample_bwd(&g, c, h * w, &taps);
            fi.accumulate_grad(&df);
        });
    }
    Ok(out)
}

/// 2x2 average pooling with ceil-mode output extents and clamped windows.
pub fn avg_pool2<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("avg_pool2", "input", &x.data())?;
    if x.ndim() != 4 {
        return Err(shape_err(
            "avg_pool2",
            format!("input must be [n,c,h,w], got {:?}", x.shape()),
        ));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let data = kernels::avg_pool2_fwd(&x.data(), n, c, h, w);
    let out = Tensor::from_op(
        data,
        vec![
            n,
            c,
            kernels::pool_out_extent(h),
            kernels::pool_out_extent(w),
        ],
        x.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (xi, oi) = (x.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let dx = kernels::avg_pool2_bwd(&g, n, c, h, w);
            xi.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Concatenate along axis 0; trailing extents must agree.
pub fn concat0<E: Elem>(xs: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("concat0 of zero tensors".into()));
    }
    let tail = &xs[0].shape()[1..];
    let mut rows = 0;
    for t in xs {
        if t.ndim() != xs[0].ndim() || &t.shape()[1..] != tail {
            return Err(shape_err(
                "concat0",
                format!("{:?} vs {:?}", t.shape(), xs[0].shape()),
            ));
        }
        check_finite("concat0", "input", &t.data())?;
        rows += t.shape()[0];
    }
    let mut data = Vec::with_capacity(rows * tail.iter().product::<usize>());
    for t in xs {
        data.extend_from_slice(&t.data());
    }
    let mut shape = xs[0].shape().to_vec();
    shape[0] = rows;
    let requires = xs.iter().any(|t| t.requires_grad());
    let out = Tensor::from_op(data, shape, requires);
    if tape::recording() && out.requires_grad() {
        let parts: Vec<Tensor<E>> = xs.iter().map(|t| (*t).clone()).collect();
        let oi = out.clone();
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let mut off = 0;
            for p in &parts {
                let len = p.numel();
                if p.requires_grad() {
                    p.accumulate_grad(&g[off..off + len]);
                }
                off += len;
            }
        });
    }
    Ok(out)
}

/// Modulate a static convolution kernel by per-(offset, input-channel)
/// factors: eff[o,c,u,v] = w[o,c,u,v] * m[u*k+v, c].
/// weight [co, ci, k, k], modulation [k*k, ci].
pub fn scale_kernel<E: Elem>(weight: &Tensor<E>, modulation: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("scale_kernel", "weight", &weight.data())?;
    check_finite("scale_kernel", "modulation", &modulation.data())?;
    if weight.ndim() != 4 || modulation.ndim() != 2 {
        return Err(shape_err(
            "scale_kernel",
            format!("weight {:?}, modulation {:?}", weight.shape(), modulation.shape()),
        ));
    }
    let (co, ci, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    if weight.shape()[3] != k || modulation.shape() != [k * k, ci] {
        return Err(shape_err(
            "scale_kernel",
            format!(
                "modulation {:?} must be [{}, {}] for weight {:?}",
                modulation.shape(),
                k * k,
                ci,
                weight.shape()
            ),
        ));
    }
    let wd = weight.data();
    let md = modulation.data();
    let mut data = vec![E::zero(); wd.len()];
    for o in 0..co {
        for c in 0..ci {
            for uv in 0..k * k {
                let idx = (o * ci + c) * k * k + uv;
                data[idx] = wd[idx] * md[uv * ci + c];
            }
        }
    }
    drop(wd);
    drop(md);
    let out = Tensor::from_op(
        data,
        weight.shape().to_vec(),
        weight.requires_grad() || modulation.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (wi, mi, oi) = (weight.clone(), modulation.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let wd = wi.to_vec();
            let md = mi.to_vec();
            if wi.requires_grad() {
                let mut dw = vec![E::zero(); wd.len()];
                for o in 0..co {
                    for c in 0..ci {
                        for uv in 0..k * k {
                            let idx = (o * ci + c) * k * k + uv;
                            dw[idx] = g[idx] * md[uv * ci + c];
                        }
                    }
                }
                wi.accumulate_grad(&dw);
            }
            if mi.requires_grad() {
                let mut dm = vec![E::zero(); md.len()];
                for o in 0..co {
                    for c in 0..ci {
                        for uv in 0..k * k {
                            let idx = (o * ci + c) * k * k + uv;
                            dm[uv * ci + c] = dm[uv * ci + c] + g[idx] * wd[idx];
                        }
                    }
                }
                mi.accumulate_grad(&dm);
            }
        });
    }
    Ok(out)
}

/// Mean absolute difference over all elements.
pub fn l1_loss<E: Elem>(pred: &Tensor<E>, truth: &Tensor<E>) -> Result<Tensor<E>> {
    check_finite("l1_loss", "pred", &pred.data())?;
    check_finite("l1_loss", "truth", &truth.data())?;
    if pred.shape() != truth.shape() {
        return Err(shape_err(
            "l1_loss",
            format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        ));
    }
    let n = pred.numel();
    if n == 0 {
        return Err(Error::InvalidArgument("l1_loss of empty tensors".into()));
    }
    let inv_n = super::ef::<E>(1.0 / n as f64);
    let mut acc = E::zero();
    {
        let pd = pred.data();
        let td = truth.data();
        for (&p, &t) in pd.iter().zip(td.iter()) {
            acc = acc + (p - t).abs();
        }
    }
    let out = Tensor::from_op(
        vec![acc * inv_n],
        vec![1],
        pred.requires_grad() || truth.requires_grad(),
    );
    if tape::recording() && out.requires_grad() {
        let (pi, ti, oi) = (pred.clone(), truth.clone(), out.clone());
        tape::record(move || {
            let Some(g) = oi.take_grad() else { return };
            let gv = g[0] * inv_n;
            let pd = pi.to_vec();
            let td = ti.to_vec();
            let signs: Vec<E> = pd
                .iter()
                .zip(&td)
                .map(|(&p, &t)| {
                    if p > t {
                        gv
                    } else if p < t {
                        -gv
                    } else {
                        E::zero()
                    }
                })
                .collect();
            if pi.requires_grad() {
                pi.accumulate_grad(&signs);
            }
            if ti.requires_grad() {
                let neg: Vec<E> = signs.iter().map(|&v| -v).collect();
                ti.accumulate_grad(&neg);
            }
        });
    }
    Ok(out)
}
