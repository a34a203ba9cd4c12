//! Raw compute kernels on flat row-major buffers.
//!
//! Everything here is a pure function: validation, gradient recording and
//! tensor bookkeeping live in `ops`. All reductions run in a fixed order so
//! results are bit-reproducible.

use super::{ef, note_clamp_warning, Elem};

/// out[m x n] += a[m x kd] * b[kd x n]
pub fn matmul_acc<E: Elem>(a: &[E], b: &[E], out: &mut [E], m: usize, kd: usize, n: usize) {
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), kd * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * kd..(i + 1) * kd];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// y += alpha * x
pub fn axpy<E: Elem>(alpha: E, x: &[E], y: &mut [E]) {
    debug_assert_eq!(x.len(), y.len());
    for (yy, &xx) in y.iter_mut().zip(x) {
        *yy = *yy + alpha * xx;
    }
}

/// Dot product with a fixed 8-lane accumulation tree (vectorizes, and the
/// summation order does not depend on data or thread count).
pub fn dot<E: Elem>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [E::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ai = &a[i * 8..i * 8 + 8];
        let bi = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + ai[l] * bi[l];
        }
    }
    let mut tail = E::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    let s0 = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let s1 = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    s0 + s1 + tail
}

/// Unfold one sample [ci x h x w] into columns [ci*k*k x h*w] for a stride-1
/// same-padded convolution (pad = (k-1)/2, zero fill).
pub fn im2col<E: Elem>(
    input: &[E],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    col: &mut [E],
) {
    let hw = h * w;
    debug_assert_eq!(input.len(), ci * hw);
    debug_assert_eq!(col.len(), ci * k * k * hw);
    let mut row_off = 0;
    for c in 0..ci {
        let plane = &input[c * hw..(c + 1) * hw];
        for u in 0..k {
            for v in 0..k {
                let dst_all = &mut col[row_off..row_off + hw];
                row_off += hw;
                let shift = v as isize - pad as isize; // sx = x + shift
                for y in 0..h {
                    let dst = &mut dst_all[y * w..y * w + w];
                    let sy = y as isize + u as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(E::zero());
                        continue;
                    }
                    let src_row = &plane[(sy as usize) * w..(sy as usize) * w + w];
                    if shift >= 0 {
                        let s = shift as usize;
                        if s >= w {
                            dst.fill(E::zero());
                            continue;
                        }
                        let valid = w - s;
                        dst[..valid].copy_from_slice(&src_row[s..]);
                        dst[valid..].fill(E::zero());
                    } else {
                        let s = (-shift) as usize;
                        if s >= w {
                            dst.fill(E::zero());
                            continue;
                        }
                        dst[..s].fill(E::zero());
                        dst[s..].copy_from_slice(&src_row[..w - s]);
                    }
                }
            }
        }
    }
}

/// Stride-1 same-padded cross-correlation.
/// input [n x ci x h x w], weight [co x ci x k x k] -> [n x co x h x w]
pub fn conv2d_fwd<E: Elem>(
    input: &[E],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    weight: &[E],
    co: usize,
    k: usize,
    pad: usize,
    bias: Option<&[E]>,
) -> Vec<E> {
    let hw = h * w;
    let mut out = vec![E::zero(); n * co * hw];
    if k == 1 {
        for s in 0..n {
            let x = &input[s * ci * hw..][..ci * hw];
            let o = &mut out[s * co * hw..][..co * hw];
            matmul_acc(weight, x, o, co, ci, hw);
        }
    } else {
        let mut col = vec![E::zero(); ci * k * k * hw];
        for s in 0..n {
            let x = &input[s * ci * hw..][..ci * hw];
            im2col(x, ci, h, w, k, pad, &mut col);
            let o = &mut out[s * co * hw..][..co * hw];
            matmul_acc(weight, &col, o, co, ci * k * k, hw);
        }
    }
    if let Some(b) = bias {
        for s in 0..n {
            for c in 0..co {
                let bc = b[c];
                for v in &mut out[(s * co + c) * hw..][..hw] {
                    *v = *v + bc;
                }
            }
        }
    }
    out
}

/// Gradient of conv2d with respect to its input: a same-padded convolution of
/// the output gradient with the spatially flipped, channel-transposed kernel.
pub fn conv2d_bwd_input<E: Elem>(
    go: &[E],
    n: usize,
    co: usize,
    h: usize,
    w: usize,
    weight: &[E],
    ci: usize,
    k: usize,
    pad: usize,
) -> Vec<E> {
    let mut wt = vec![E::zero(); ci * co * k * k];
    for o in 0..co {
        for c in 0..ci {
            for u in 0..k {
                for v in 0..k {
                    wt[((c * co + o) * k + u) * k + v] =
                        weight[((o * ci + c) * k + (k - 1 - u)) * k + (k - 1 - v)];
                }
            }
        }
    }
    conv2d_fwd(go, n, co, h, w, &wt, ci, k, pad, None)
}

/// Gradient of conv2d with respect to its weight.
pub fn conv2d_bwd_weight<E: Elem>(
    input: &[E],
    go: &[E],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    pad: usize,
) -> Vec<E> {
    let hw = h * w;
    let ckk = ci * k * k;
    let mut dw = vec![E::zero(); co * ckk];
    if k == 1 {
        for s in 0..n {
            let x = &input[s * ci * hw..][..ci * hw];
            let g = &go[s * co * hw..][..co * hw];
            for o in 0..co {
                let grow = &g[o * hw..][..hw];
                for c in 0..ci {
                    dw[o * ci + c] = dw[o * ci + c] + dot(grow, &x[c * hw..][..hw]);
                }
            }
        }
    } else {
        let mut col = vec![E::zero(); ckk * hw];
        for s in 0..n {
            im2col(&input[s * ci * hw..][..ci * hw], ci, h, w, k, pad, &mut col);
            let g = &go[s * co * hw..][..co * hw];
            for o in 0..co {
                let grow = &g[o * hw..][..hw];
                let drow = &mut dw[o * ckk..][..ckk];
                for (r, d) in drow.iter_mut().enumerate() {
                    *d = *d + dot(grow, &col[r * hw..][..hw]);
                }
            }
        }
    }
    dw
}

pub fn conv2d_bwd_bias<E: Elem>(go: &[E], n: usize, co: usize, hw: usize) -> Vec<E> {
    let mut db = vec![E::zero(); co];
    for s in 0..n {
        for c in 0..co {
            let mut acc = E::zero();
            for &g in &go[(s * co + c) * hw..][..hw] {
                acc = acc + g;
            }
            db[c] = db[c] + acc;
        }
    }
    db
}

/// x [b x din], weight [dout x din] -> [b x dout]
pub fn linear_fwd<E: Elem>(
    x: &[E],
    b: usize,
    din: usize,
    weight: &[E],
    dout: usize,
    bias: Option<&[E]>,
) -> Vec<E> {
    let mut out = vec![E::zero(); b * dout];
    for i in 0..b {
        let xrow = &x[i * din..(i + 1) * din];
        let orow = &mut out[i * dout..(i + 1) * dout];
        for (o, ov) in orow.iter_mut().enumerate() {
            *ov = dot(xrow, &weight[o * din..(o + 1) * din]);
        }
        if let Some(bs) = bias {
            for (ov, &bv) in orow.iter_mut().zip(bs) {
                *ov = *ov + bv;
            }
        }
    }
    out
}

pub fn linear_bwd_input<E: Elem>(go: &[E], b: usize, dout: usize, weight: &[E], din: usize) -> Vec<E> {
    let mut dx = vec![E::zero(); b * din];
    matmul_acc(go, weight, &mut dx, b, dout, din);
    dx
}

pub fn linear_bwd_weight<E: Elem>(x: &[E], go: &[E], b: usize, din: usize, dout: usize) -> Vec<E> {
    let mut dw = vec![E::zero(); dout * din];
    for i in 0..b {
        let xrow = &x[i * din..(i + 1) * din];
        let grow = &go[i * dout..(i + 1) * dout];
        for (o, &g) in grow.iter().enumerate() {
            axpy(g, xrow, &mut dw[o * din..(o + 1) * din]);
        }
    }
    dw
}

pub fn linear_bwd_bias<E: Elem>(go: &[E], b: usize, dout: usize) -> Vec<E> {
    let mut db = vec![E::zero(); dout];
    for i in 0..b {
        for (d, &g) in db.iter_mut().zip(&go[i * dout..(i + 1) * dout]) {
            *d = *d + g;
        }
    }
    db
}

// ---------------------------------------------------------------------------
// bilinear sampling

/// Four-texel footprint of one bilinear query, with weights kept in f64 until
/// the arithmetic happens in the element type.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTap {
    pub i00: usize,
    pub i01: usize,
    pub i10: usize,
    pub i11: usize,
    pub w00: f64,
    pub w01: f64,
    pub w10: f64,
    pub w11: f64,
}

/// Resolve query coordinates (cell-center convention, clamp-to-edge) into
/// texel taps. Coordinates far outside the source extent (beyond one pixel of
/// margin) bump the clamp warning counter.
pub fn bilinear_taps(coords: &[[f64; 2]], h: usize, w: usize) -> Vec<BilinearTap> {
    let hm = (h - 1) as f64;
    let wm = (w - 1) as f64;
    coords
        .iter()
        .map(|&[y, x]| {
            if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
                note_clamp_warning();
            }
            let yc = y.clamp(0.0, hm);
            let xc = x.clamp(0.0, wm);
            let y0 = yc.floor();
            let x0 = xc.floor();
            let ty = yc - y0;
            let tx = xc - x0;
            let y0u = y0 as usize;
            let x0u = x0 as usize;
            let y1 = (y0u + 1).min(h - 1);
            let x1 = (x0u + 1).min(w - 1);
            BilinearTap {
                i00: y0u * w + x0u,
                i01: y0u * w + x1,
                i10: y1 * w + x0u,
                i11: y1 * w + x1,
                w00: (1.0 - ty) * (1.0 - tx),
                w01: (1.0 - ty) * tx,
                w10: ty * (1.0 - tx),
                w11: ty * tx,
            }
        })
        .collect()
}

/// feature [c x h x w] sampled at taps -> [c x m]
pub fn grid_sample_fwd<E: Elem>(feature: &[E], c: usize, hw: usize, taps: &[BilinearTap]) -> Vec<E> {
    let m = taps.len();
    let mut out = vec![E::zero(); c * m];
    for ch in 0..c {
        let plane = &feature[ch * hw..(ch + 1) * hw];
        let orow = &mut out[ch * m..(ch + 1) * m];
        for (o, t) in orow.iter_mut().zip(taps) {
            *o = ef::<E>(t.w00) * plane[t.i00]
                + ef::<E>(t.w01) * plane[t.i01]
                + ef::<E>(t.w10) * plane[t.i10]
                + ef::<E>(t.w11) * plane[t.i11];
        }
    }
    out
}

pub fn grid_sample_bwd<E: Elem>(go: &[E], c: usize, hw: usize, taps: &[BilinearTap]) -> Vec<E> {
    let m = taps.len();
    let mut dfeat = vec![E::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut dfeat[ch * hw..(ch + 1) * hw];
        let grow = &go[ch * m..(ch + 1) * m];
        for (&g, t) in grow.iter().zip(taps) {
            plane[t.i00] = plane[t.i00] + ef::<E>(t.w00) * g;
            plane[t.i01] = plane[t.i01] + ef::<E>(t.w01) * g;
            plane[t.i10] = plane[t.i10] + ef::<E>(t.w10) * g;
            plane[t.i11] = plane[t.i11] + ef::<E>(t.w11) * g;
        }
    }
    dfeat
}

// ---------------------------------------------------------------------------
// channel layer norm

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Normalize over the channel axis per spatial site.
/// x [n x c x s] where s is the flattened spatial extent.
pub fn layer_norm_fwd<E: Elem>(
    x: &[E],
    n: usize,
    c: usize,
    s: usize,
    gain: &[E],
    offset: &[E],
) -> Vec<E> {
    let eps = ef::<E>(LAYER_NORM_EPS);
    let inv_c = ef::<E>(1.0 / c as f64);
    let mut out = vec![E::zero(); n * c * s];
    for sm in 0..n {
        let base = sm * c * s;
        for j in 0..s {
            let mut mean = E::zero();
            for ch in 0..c {
                mean = mean + x[base + ch * s + j];
            }
            mean = mean * inv_c;
            let mut var = E::zero();
            for ch in 0..c {
                let d = x[base + ch * s + j] - mean;
                var = var + d * d;
            }
            var = var * inv_c;
            let inv = (var + eps).sqrt().recip();
            for ch in 0..c {
                let idx = base + ch * s + j;
                out[idx] = (x[idx] - mean) * inv * gain[ch] + offset[ch];
            }
        }
    }
    out
}

/// Returns (dx, dgain, doffset).
pub fn layer_norm_bwd<E: Elem>(
    x: &[E],
    go: &[E],
    n: usize,
    c: usize,
    s: usize,
    gain: &[E],
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let eps = ef::<E>(LAYER_NORM_EPS);
    let inv_c = ef::<E>(1.0 / c as f64);
    let mut dx = vec![E::zero(); n * c * s];
    let mut dgain = vec![E::zero(); c];
    let mut doffset = vec![E::zero(); c];
    let mut xhat = vec![E::zero(); c];
    let mut gh = vec![E::zero(); c];
    for sm in 0..n {
        let base = sm * c * s;
        for j in 0..s {
            let mut mean = E::zero();
            for ch in 0..c {
                mean = mean + x[base + ch * s + j];
            }
            mean = mean * inv_c;
            let mut var = E::zero();
            for ch in 0..c {
                let d = x[base + ch * s + j] - mean;
                var = var + d * d;
            }
            var = var * inv_c;
            let inv = (var + eps).sqrt().recip();
            let mut mg = E::zero();
            let mut mgx = E::zero();
            for ch in 0..c {
                let idx = base + ch * s + j;
                xhat[ch] = (x[idx] - mean) * inv;
                gh[ch] = go[idx] * gain[ch];
                mg = mg + gh[ch];
                mgx = mgx + gh[ch] * xhat[ch];
                dgain[ch] = dgain[ch] + go[idx] * xhat[ch];
                doffset[ch] = doffset[ch] + go[idx];
            }
            mg = mg * inv_c;
            mgx = mgx * inv_c;
            for ch in 0..c {
                dx[base + ch * s + j] = inv * (gh[ch] - mg - xhat[ch] * mgx);
            }
        }
    }
    (dx, dgain, doffset)
}

// ---------------------------------------------------------------------------
// 2x2 average pooling (ceil mode, clamped windows)

pub fn pool_out_extent(v: usize) -> usize {
    v.div_ceil(2)
}

pub fn avg_pool2_fwd<E: Elem>(x: &[E], n: usize, c: usize, h: usize, w: usize) -> Vec<E> {
    let oh = pool_out_extent(h);
    let ow = pool_out_extent(w);
    let mut out = vec![E::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let plane = &x[p * h * w..(p + 1) * h * w];
        let oplane = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let y1 = (2 * oy + 2).min(h);
            for ox in 0..ow {
                let x1 = (2 * ox + 2).min(w);
                let mut acc = E::zero();
                let mut count = 0usize;
                for y in 2 * oy..y1 {
                    for xx in 2 * ox..x1 {
                        acc = acc + plane[y * w + xx];
                        count += 1;
                    }
                }
                oplane[oy * ow + ox] = acc * ef::<E>(1.0 / count as f64);
            }
        }
    }
    out
}

pub fn avg_pool2_bwd<E: Elem>(go: &[E], n: usize, c: usize, h: usize, w: usize) -> Vec<E> {
    let oh = pool_out_extent(h);
    let ow = pool_out_extent(w);
    let mut dx = vec![E::zero(); n * c * h * w];
    for p in 0..n * c {
        let gplane = &go[p * oh * ow..(p + 1) * oh * ow];
        let dplane = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let y1 = (2 * oy + 2).min(h);
            for ox in 0..ow {
                let x1 = (2 * ox + 2).min(w);
                let count = (y1 - 2 * oy) * (x1 - 2 * ox);
                let g = gplane[oy * ow + ox] * ef::<E>(1.0 / count as f64);
                for y in 2 * oy..y1 {
                    for xx in 2 * ox..x1 {
                        dplane[y * w + xx] = dplane[y * w + xx] + g;
                    }
                }
            }
        }
    }
    dx
}
