//! Independent oracles shared by the integration suites: naive reference
//! implementations and a central finite-difference gradient checker. Nothing
//! here calls back into the kernels it is used to verify.

#![allow(dead_code)]

use geodsr_core::tensor::{ops, Elem, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Direct sextuple-loop cross-correlation with zero padding (stride 1).
pub fn naive_conv2d(
    input: &[f64],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    co: usize,
    k: usize,
    pad: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; n * co * h * w];
    for s in 0..n {
        for o in 0..co {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.map(|b| b[o]).unwrap_or(0.0);
                    for c in 0..ci {
                        for u in 0..k {
                            for v in 0..k {
                                let sy = y as isize + u as isize - pad as isize;
                                let sx = x as isize + v as isize - pad as isize;
                                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((s * ci + c) * h + sy as usize) * w + sx as usize];
                                let wv = weight[((o * ci + c) * k + u) * k + v];
                                acc += iv * wv;
                            }
                        }
                    }
                    out[((s * co + o) * h + y) * w + x] = acc;
                }
            }
        }
    }
    out
}

/// Triple-loop matrix multiply: x [b x din] times weight^T [din x dout].
pub fn naive_linear(
    x: &[f64],
    b: usize,
    din: usize,
    weight: &[f64],
    dout: usize,
    bias: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; b * dout];
    for i in 0..b {
        for o in 0..dout {
            let mut acc = bias[o];
            for d in 0..din {
                acc += x[i * din + d] * weight[o * din + d];
            }
            out[i * dout + o] = acc;
        }
    }
    out
}

/// Closed-form four-texel bilinear interpolation with clamp-to-edge.
pub fn naive_bilinear(feature: &[f64], c: usize, h: usize, w: usize, y: f64, x: f64) -> Vec<f64> {
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ty = yc - y0 as f64;
    let tx = xc - x0 as f64;
    (0..c)
        .map(|ch| {
            let p = &feature[ch * h * w..];
            (1.0 - ty) * (1.0 - tx) * p[y0 * w + x0]
                + (1.0 - ty) * tx * p[y0 * w + x1]
                + ty * (1.0 - tx) * p[y1 * w + x0]
                + ty * tx * p[y1 * w + x1]
        })
        .collect()
}

pub fn rand_vec<E: Elem>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<E> {
    (0..n)
        .map(|_| E::from_f64(rng.gen_range(lo..hi)).unwrap())
        .collect()
}

pub fn rand_tensor<E: Elem>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<E> {
    Tensor::from_vec(rand_vec(rng, shape.iter().product(), lo, hi), shape).unwrap()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max)
}

pub fn max_abs_diff64(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

pub fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// A smooth, element-sensitive scalar functional of an op output: mean of
/// (large constant minus randomly weighted output). Linear in the output with
/// distinct per-element weights, so gradient errors cannot cancel, and the
/// absolute-value in the underlying mean never sits on its kink for bounded
/// outputs.
pub struct Probe<E: Elem> {
    weights: Tensor<E>,
    target: Tensor<E>,
}

impl<E: Elem> Probe<E> {
    pub fn new(rng: &mut ChaCha8Rng, shape: &[usize]) -> Self {
        Probe {
            weights: rand_tensor(rng, shape, 0.5, 1.5),
            target: Tensor::full(shape, E::from_f64(1000.0).unwrap()),
        }
    }

    pub fn loss(&self, out: &Tensor<E>) -> Tensor<E> {
        let weighted = ops::mul(out, &self.weights).unwrap();
        ops::l1_loss(&weighted, &self.target).unwrap()
    }
}

/// Worst relative disagreement between the taped analytic gradients and
/// central finite differences in f64, over every element of every parameter.
///
/// The finite-difference step is 1e-3 times the parameter's own scale.
/// Elements where both gradients are below 1e-7 in magnitude count as exact.
pub fn gradcheck<F>(params: &[Tensor<f64>], forward: F) -> f64
where
    F: Fn() -> Tensor<f64>,
{
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = forward();
    tape.backward(&loss).unwrap();
    drop(tape);
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let data = p.to_vec();
        for j in 0..data.len() {
            let h = 1e-3 * data[j].abs().max(1e-2);
            let mut plus = data.clone();
            plus[j] += h;
            p.set_data(&plus).unwrap();
            let lp = forward().item();
            let mut minus = data.clone();
            minus[j] -= h;
            p.set_data(&minus).unwrap();
            let lm = forward().item();
            p.set_data(&data).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[pi][j];
            let denom = a.abs().max(numeric.abs());
            if denom < 1e-7 {
                continue;
            }
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
