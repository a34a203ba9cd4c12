//! Small trainable layer primitives shared by the network modules.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{ef, ops, Elem, Tensor};

pub(crate) fn uniform_vec<E: Elem>(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<E> {
    (0..n).map(|_| ef::<E>(rng.gen_range(-bound..bound))).collect()
}

/// Stride-1 same-padded convolution layer.
pub struct Conv2d<E: Elem = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub padding: usize,
}

impl<E: Elem> Conv2d<E> {
    pub fn new(rng: &mut impl Rng, ci: usize, co: usize, k: usize) -> Self {
        let bound = 1.0 / ((ci * k * k) as f64).sqrt();
        Conv2d {
            weight: Tensor::param(uniform_vec(rng, co * ci * k * k, bound), &[co, ci, k, k])
                .expect("finite init"),
            bias: Tensor::param(uniform_vec(rng, co, bound), &[co]).expect("finite init"),
            padding: (k - 1) / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::conv2d(x, &self.weight, Some(&self.bias), self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Fully connected layer over the last axis.
pub struct Linear<E: Elem = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Elem> Linear<E> {
    pub fn new(rng: &mut impl Rng, din: usize, dout: usize) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        Linear {
            weight: Tensor::param(uniform_vec(rng, dout * din, bound), &[dout, din])
                .expect("finite init"),
            bias: Tensor::param(uniform_vec(rng, dout, bound), &[dout]).expect("finite init"),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::linear(x, &self.weight, &self.bias)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Channel layer norm with learnable gain/offset.
pub struct LayerNorm<E: Elem = f32> {
    pub gain: Tensor<E>,
    pub offset: Tensor<E>,
}

impl<E: Elem> LayerNorm<E> {
    pub fn new(c: usize) -> Self {
        LayerNorm {
            gain: Tensor::param(vec![E::one(); c], &[c]).expect("finite init"),
            offset: Tensor::param(vec![E::zero(); c], &[c]).expect("finite init"),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::layer_norm_channels(x, &self.gain, &self.offset)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.offset"), self.offset.clone()));
    }
}
