//! Geometric Spatial Aggregator: a convolution whose kernel is the Hadamard
//! product of a learned static kernel and a scale-conditioned dynamic
//! modulation derived from the reciprocal squared-distance field, plus the
//! transformer-style block and group built around it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    grid_sample_bilinear, make_target_grid, reciprocal_distance_field, ScaleSpec,
};
use crate::nn::{uniform_vec, Conv2d, LayerNorm, Linear};
use crate::tensor::{ops, Elem, Tensor};

/// Default hidden width of the geometric encoder.
pub const ENCODER_HIDDEN: usize = 32;

/// Two-layer perceptron applied independently to each offset's reciprocal
/// squared-distance scalar, producing one modulation value per
/// (offset, input-channel) pair.
pub struct GeometricEncoder<E: Elem = f32> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
    pub hidden: usize,
    pub c_mod: usize,
}

impl<E: Elem> GeometricEncoder<E> {
    /// The second layer starts near the constant-one map (small weights, unit
    /// bias) so an untrained aggregator behaves like its static kernel.
    pub fn new(rng: &mut impl Rng, hidden: usize, c_mod: usize) -> Self {
        let fc1 = Linear::new(rng, 1, hidden);
        let bound = 0.1 / (hidden as f64).sqrt();
        let fc2 = Linear {
            weight: Tensor::param(uniform_vec(rng, c_mod * hidden, bound), &[c_mod, hidden])
                .expect("finite init"),
            bias: Tensor::param(vec![E::one(); c_mod], &[c_mod]).expect("finite init"),
        };
        GeometricEncoder {
            fc1,
            fc2,
            hidden,
            c_mod,
        }
    }

    /// Pin the encoder to the constant function 1, collapsing the dynamic
    /// kernel onto the static one.
    pub fn freeze_unit(&self) {
        self.fc2
            .weight
            .set_data(&vec![E::zero(); self.fc2.weight.numel()])
            .unwrap();
        self.fc2
            .bias
            .set_data(&vec![E::one(); self.fc2.bias.numel()])
            .unwrap();
    }

    /// field [k*k, 1] -> modulation [k*k, c_mod]
    pub fn forward(&self, field: &Tensor<E>) -> Result<Tensor<E>> {
        let h = ops::relu(&self.fc1.forward(field)?)?;
        self.fc2.forward(&h)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.fc1.collect_params(&format!("{prefix}.fc1"), out);
        self.fc2.collect_params(&format!("{prefix}.fc2"), out);
    }
}

/// Modulation matrix [k*k, c_mod] for a scale: the encoder evaluated on each
/// entry of the reciprocal distance field. Offsets at equal squared distance
/// receive identical rows.
pub fn geometric_weights<E: Elem>(
    encoder: &GeometricEncoder<E>,
    spec: &ScaleSpec,
    k_s: usize,
) -> Result<Tensor<E>> {
    let field = reciprocal_distance_field::<E>(k_s, spec)?;
    encoder.forward(&field)
}

/// Static convolution kernel paired with a geometric encoder producing the
/// scale-conditioned modulation. Without an encoder the layer degrades to a
/// plain convolution on the static kernel.
pub struct GsaLayer<E: Elem = f32> {
    pub static_weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub k: usize,
    pub encoder: Option<GeometricEncoder<E>>,
}

impl<E: Elem> GsaLayer<E> {
    pub fn new(
        rng: &mut impl Rng,
        ci: usize,
        co: usize,
        k: usize,
        encoder_hidden: usize,
        use_gsa: bool,
    ) -> Self {
        assert!(k % 2 == 1, "kernel window must be odd");
        let bound = 1.0 / ((ci * k * k) as f64).sqrt();
        GsaLayer {
            static_weight: Tensor::param(uniform_vec(rng, co * ci * k * k, bound), &[co, ci, k, k])
                .expect("finite init"),
            bias: Tensor::param(uniform_vec(rng, co, bound), &[co]).expect("finite init"),
            k,
            encoder: use_gsa.then(|| GeometricEncoder::new(rng, encoder_hidden, ci)),
        }
    }

    /// Aggregate with the scale-modulated kernel. On a regular grid the
    /// modulated kernel is shared by every spatial site, so it is
    /// materialized once per (layer, scale) and run as a standard
    /// convolution.
    pub fn forward(&self, x: &Tensor<E>, spec: &ScaleSpec) -> Result<Tensor<E>> {
        let pad = (self.k - 1) / 2;
        match &self.encoder {
            Some(enc) => {
                let m = geometric_weights(enc, spec, self.k)?;
                let effective = ops::scale_kernel(&self.static_weight, &m)?;
                ops::conv2d(x, &effective, Some(&self.bias), pad)
            }
            None => ops::conv2d(x, &self.static_weight, Some(&self.bias), pad),
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.static_weight"), self.static_weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
        if let Some(enc) = &self.encoder {
            enc.collect_params(&format!("{prefix}.encoder"), out);
        }
    }
}

/// Transformer-style block with the aggregator in place of self-attention:
/// x + gsa(norm1(x)), then + ffn(norm2(.)) where ffn is two 1x1 convolutions
/// with relu and expansion x2.
pub struct GsaBlock<E: Elem = f32> {
    pub norm1: LayerNorm<E>,
    pub norm2: LayerNorm<E>,
    pub gsa: GsaLayer<E>,
    pub ffn1: Conv2d<E>,
    pub ffn2: Conv2d<E>,
}

impl<E: Elem> GsaBlock<E> {
    pub fn new(rng: &mut impl Rng, c: usize, k: usize, encoder_hidden: usize, use_gsa: bool) -> Self {
        GsaBlock {
            norm1: LayerNorm::new(c),
            norm2: LayerNorm::new(c),
            gsa: GsaLayer::new(rng, c, c, k, encoder_hidden, use_gsa),
            ffn1: Conv2d::new(rng, c, 2 * c, 1),
            ffn2: Conv2d::new(rng, 2 * c, c, 1),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, spec: &ScaleSpec) -> Result<Tensor<E>> {
        let y = ops::add(x, &self.gsa.forward(&self.norm1.forward(x)?, spec)?)?;
        let f = self.ffn2.forward(&ops::relu(&self.ffn1.forward(&self.norm2.forward(&y)?)?)?)?;
        ops::add(&y, &f)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.norm1.collect_params(&format!("{prefix}.norm1"), out);
        self.norm2.collect_params(&format!("{prefix}.norm2"), out);
        self.gsa.collect_params(&format!("{prefix}.gsa"), out);
        self.ffn1.collect_params(&format!("{prefix}.ffn1"), out);
        self.ffn2.collect_params(&format!("{prefix}.ffn2"), out);
    }
}

/// Enhanced spatial attention: a lightweight gate that squeezes channels,
/// aggregates context through a pooled convolution body, and produces a
/// sigmoid mask at the input resolution.
pub struct EsaModule<E: Elem = f32> {
    pub reduce: Conv2d<E>,
    pub conv1: Conv2d<E>,
    pub conv2: Conv2d<E>,
    pub expand: Conv2d<E>,
}

impl<E: Elem> EsaModule<E> {
    pub fn new(rng: &mut impl Rng, c: usize) -> Self {
        let cr = (c / 4).max(1);
        EsaModule {
            reduce: Conv2d::new(rng, c, cr, 1),
            conv1: Conv2d::new(rng, cr, cr, 3),
            conv2: Conv2d::new(rng, cr, cr, 3),
            expand: Conv2d::new(rng, cr, c, 1),
        }
    }

    /// x [1, c, h, w] -> gated x (mask values in (0,1)).
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        if x.ndim() != 4 || x.shape()[0] != 1 {
            return Err(Error::ShapeMismatch {
                op: "esa",
                detail: format!("expected [1,c,h,w], got {:?}", x.shape()),
            });
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let t = self.reduce.forward(x)?;
        let t = ops::avg_pool2(&t)?;
        let t = self.conv2.forward(&ops::relu(&self.conv1.forward(&t)?)?)?;
        // bilinear upsample the pooled context back to the input resolution
        let (cr, ph, pw) = (t.shape()[1], t.shape()[2], t.shape()[3]);
        let grid = make_target_grid(ph, pw, h, w)?;
        let up = grid_sample_bilinear(&t.reshape(&[cr, ph, pw])?, &grid)?;
        let up = up.reshape(&[1, cr, h, w])?;
        let mask = ops::sigmoid(&self.expand.forward(&up)?)?;
        ops::mul(x, &mask)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.reduce.collect_params(&format!("{prefix}.reduce"), out);
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        self.expand.collect_params(&format!("{prefix}.expand"), out);
    }
}

/// Several GSA blocks in series, ESA gating, and a residual over the whole
/// group.
pub struct GsaGroup<E: Elem = f32> {
    pub blocks: Vec<GsaBlock<E>>,
    pub esa: EsaModule<E>,
}

impl<E: Elem> GsaGroup<E> {
    pub fn new(
        rng: &mut impl Rng,
        c: usize,
        blocks: usize,
        k: usize,
        encoder_hidden: usize,
        use_gsa: bool,
    ) -> Self {
        GsaGroup {
            blocks: (0..blocks)
                .map(|_| GsaBlock::new(rng, c, k, encoder_hidden, use_gsa))
                .collect(),
            esa: EsaModule::new(rng, c),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, spec: &ScaleSpec) -> Result<Tensor<E>> {
        let mut y = x.clone();
        for block in &self.blocks {
            y = block.forward(&y, spec)?;
        }
        let gated = self.esa.forward(&y)?;
        ops::add(&gated, x)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&format!("{prefix}.blocks.{i}"), out);
        }
        self.esa.collect_params(&format!("{prefix}.esa"), out);
    }
}
