//! Feature-modulation fusion, the two-decoder progressive upsampler, and the
//! end-to-end network realizing the coordinate-to-value mapping.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{convert_frame, make_target_grid, Provenance, Query, ScaleSpec, WarpMap};
use crate::gsa::{GsaGroup, ENCODER_HIDDEN};
use crate::nn::{uniform_vec, Conv2d};
use crate::tensor::{ops, Elem, Tensor};

/// Architecture description. `channels` is 128 for the full model, 64 for the
/// small one; the desk preset keeps training runs in CPU territory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub channels: usize,
    pub blocks_per_group: usize,
    pub kernel_window: usize,
    pub encoder_hidden: usize,
    pub use_gsa: bool,
    pub use_modulation_fusion: bool,
    pub two_step_upsampling: bool,
    pub global_residual: bool,
}

impl NetworkConfig {
    pub fn full() -> Self {
        NetworkConfig {
            channels: 128,
            blocks_per_group: 4,
            kernel_window: 3,
            encoder_hidden: ENCODER_HIDDEN,
            use_gsa: true,
            use_modulation_fusion: true,
            two_step_upsampling: true,
            global_residual: true,
        }
    }

    pub fn small() -> Self {
        NetworkConfig {
            channels: 64,
            ..Self::full()
        }
    }

    /// CPU-friendly configuration for synthetic-data runs.
    pub fn desk() -> Self {
        NetworkConfig {
            channels: 16,
            blocks_per_group: 1,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks_per_group == 0 {
            return Err(Error::InvalidArgument(
                "channels and blocks_per_group must be positive".into(),
            ));
        }
        if self.kernel_window % 2 == 0 {
            return Err(Error::InvalidArgument(
                "kernel window must be odd".into(),
            ));
        }
        Ok(())
    }
}

/// 1x1 convolution applied to the elementwise product of guide and depth
/// features.
pub struct FeatureModulation<E: Elem = f32> {
    pub weight: Tensor<E>, // [c, c, 1, 1]
    pub bias: Tensor<E>,   // [c]
}

impl<E: Elem> FeatureModulation<E> {
    pub fn new(rng: &mut impl Rng, c: usize) -> Self {
        let bound = 1.0 / (c as f64).sqrt();
        FeatureModulation {
            weight: Tensor::param(uniform_vec(rng, c * c, bound), &[c, c, 1, 1])
                .expect("finite init"),
            bias: Tensor::param(uniform_vec(rng, c, bound), &[c]).expect("finite init"),
        }
    }
}

/// AND-like fusion: omega * (x_guide (*) x_depth) + b at every query point.
/// Both inputs are [c, m] feature/point matrices resampled to the same query
/// coordinates.
pub fn modulate<E: Elem>(
    x_guide: &Tensor<E>,
    x_depth: &Tensor<E>,
    fm: &FeatureModulation<E>,
) -> Result<Tensor<E>> {
    if x_guide.shape() != x_depth.shape() || x_guide.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            op: "modulate",
            detail: format!("{:?} vs {:?}", x_guide.shape(), x_depth.shape()),
        });
    }
    let (c, m) = (x_guide.shape()[0], x_guide.shape()[1]);
    let prod = ops::mul(x_guide, x_depth)?;
    let fused = ops::conv2d(&prod.reshape(&[1, c, 1, m])?, &fm.weight, Some(&fm.bias), 0)?;
    fused.reshape(&[c, m])
}

/// Guide/depth fusion variant selected by `use_modulation_fusion`.
pub enum Fusion<E: Elem = f32> {
    Modulation(FeatureModulation<E>),
    /// Ablation: concatenate channels and mix with a 1x1 convolution.
    Concat { weight: Tensor<E>, bias: Tensor<E> },
}

impl<E: Elem> Fusion<E> {
    fn new(rng: &mut impl Rng, c: usize, use_modulation: bool) -> Self {
        if use_modulation {
            Fusion::Modulation(FeatureModulation::new(rng, c))
        } else {
            let bound = 1.0 / ((2 * c) as f64).sqrt();
            Fusion::Concat {
                weight: Tensor::param(uniform_vec(rng, c * 2 * c, bound), &[c, 2 * c, 1, 1])
                    .expect("finite init"),
                bias: Tensor::param(uniform_vec(rng, c, bound), &[c]).expect("finite init"),
            }
        }
    }

    fn fuse(&self, x_guide: &Tensor<E>, x_depth: &Tensor<E>) -> Result<Tensor<E>> {
        match self {
            Fusion::Modulation(fm) => modulate(x_guide, x_depth, fm),
            Fusion::Concat { weight, bias } => {
                let (c, m) = (x_guide.shape()[0], x_guide.shape()[1]);
                let cat = ops::concat0(&[x_guide, x_depth])?;
                let fused = ops::conv2d(&cat.reshape(&[1, 2 * c, 1, m])?, weight, Some(bias), 0)?;
                fused.reshape(&[c, m])
            }
        }
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        match self {
            Fusion::Modulation(fm) => {
                out.push((format!("{prefix}.fuse.weight"), fm.weight.clone()));
                out.push((format!("{prefix}.fuse.bias"), fm.bias.clone()));
            }
            Fusion::Concat { weight, bias } => {
                out.push((format!("{prefix}.fuse_concat.weight"), weight.clone()));
                out.push((format!("{prefix}.fuse_concat.bias"), bias.clone()));
            }
        }
    }
}

/// conv -> relu -> conv with a skip connection.
pub struct ResBlock<E: Elem = f32> {
    pub conv1: Conv2d<E>,
    pub conv2: Conv2d<E>,
}

impl<E: Elem> ResBlock<E> {
    fn new(rng: &mut impl Rng, c: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(rng, c, c, 3),
            conv2: Conv2d::new(rng, c, c, 3),
        }
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.conv2.forward(&ops::relu(&self.conv1.forward(x)?)?)?;
        ops::add(x, &y)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
    }
}

/// Feature decoder: fusion at the query coordinates followed by two residual
/// refinement blocks on the output lattice.
pub struct Decoder<E: Elem = f32> {
    pub fusion: Fusion<E>,
    pub body: [ResBlock<E>; 2],
}

impl<E: Elem> Decoder<E> {
    pub fn new(rng: &mut impl Rng, c: usize, use_modulation: bool) -> Self {
        Decoder {
            fusion: Fusion::new(rng, c, use_modulation),
            body: [ResBlock::new(rng, c), ResBlock::new(rng, c)],
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.fusion.collect_params(prefix, out);
        self.body[0].collect_params(&format!("{prefix}.body.0"), out);
        self.body[1].collect_params(&format!("{prefix}.body.1"), out);
    }
}

/// Round-half-up arithmetic mean of the source and target lattice extents.
pub fn intermediate_shape(source: (usize, usize), target: (usize, usize)) -> (usize, usize) {
    (
        (source.0 + target.0 + 1) / 2,
        (source.1 + target.1 + 1) / 2,
    )
}

/// Resample both feature sets to the query coordinates, fuse them, and refine
/// on the output lattice. The query's coordinates live in `depth_feats`'
/// pixel frame; the matching guide-frame coordinates are derived internally.
pub fn decode_stage<E: Elem, Q: Query + ?Sized>(
    depth_feats: &Tensor<E>,
    guide_feats: &Tensor<E>,
    query: &Q,
    decoder: &Decoder<E>,
) -> Result<Tensor<E>> {
    if depth_feats.ndim() != 3 || guide_feats.ndim() != 3 {
        return Err(Error::ShapeMismatch {
            op: "decode_stage",
            detail: format!(
                "features must be [c,h,w], got {:?} and {:?}",
                depth_feats.shape(),
                guide_feats.shape()
            ),
        });
    }
    let (dh, dw) = (depth_feats.shape()[1], depth_feats.shape()[2]);
    if query.source_extents() != (dh, dw) {
        return Err(Error::InvalidArgument(format!(
            "query frame {:?} does not match depth features {}x{}",
            query.source_extents(),
            dh,
            dw
        )));
    }
    let (oh, ow) = query.output_extents().ok_or_else(|| {
        Error::InvalidArgument("decode stage requires an output lattice shape".into())
    })?;
    let c = depth_feats.shape()[0];
    let fd = ops::grid_sample(depth_feats, query.coords())?;
    let guide_coords = convert_frame(
        query.coords(),
        (dh, dw),
        (guide_feats.shape()[1], guide_feats.shape()[2]),
    );
    let fg = ops::grid_sample(guide_feats, &guide_coords)?;
    let fused = decoder.fusion.fuse(&fg, &fd)?;
    let mut x = fused.reshape(&[1, c, oh, ow])?;
    for block in &decoder.body {
        x = block.forward(&x)?;
    }
    x.reshape(&[c, oh, ow])
}

/// Intermediate feature maps captured during a traced forward pass.
pub type FeatureTrace<E> = Vec<(&'static str, Tensor<E>)>;

/// The assembled network: heads, one guide GSA group, two depth GSA groups, a
/// two-decoder progressive upsampler, and the output head.
pub struct GeoDsrNetwork<E: Elem = f32> {
    pub config: NetworkConfig,
    pub guide_head: Conv2d<E>,
    pub depth_head: Conv2d<E>,
    pub guide_group: GsaGroup<E>,
    pub depth_groups: Vec<GsaGroup<E>>,
    pub decoder1: Decoder<E>,
    pub decoder2: Decoder<E>,
    pub out_head: Conv2d<E>,
}

impl<E: Elem> std::fmt::Debug for GeoDsrNetwork<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "GeoDsrNetwork{{ config: {:?}, params: {} }}",
            self.config,
            self.param_count()
        )
    }
}

impl<E: Elem> GeoDsrNetwork<E> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let k = config.kernel_window;
        let hid = config.encoder_hidden;
        Ok(GeoDsrNetwork {
            guide_head: Conv2d::new(&mut rng, 3, c, 3),
            depth_head: Conv2d::new(&mut rng, 1, c, 3),
            guide_group: GsaGroup::new(&mut rng, c, config.blocks_per_group, k, hid, config.use_gsa),
            depth_groups: (0..2)
                .map(|_| GsaGroup::new(&mut rng, c, config.blocks_per_group, k, hid, config.use_gsa))
                .collect(),
            decoder1: Decoder::new(&mut rng, c, config.use_modulation_fusion),
            decoder2: Decoder::new(&mut rng, c, config.use_modulation_fusion),
            out_head: Conv2d::new(&mut rng, c, 1, 1),
            config,
        })
    }

    /// All trainable parameters with stable path-like names.
    pub fn named_params(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.guide_head.collect_params("guide_head", &mut out);
        self.depth_head.collect_params("depth_head", &mut out);
        self.guide_group.collect_params("guide_group", &mut out);
        for (i, g) in self.depth_groups.iter().enumerate() {
            g.collect_params(&format!("depth_groups.{i}"), &mut out);
        }
        self.decoder1.collect_params("decoder1", &mut out);
        self.decoder2.collect_params("decoder2", &mut out);
        self.out_head.collect_params("out_head", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<E>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Predict depth values at the query coordinates.
    ///
    /// `d_l` is the [1, h, w] low-resolution depth normalized to [0, 1],
    /// `y_h` the [3, H, W] high-resolution guide; query coordinates live in
    /// the low-resolution depth frame. Returns [1, out_h, out_w] on the
    /// query's output lattice.
    pub fn forward<Q: Query + ?Sized>(
        &self,
        d_l: &Tensor<E>,
        y_h: &Tensor<E>,
        query: &Q,
        spec: &ScaleSpec,
    ) -> Result<Tensor<E>> {
        self.forward_impl(d_l, y_h, query, spec, None)
    }

    /// Forward pass that also returns named intermediate feature maps.
    pub fn forward_traced<Q: Query + ?Sized>(
        &self,
        d_l: &Tensor<E>,
        y_h: &Tensor<E>,
        query: &Q,
        spec: &ScaleSpec,
    ) -> Result<(Tensor<E>, FeatureTrace<E>)> {
        let mut trace = Vec::new();
        let out = self.forward_impl(d_l, y_h, query, spec, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn forward_impl<Q: Query + ?Sized>(
        &self,
        d_l: &Tensor<E>,
        y_h: &Tensor<E>,
        query: &Q,
        spec: &ScaleSpec,
        mut trace: Option<&mut FeatureTrace<E>>,
    ) -> Result<Tensor<E>> {
        if d_l.ndim() != 3 || d_l.shape()[0] != 1 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("depth must be [1,h,w], got {:?}", d_l.shape()),
            });
        }
        if y_h.ndim() != 3 || y_h.shape()[0] != 3 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("guide must be [3,H,W], got {:?}", y_h.shape()),
            });
        }
        let (h, w) = (d_l.shape()[1], d_l.shape()[2]);
        let (gh, gw) = (y_h.shape()[1], y_h.shape()[2]);
        if query.source_extents() != (h, w) {
            return Err(Error::InvalidArgument(format!(
                "query frame {:?} does not match depth extents {}x{}",
                query.source_extents(),
                h,
                w
            )));
        }
        let (oh, ow) = query.output_extents().ok_or_else(|| {
            Error::InvalidArgument("forward requires an output lattice shape".into())
        })?;
        let c = self.config.channels;

        let g0 = self.guide_head.forward(&y_h.reshape(&[1, 3, gh, gw])?)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(("guide_head", g0.clone()));
        }
        let gf = self.guide_group.forward(&g0, spec)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(("guide_features", gf.clone()));
        }
        let d0 = self.depth_head.forward(&d_l.reshape(&[1, 1, h, w])?)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(("depth_head", d0.clone()));
        }
        let mut df = d0;
        for (i, group) in self.depth_groups.iter().enumerate() {
            df = group.forward(&df, spec)?;
            if let Some(t) = trace.as_deref_mut() {
                let name: &'static str = if i == 0 { "depth_group_0" } else { "depth_group_1" };
                t.push((name, df.clone()));
            }
        }
        let gf3 = gf.reshape(&[c, gh, gw])?;
        let df3 = df.reshape(&[c, h, w])?;

        let final_feats = if self.config.two_step_upsampling {
            let (hm, wm) = intermediate_shape((h, w), (oh, ow));
            let grid1 = make_target_grid(h, w, hm, wm)?;
            let f1 = decode_stage(&df3, &gf3, &grid1, &self.decoder1)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(("decoder1", f1.clone()));
            }
            // geometric deformation applies only at the final sampling stage;
            // decoder1 always targets the regular intermediate lattice
            let coords2 = convert_frame(query.coords(), (h, w), (hm, wm));
            let q2 = WarpMap::new(coords2, hm, wm, oh, ow, Provenance::Manual)?;
            decode_stage(&f1, &gf3, &q2, &self.decoder2)?
        } else {
            // ablation: the first decoder jumps straight to the final query;
            // the second refines on that lattice
            let q1 = WarpMap::new(
                query.coords().to_vec(),
                h,
                w,
                oh,
                ow,
                Provenance::Manual,
            )?;
            let f1 = decode_stage(&df3, &gf3, &q1, &self.decoder1)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(("decoder1", f1.clone()));
            }
            let ident = make_target_grid(oh, ow, oh, ow)?;
            decode_stage(&f1, &gf3, &ident, &self.decoder2)?
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(("decoder2", final_feats.clone()));
        }

        let out = self
            .out_head
            .forward(&final_feats.reshape(&[1, c, oh, ow])?)?;
        let mut out3 = out.reshape(&[1, oh, ow])?;
        if self.config.global_residual {
            let up = ops::grid_sample(d_l, query.coords())?;
            out3 = ops::add(&out3, &up.reshape(&[1, oh, ow])?)?;
        }
        Ok(out3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CoordGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_vec(uniform_vec(r, shape.iter().product(), 1.0), shape).unwrap()
    }

    #[test]
    fn modulate_zero_depth_gives_bias() {
        let mut r = rng();
        let fm: FeatureModulation = FeatureModulation::new(&mut r, 3);
        let fg = rand_tensor(&mut r, &[3, 4]);
        let fd = Tensor::zeros(&[3, 4]);
        let y = modulate(&fg, &fd, &fm).unwrap();
        let b = fm.bias.to_vec();
        for c in 0..3 {
            for m in 0..4 {
                assert_eq!(y.to_vec()[c * 4 + m], b[c]);
            }
        }
    }

    #[test]
    fn modulate_is_symmetric_in_inputs() {
        let mut r = rng();
        let fm: FeatureModulation = FeatureModulation::new(&mut r, 4);
        let a = rand_tensor(&mut r, &[4, 6]);
        let b = rand_tensor(&mut r, &[4, 6]);
        let y1 = modulate(&a, &b, &fm).unwrap();
        let y2 = modulate(&b, &a, &fm).unwrap();
        assert_eq!(y1.to_vec(), y2.to_vec());
    }

    #[test]
    fn modulate_hand_case() {
        let mut r = rng();
        let fm: FeatureModulation = FeatureModulation::new(&mut r, 1);
        fm.weight.set_data(&[2.0]).unwrap();
        fm.bias.set_data(&[1.0]).unwrap();
        let a = Tensor::from_vec(vec![3.0], &[1, 1]).unwrap();
        let b = Tensor::from_vec(vec![4.0], &[1, 1]).unwrap();
        assert_eq!(modulate(&a, &b, &fm).unwrap().item(), 25.0);
    }

    #[test]
    fn modulate_bilinear_in_depth() {
        let mut r = rng();
        let fm: FeatureModulation = FeatureModulation::new(&mut r, 3);
        fm.bias.set_data(&[0.0; 3]).unwrap();
        let fg = rand_tensor(&mut r, &[3, 5]);
        let fd = rand_tensor(&mut r, &[3, 5]);
        let scaled = ops::mul_scalar(&fd, 2.5f32).unwrap();
        let y1 = modulate(&fg, &scaled, &fm).unwrap();
        let y0 = modulate(&fg, &fd, &fm).unwrap();
        for (a, b) in y1.to_vec().iter().zip(y0.to_vec()) {
            assert!((a - 2.5 * b).abs() < 1e-5);
        }
    }

    #[test]
    fn intermediate_shape_cases() {
        assert_eq!(intermediate_shape((32, 32), (128, 128)), (80, 80));
        assert_eq!(intermediate_shape((7, 9), (7, 9)), (7, 9));
        assert_eq!(intermediate_shape((30, 40), (75, 101)), (53, 71));
    }

    fn zero_decoder_body(d: &Decoder) {
        for b in &d.body {
            b.conv2
                .weight
                .set_data(&vec![0.0; b.conv2.weight.numel()])
                .unwrap();
            b.conv2
                .bias
                .set_data(&vec![0.0; b.conv2.bias.numel()])
                .unwrap();
        }
    }

    #[test]
    fn decode_stage_identity_grid_zero_body_equals_fusion() {
        let mut r = rng();
        let dec: Decoder = Decoder::new(&mut r, 3, true);
        zero_decoder_body(&dec);
        let df = rand_tensor(&mut r, &[3, 4, 5]);
        let gf = rand_tensor(&mut r, &[3, 8, 10]);
        let grid = make_target_grid(4, 5, 4, 5).unwrap();
        let out = decode_stage(&df, &gf, &grid, &dec).unwrap();
        // manual: sample both, fuse
        let fd = ops::grid_sample(&df, grid.coords()).unwrap();
        let gcoords = convert_frame(grid.coords(), (4, 5), (8, 10));
        let fg = ops::grid_sample(&gf, &gcoords).unwrap();
        let want = match &dec.fusion {
            Fusion::Modulation(fm) => modulate(&fg, &fd, fm).unwrap(),
            _ => unreachable!(),
        };
        assert_eq!(out.to_vec(), want.to_vec());
    }

    #[test]
    fn decode_stage_doubles_extents_and_checks_frame() {
        let mut r = rng();
        let dec: Decoder = Decoder::new(&mut r, 3, true);
        let df = rand_tensor(&mut r, &[3, 4, 5]);
        let gf = rand_tensor(&mut r, &[3, 8, 10]);
        let grid = make_target_grid(4, 5, 8, 10).unwrap();
        let out = decode_stage(&df, &gf, &grid, &dec).unwrap();
        assert_eq!(out.shape(), &[3, 8, 10]);
        let bad = make_target_grid(5, 5, 8, 10).unwrap();
        assert!(decode_stage(&df, &gf, &bad, &dec).is_err());
    }

    fn tiny_net(seed: u64, config: NetworkConfig) -> GeoDsrNetwork {
        GeoDsrNetwork::new(config, seed).unwrap()
    }

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            channels: 4,
            blocks_per_group: 1,
            encoder_hidden: 8,
            ..NetworkConfig::full()
        }
    }

    fn tiny_inputs(r: &mut ChaCha8Rng, h: usize, w: usize, s: usize) -> (Tensor, Tensor) {
        let d: Vec<f32> = (0..h * w).map(|_| r.gen_range(0.0..1.0)).collect();
        let g: Vec<f32> = (0..3 * h * s * w * s).map(|_| r.gen_range(0.0..1.0)).collect();
        (
            Tensor::from_vec(d, &[1, h, w]).unwrap(),
            Tensor::from_vec(g, &[3, h * s, w * s]).unwrap(),
        )
    }

    #[test]
    fn forward_deterministic_and_shaped() {
        let net = tiny_net(3, tiny_config());
        let mut r = rng();
        let (d, g) = tiny_inputs(&mut r, 5, 6, 2);
        let grid = make_target_grid(5, 6, 10, 12).unwrap();
        let spec = ScaleSpec::from_extents(5, 6, 10, 12).unwrap();
        let a = net.forward(&d, &g, &grid, &spec).unwrap();
        let b = net.forward(&d, &g, &grid, &spec).unwrap();
        assert_eq!(a.shape(), &[1, 10, 12]);
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn warp_identical_to_regular_grid() {
        let net = tiny_net(4, tiny_config());
        let mut r = rng();
        let (d, g) = tiny_inputs(&mut r, 4, 4, 3);
        let grid = make_target_grid(4, 4, 12, 12).unwrap();
        let warp = WarpMap::new(grid.coords().to_vec(), 4, 4, 12, 12, Provenance::Manual).unwrap();
        let spec = ScaleSpec::isotropic(3.0).unwrap();
        let a = net.forward(&d, &g, &grid, &spec).unwrap();
        let b = net.forward(&d, &g, &warp, &spec).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn zero_out_head_with_residual_is_bilinear_upsampling() {
        let net = tiny_net(5, tiny_config());
        net.out_head
            .weight
            .set_data(&vec![0.0; net.out_head.weight.numel()])
            .unwrap();
        net.out_head.bias.set_data(&[0.0]).unwrap();
        let mut r = rng();
        let (d, g) = tiny_inputs(&mut r, 4, 5, 2);
        let grid = make_target_grid(4, 5, 8, 10).unwrap();
        let spec = ScaleSpec::isotropic(2.0).unwrap();
        let out = net.forward(&d, &g, &grid, &spec).unwrap();
        let up = ops::grid_sample(&d, grid.coords()).unwrap();
        assert_eq!(out.to_vec(), up.to_vec());
    }

    #[test]
    fn ablation_param_counts() {
        let full = tiny_net(9, tiny_config());
        let no_gsa = tiny_net(9, NetworkConfig { use_gsa: false, ..tiny_config() });
        let concat = tiny_net(9, NetworkConfig { use_modulation_fusion: false, ..tiny_config() });
        let one_step = tiny_net(9, NetworkConfig { two_step_upsampling: false, ..tiny_config() });
        assert!(no_gsa.param_count() < full.param_count());
        assert!(concat.param_count() > full.param_count());
        assert_eq!(one_step.param_count(), full.param_count());
    }

    #[test]
    fn no_gsa_model_ignores_scale() {
        let net = tiny_net(11, NetworkConfig { use_gsa: false, ..tiny_config() });
        let mut r = rng();
        let (d, g) = tiny_inputs(&mut r, 4, 4, 2);
        let grid = make_target_grid(4, 4, 8, 8).unwrap();
        let a = net
            .forward(&d, &g, &grid, &ScaleSpec::isotropic(2.0).unwrap())
            .unwrap();
        let b = net
            .forward(&d, &g, &grid, &ScaleSpec::isotropic(16.0).unwrap())
            .unwrap();
        assert_eq!(a.to_vec(), b.to_vec());

        let full = tiny_net(11, tiny_config());
        let fa = full
            .forward(&d, &g, &grid, &ScaleSpec::isotropic(2.0).unwrap())
            .unwrap();
        let fb = full
            .forward(&d, &g, &grid, &ScaleSpec::isotropic(16.0).unwrap())
            .unwrap();
        let diff = fa
            .to_vec()
            .iter()
            .zip(fb.to_vec())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn one_step_ablation_matches_two_step_at_identity_scale() {
        // same seed, the flag changes routing only, so identity-scale output
        // (where both routes visit the same lattices) must agree
        let two = tiny_net(13, tiny_config());
        let one = tiny_net(13, NetworkConfig { two_step_upsampling: false, ..tiny_config() });
        let mut r = rng();
        let (d, g) = tiny_inputs(&mut r, 5, 5, 1);
        let grid = make_target_grid(5, 5, 5, 5).unwrap();
        let spec = ScaleSpec::isotropic(1.0).unwrap();
        let a = two.forward(&d, &g, &grid, &spec).unwrap();
        let b = one.forward(&d, &g, &grid, &spec).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());

        // and at a real upsampling scale the routing difference shows
        let grid2 = make_target_grid(5, 5, 10, 10).unwrap();
        let spec2 = ScaleSpec::isotropic(2.0).unwrap();
        let a2 = two.forward(&d, &g, &grid2, &spec2).unwrap();
        let b2 = one.forward(&d, &g, &grid2, &spec2).unwrap();
        let diff = a2
            .to_vec()
            .iter()
            .zip(b2.to_vec())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn irregular_coord_grid_without_lattice_is_rejected() {
        let net = tiny_net(15, tiny_config());
        let mut r = rng();
        let (d, g) = tiny_inputs(&mut r, 4, 4, 2);
        let q = CoordGrid::from_coords(vec![[0.0, 0.0], [1.0, 1.0]], 4, 4).unwrap();
        let spec = ScaleSpec::isotropic(2.0).unwrap();
        assert!(net.forward(&d, &g, &q, &spec).is_err());
    }
}
