//! Coordinate frames, target grids, warp maps, the reciprocal-squared-distance
//! field, and bicubic resampling.
//!
//! All query coordinates live in the source image's own pixel frame under the
//! cell-center convention: pixel (i, j) sits at position (i, j), and an output
//! pixel (i, j) of a target grid maps to
//! ((i + 0.5) * source_h / target_h - 0.5, (j + 0.5) * source_w / target_w - 0.5).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ef, ops, Elem, Tensor};

/// Squared-distance clamp for the center tap of the reciprocal distance
/// field. Keeps the center finite and strictly larger than all neighbors.
pub const DISTANCE_FLOOR: f64 = 0.5;

// ---------------------------------------------------------------------------
// scale

/// Per-axis scale factors of a super-resolution query, plus the effective
/// scalar used by the distance field (geometric mean of the axes).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleSpec {
    pub s_y: f64,
    pub s_x: f64,
    pub s_eff: f64,
}

impl ScaleSpec {
    pub fn anisotropic(s_y: f64, s_x: f64) -> Result<ScaleSpec> {
        if !(s_y.is_finite() && s_x.is_finite()) || s_y <= 0.0 || s_x <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scale factors must be positive and finite, got ({s_y}, {s_x})"
            )));
        }
        Ok(ScaleSpec {
            s_y,
            s_x,
            s_eff: (s_y * s_x).sqrt(),
        })
    }

    pub fn isotropic(s: f64) -> Result<ScaleSpec> {
        ScaleSpec::anisotropic(s, s)
    }

    /// Effective per-axis scales of a (source_h, source_w) -> (target_h,
    /// target_w) resampling.
    pub fn from_extents(
        source_h: usize,
        source_w: usize,
        target_h: usize,
        target_w: usize,
    ) -> Result<ScaleSpec> {
        if source_h == 0 || source_w == 0 || target_h == 0 || target_w == 0 {
            return Err(Error::InvalidArgument(
                "extents must be at least 1".to_string(),
            ));
        }
        ScaleSpec::anisotropic(
            target_h as f64 / source_h as f64,
            target_w as f64 / source_w as f64,
        )
    }

    /// True when both axes upsample (the super-resolution regime). Warp
    /// queries may legitimately violate this.
    pub fn is_super_resolution(&self) -> bool {
        self.s_y >= 1.0 && self.s_x >= 1.0
    }
}

// ---------------------------------------------------------------------------
// query coordinate containers

/// Query coordinates in a source pixel frame. When `target_shape` is set the
/// grid is the regular cell-center mapping onto that lattice, in row-major
/// order.
#[derive(Clone, Debug)]
pub struct CoordGrid {
    coords: Vec<[f64; 2]>,
    pub source_h: usize,
    pub source_w: usize,
    pub target_shape: Option<(usize, usize)>,
}

impl CoordGrid {
    /// Arbitrary (irregular) coordinates in the given source frame.
    pub fn from_coords(coords: Vec<[f64; 2]>, source_h: usize, source_w: usize) -> Result<Self> {
        for (i, c) in coords.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(Error::NonFinite {
                    op: "CoordGrid",
                    detail: format!("coords[{i}] = ({}, {})", c[0], c[1]),
                });
            }
        }
        Ok(CoordGrid {
            coords,
            source_h,
            source_w,
            target_shape: None,
        })
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Where a warp map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    File,
    Affine,
    Manual,
}

/// An arbitrary list of query coordinates realizing spatially-continuous
/// sampling. The output is still a regular (out_h, out_w) pixel lattice; only
/// the locations sampled from the source are warped.
#[derive(Clone, Debug)]
pub struct WarpMap {
    coords: Vec<[f64; 2]>,
    pub source_h: usize,
    pub source_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub provenance: Provenance,
}

impl WarpMap {
    pub fn new(
        coords: Vec<[f64; 2]>,
        source_h: usize,
        source_w: usize,
        out_h: usize,
        out_w: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if coords.len() != out_h * out_w {
            return Err(Error::InvalidArgument(format!(
                "warp map has {} coordinates but declares {}x{} output pixels",
                coords.len(),
                out_h,
                out_w
            )));
        }
        for (i, c) in coords.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(Error::NonFinite {
                    op: "WarpMap",
                    detail: format!("coords[{i}] = ({}, {})", c[0], c[1]),
                });
            }
        }
        Ok(WarpMap {
            coords,
            source_h,
            source_w,
            out_h,
            out_w,
            provenance,
        })
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Anything the network can be queried at: coordinates in the low-resolution
/// frame plus the extents of the output pixel lattice.
pub trait Query {
    fn coords(&self) -> &[[f64; 2]];
    fn source_extents(&self) -> (usize, usize);
    fn output_extents(&self) -> Option<(usize, usize)>;
}

impl Query for CoordGrid {
    fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
    fn source_extents(&self) -> (usize, usize) {
        (self.source_h, self.source_w)
    }
    fn output_extents(&self) -> Option<(usize, usize)> {
        self.target_shape
    }
}

impl Query for WarpMap {
    fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
    fn source_extents(&self) -> (usize, usize) {
        (self.source_h, self.source_w)
    }
    fn output_extents(&self) -> Option<(usize, usize)> {
        Some((self.out_h, self.out_w))
    }
}

// ---------------------------------------------------------------------------
// grids

/// Regular cell-center grid mapping a (target_h, target_w) lattice into the
/// (source_h, source_w) pixel frame.
pub fn make_target_grid(
    source_h: usize,
    source_w: usize,
    target_h: usize,
    target_w: usize,
) -> Result<CoordGrid> {
    if source_h == 0 || source_w == 0 || target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument(
            "grid extents must be at least 1".to_string(),
        ));
    }
    let ry = source_h as f64 / target_h as f64;
    let rx = source_w as f64 / target_w as f64;
    let mut coords = Vec::with_capacity(target_h * target_w);
    for i in 0..target_h {
        let y = (i as f64 + 0.5) * ry - 0.5;
        for j in 0..target_w {
            let x = (j as f64 + 0.5) * rx - 0.5;
            coords.push([y, x]);
        }
    }
    Ok(CoordGrid {
        coords,
        source_h,
        source_w,
        target_shape: Some((target_h, target_w)),
    })
}

/// Re-express coordinates given in one pixel frame in another frame covering
/// the same image area.
pub fn convert_frame(
    coords: &[[f64; 2]],
    from: (usize, usize),
    to: (usize, usize),
) -> Vec<[f64; 2]> {
    let ry = to.0 as f64 / from.0 as f64;
    let rx = to.1 as f64 / from.1 as f64;
    coords
        .iter()
        .map(|&[y, x]| [(y + 0.5) * ry - 0.5, (x + 0.5) * rx - 0.5])
        .collect()
}

/// Bilinear sampling of a [c, h, w] feature map at a grid expressed in that
/// map's own frame.
pub fn grid_sample_bilinear<E: Elem>(feature: &Tensor<E>, grid: &CoordGrid) -> Result<Tensor<E>> {
    let (h, w) = (feature.shape()[1], feature.shape()[2]);
    if (grid.source_h, grid.source_w) != (h, w) {
        return Err(Error::InvalidArgument(format!(
            "grid declares source {}x{} but feature is {}x{}",
            grid.source_h, grid.source_w, h, w
        )));
    }
    ops::grid_sample(feature, grid.coords())
}

// ---------------------------------------------------------------------------
// reciprocal squared-distance field

/// Per-offset values 1 / (s_eff * max(dy^2 + dx^2, DISTANCE_FLOOR)) over the
/// k x k kernel window, row-major, as a [k*k, 1] tensor.
pub fn reciprocal_distance_field<E: Elem>(k_s: usize, spec: &ScaleSpec) -> Result<Tensor<E>> {
    if k_s == 0 || k_s % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel window must be odd, got {k_s}"
        )));
    }
    if spec.s_eff <= 0.0 || !spec.s_eff.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "effective scale must be positive, got {}",
            spec.s_eff
        )));
    }
    let r = (k_s / 2) as i64;
    let mut data = Vec::with_capacity(k_s * k_s);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = ((dy * dy + dx * dx) as f64).max(DISTANCE_FLOOR);
            data.push(ef::<E>(1.0 / (spec.s_eff * d2)));
        }
    }
    Tensor::from_vec(data, &[k_s * k_s, 1])
}

// ---------------------------------------------------------------------------
// bicubic resampling

/// Keys cubic convolution kernel with a = -0.5.
fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four-tap weights and clamped source indices for one output position.
fn cubic_taps(out_len: usize, src_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = src_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) * ratio - 0.5;
            let x0 = src.floor();
            let t = src - x0;
            let base = x0 as i64;
            let mut idx = [0usize; 4];
            let mut wgt = [0.0f64; 4];
            for (j, off) in (-1i64..=2).enumerate() {
                idx[j] = (base + off).clamp(0, src_len as i64 - 1) as usize;
                wgt[j] = keys(t - off as f64);
            }
            (idx, wgt)
        })
        .collect()
}

/// Resample a [c, h, w] image to (target_h, target_w) with the Keys a = -0.5
/// cubic kernel, cell-center alignment and clamp-to-edge borders. Used both
/// for bicubic degradation (downscale) and as the baseline upscaler. Not part
/// of the differentiable graph.
pub fn bicubic_resample<E: Elem>(
    image: &Tensor<E>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<E>> {
    if image.ndim() != 3 {
        return Err(Error::ShapeMismatch {
            op: "bicubic_resample",
            detail: format!("image must be [c,h,w], got {:?}", image.shape()),
        });
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument(
            "target extents must be at least 1".to_string(),
        ));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let xt = cubic_taps(target_w, w);
    let yt = cubic_taps(target_h, h);
    let src = image.data();
    // horizontal pass in f64: [c, h, target_w]
    let mut tmp = vec![0.0f64; c * h * target_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..][..w];
            let orow = &mut tmp[(ch * h + y) * target_w..][..target_w];
            for (o, (idx, wgt)) in orow.iter_mut().zip(&xt) {
                *o = wgt[0] * row[idx[0]].to_f64().unwrap()
                    + wgt[1] * row[idx[1]].to_f64().unwrap()
                    + wgt[2] * row[idx[2]].to_f64().unwrap()
                    + wgt[3] * row[idx[3]].to_f64().unwrap();
            }
        }
    }
    // vertical pass
    let mut out = Vec::with_capacity(c * target_h * target_w);
    for ch in 0..c {
        let plane = &tmp[ch * h * target_w..][..h * target_w];
        for (idx, wgt) in &yt {
            for x in 0..target_w {
                let v = wgt[0] * plane[idx[0] * target_w + x]
                    + wgt[1] * plane[idx[1] * target_w + x]
                    + wgt[2] * plane[idx[2] * target_w + x]
                    + wgt[3] * plane[idx[3] * target_w + x];
                out.push(ef::<E>(v));
            }
        }
    }
    drop(src);
    Tensor::from_vec(out, &[c, target_h, target_w])
}

// ---------------------------------------------------------------------------
// affine warps

/// Apply an affine map to the regular target grid. The six coefficients act
/// on (y, x) column vectors: y' = m[0]*y + m[1]*x + m[2],
/// x' = m[3]*y + m[4]*x + m[5].
pub fn warp_from_affine(
    source_h: usize,
    source_w: usize,
    target_h: usize,
    target_w: usize,
    affine: [f64; 6],
) -> Result<WarpMap> {
    let det = affine[0] * affine[4] - affine[1] * affine[3];
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "affine matrix is singular (det = {det})"
        )));
    }
    let grid = make_target_grid(source_h, source_w, target_h, target_w)?;
    let coords = grid
        .coords()
        .iter()
        .map(|&[y, x]| {
            [
                affine[0] * y + affine[1] * x + affine[2],
                affine[3] * y + affine[4] * x + affine[5],
            ]
        })
        .collect();
    WarpMap::new(
        coords,
        source_h,
        source_w,
        target_h,
        target_w,
        Provenance::Affine,
    )
}

/// Affine coefficients for a rotation by `radians` about (center_y, center_x).
pub fn rotation_affine(center_y: f64, center_x: f64, radians: f64) -> [f64; 6] {
    let (sin, cos) = radians.sin_cos();
    [
        cos,
        -sin,
        center_y - cos * center_y + sin * center_x,
        sin,
        cos,
        center_x - sin * center_y - cos * center_x,
    ]
}

// ---------------------------------------------------------------------------
// warp map file format: first line "H W", then H*W lines of "y x" floats in
// row-major order.

pub fn write_warp_file(path: &Path, warp: &WarpMap) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "{} {}", warp.out_h, warp.out_w);
    for &[y, x] in warp.coords() {
        let _ = writeln!(text, "{y} {x}");
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_warp_file(path: &Path, source_h: usize, source_w: usize) -> Result<WarpMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        offset: None,
        msg: e.to_string(),
    })?;
    let perr = |msg: String| Error::Parse {
        path: path.display().to_string(),
        offset: None,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr("empty warp file".to_string()))?;
    let mut it = header.split_whitespace();
    let out_h: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| perr("header must be `H W`".to_string()))?;
    let out_w: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| perr("header must be `H W`".to_string()))?;
    let mut coords = Vec::with_capacity(out_h * out_w);
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let y: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(format!("line {}: expected `y x`", ln + 1)))?;
        let x: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(format!("line {}: expected `y x`", ln + 1)))?;
        coords.push([y, x]);
    }
    if coords.len() != out_h * out_w {
        return Err(perr(format!(
            "expected {} coordinates for {}x{}, found {}",
            out_h * out_w,
            out_h,
            out_w,
            coords.len()
        )));
    }
    WarpMap::new(coords, source_h, source_w, out_h, out_w, Provenance::File)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_grid_identity_scale_hits_integer_centers() {
        let g = make_target_grid(4, 4, 4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let c = g.coords()[i * 4 + j];
                assert_eq!(c, [i as f64, j as f64]);
            }
        }
    }

    #[test]
    fn target_grid_half_pixel_offsets() {
        let g = make_target_grid(2, 2, 4, 4).unwrap();
        for j in 0..4 {
            assert_eq!(g.coords()[j][0], -0.25);
        }
        assert!(make_target_grid(0, 2, 4, 4).is_err());
    }

    #[test]
    fn target_grid_matches_direct_formula() {
        let g = make_target_grid(3, 5, 7, 11).unwrap();
        for i in 0..7 {
            for j in 0..11 {
                let want = [
                    (i as f64 + 0.5) * 3.0 / 7.0 - 0.5,
                    (j as f64 + 0.5) * 5.0 / 11.0 - 0.5,
                ];
                let got = g.coords()[i * 11 + j];
                assert!((got[0] - want[0]).abs() < 1e-12);
                assert!((got[1] - want[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distance_field_values_and_symmetry() {
        let spec = ScaleSpec::isotropic(2.0).unwrap();
        let f: Tensor = reciprocal_distance_field(3, &spec).unwrap();
        let v = f.to_vec();
        // row-major window: index of offset (dy,dx) is (dy+1)*3 + (dx+1)
        assert_eq!(v[2 * 3 + 1], 0.5); // (1, 0): 1/(2*1)
        assert_eq!(v[1 * 3 + 1], 1.0); // center: 1/(2*0.5)
        let spec1 = ScaleSpec::isotropic(1.0).unwrap();
        let f1: Tensor = reciprocal_distance_field(3, &spec1).unwrap();
        let v1 = f1.to_vec();
        assert_eq!(v1[2 * 3 + 2], 0.5); // (1, 1): 1/(1*2)
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let a = v[((dy + 1) * 3 + (dx + 1)) as usize];
                let b = v[((-dy + 1) * 3 + (-dx + 1)) as usize];
                assert_eq!(a, b);
            }
        }
        assert!(reciprocal_distance_field::<f32>(2, &spec).is_err());
    }

    #[test]
    fn distance_field_scaling_law() {
        let f2: Tensor<f64> =
            reciprocal_distance_field(3, &ScaleSpec::isotropic(2.0).unwrap()).unwrap();
        let f4: Tensor<f64> =
            reciprocal_distance_field(3, &ScaleSpec::isotropic(4.0).unwrap()).unwrap();
        for (a, b) in f2.to_vec().iter().zip(f4.to_vec()) {
            assert!((b - a / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bicubic_identity_is_bit_exact() {
        let img = Tensor::<f32>::from_vec((0..12).map(|v| v as f32 * 0.37).collect(), &[1, 3, 4])
            .unwrap();
        let out = bicubic_resample(&img, 3, 4).unwrap();
        assert_eq!(out.to_vec(), img.to_vec());
    }

    #[test]
    fn bicubic_constant_at_any_scale() {
        let img = Tensor::<f32>::full(&[2, 5, 7], 0.613);
        for (th, tw) in [(3, 4), (9, 13), (5, 7), (1, 1)] {
            let out = bicubic_resample(&img, th, tw).unwrap();
            for v in out.to_vec() {
                assert!((v - 0.613).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn affine_identity_matches_grid() {
        let warp = warp_from_affine(3, 3, 6, 6, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let grid = make_target_grid(3, 3, 6, 6).unwrap();
        assert_eq!(warp.coords(), grid.coords());
        assert_eq!(warp.provenance, Provenance::Affine);
    }

    #[test]
    fn affine_translation_and_singular() {
        let warp = warp_from_affine(3, 3, 3, 3, [1.0, 0.0, 0.5, 0.0, 1.0, 0.0]).unwrap();
        let grid = make_target_grid(3, 3, 3, 3).unwrap();
        for (w, g) in warp.coords().iter().zip(grid.coords()) {
            assert_eq!(w[0], g[0] + 0.5);
            assert_eq!(w[1], g[1]);
        }
        assert!(warp_from_affine(3, 3, 3, 3, [1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn rotation_matches_direct_matrix_application() {
        let angle = 15f64.to_radians();
        let (sh, sw, th, tw) = (4, 6, 9, 13);
        let cy = (sh as f64 - 1.0) / 2.0;
        let cx = (sw as f64 - 1.0) / 2.0;
        let warp = warp_from_affine(sh, sw, th, tw, rotation_affine(cy, cx, angle)).unwrap();
        let grid = make_target_grid(sh, sw, th, tw).unwrap();
        let (sin, cos) = angle.sin_cos();
        for (w, g) in warp.coords().iter().zip(grid.coords()) {
            let dy = g[0] - cy;
            let dx = g[1] - cx;
            let want = [cos * dy - sin * dx + cy, sin * dy + cos * dx + cx];
            assert!((w[0] - want[0]).abs() < 1e-12);
            assert!((w[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_conversion_roundtrip() {
        let coords = make_target_grid(8, 8, 11, 13).unwrap();
        let up = convert_frame(coords.coords(), (8, 8), (32, 24));
        let back = convert_frame(&up, (32, 24), (8, 8));
        for (a, b) in coords.coords().iter().zip(&back) {
            assert!((a[0] - b[0]).abs() < 1e-12);
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_spec_validation() {
        assert!(ScaleSpec::isotropic(0.0).is_err());
        assert!(ScaleSpec::isotropic(-2.0).is_err());
        let s = ScaleSpec::anisotropic(2.0, 8.0).unwrap();
        assert_eq!(s.s_eff, 4.0);
        assert!(s.is_super_resolution());
        assert!(!ScaleSpec::anisotropic(0.5, 2.0).unwrap().is_super_resolution());
    }
}
