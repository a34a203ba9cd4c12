//! RMSE metrics and the benchmark harness: per-scale degrade / reconstruct /
//! score runs with timing and parameter counts.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fusion::GeoDsrNetwork;
use crate::geometry::{bicubic_resample, make_target_grid};
use crate::tensor::{checked_mode, set_checked_mode, Tensor};
use crate::training::{degrade_sample, denormalize};

/// Unit RMSE is reported in: centimeters (metric depth sets) or 0-255 gray
/// levels (scaled grayscale sets).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmseUnit {
    Centimeters,
    Levels255,
}

impl RmseUnit {
    pub fn label(&self) -> &'static str {
        match self {
            RmseUnit::Centimeters => "cm",
            RmseUnit::Levels255 => "levels[0,255]",
        }
    }
}

/// Root mean squared error in the declared unit. Inputs are denormalized;
/// for `Levels255` they are expected in [0, 1] and rescaled by 255 first.
pub fn rmse(pred: &Tensor<f32>, truth: &Tensor<f32>, unit: RmseUnit) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            op: "rmse",
            detail: format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        });
    }
    if pred.numel() == 0 {
        return Err(Error::InvalidArgument("rmse of empty tensors".into()));
    }
    let scale = match unit {
        RmseUnit::Centimeters => 1.0f64,
        RmseUnit::Levels255 => 255.0,
    };
    let pd = pred.data();
    let td = truth.data();
    let mut acc = 0.0f64;
    for (&p, &t) in pd.iter().zip(td.iter()) {
        let d = (p as f64 - t as f64) * scale;
        acc += d * d;
    }
    Ok((acc / pred.numel() as f64).sqrt())
}

/// One held-out evaluation unit: normalized HR depth and guide plus the
/// physical range the depth normalization came from.
pub struct EvalSample {
    pub hr_depth: Tensor<f32>,
    pub hr_guide: Tensor<f32>,
    pub denorm: (f64, f64),
}

/// Method under evaluation.
pub enum EvalMethod<'a> {
    Bicubic,
    Model(&'a GeoDsrNetwork<f32>),
}

impl EvalMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMethod::Bicubic => "bicubic",
            EvalMethod::Model(_) => "model",
        }
    }
}

/// Per-scale RMSE results for one method.
pub struct EvalReport {
    pub method: String,
    pub unit: RmseUnit,
    pub scales: Vec<f64>,
    /// Mean RMSE per scale.
    pub mean_rmse: Vec<f64>,
    /// Per-sample RMSE, indexed [scale][sample].
    pub per_sample: Vec<Vec<f64>>,
    /// Mean wall-clock seconds per reconstructed image.
    pub seconds_per_image: f64,
    pub param_count: usize,
}

impl EvalReport {
    /// Deterministic machine-readable view (metric content only).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,unit,scale,mean_rmse\n");
        for (s, r) in self.scales.iter().zip(&self.mean_rmse) {
            let _ = writeln!(out, "{},{},{},{:.6}", self.method, self.unit.label(), s, r);
        }
        out
    }

    /// Human-readable table with timing and size columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>12}  RMSE ({})",
            "method", "params", "sec/image", self.unit.label()
        );
        let mut header = format!("{:<10} {:>10} {:>12} ", "", "", "");
        for s in &self.scales {
            let _ = write!(header, " x{s:<9.4}");
        }
        let _ = writeln!(out, "{header}");
        let mut row = format!(
            "{:<10} {:>10} {:>12.4} ",
            self.method, self.param_count, self.seconds_per_image
        );
        for r in &self.mean_rmse {
            let _ = write!(row, " {r:<10.4}");
        }
        let _ = writeln!(out, "{row}");
        out
    }
}

/// Crop so both axes are integer multiples of round(s) when s is an integer
/// (the LR extent then divides exactly); real-valued scales keep the full
/// frame and use the floor-then-recompute rule.
fn eval_crop(sample: &EvalSample, s: f64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (h, w) = (sample.hr_depth.shape()[1], sample.hr_depth.shape()[2]);
    if s.fract() == 0.0 {
        let si = s as usize;
        let ch = (h / si) * si;
        let cw = (w / si) * si;
        if ch == 0 || cw == 0 {
            return Err(Error::InvalidArgument(format!(
                "image {h}x{w} too small for scale {s}"
            )));
        }
        if ch == h && cw == w {
            return Ok((sample.hr_depth.clone(), sample.hr_guide.clone()));
        }
        let crop = |t: &Tensor<f32>, c: usize| {
            let d = t.data();
            let mut out = Vec::with_capacity(c * ch * cw);
            for ci in 0..c {
                for y in 0..ch {
                    let base = (ci * h + y) * w;
                    out.extend_from_slice(&d[base..base + cw]);
                }
            }
            Tensor::from_op(out, vec![c, ch, cw], false)
        };
        Ok((crop(&sample.hr_depth, 1), crop(&sample.hr_guide, 3)))
    } else {
        Ok((sample.hr_depth.clone(), sample.hr_guide.clone()))
    }
}

/// Evaluate a method over the dataset at each scale: bicubic-degrade the HR
/// depth, reconstruct on the regular target grid, denormalize, and average
/// the per-sample RMSE. Also records wall-clock per image and parameter
/// count. NaN/Inf guards are switched off inside the timed region.
pub fn benchmark(
    method: &EvalMethod<'_>,
    dataset: &[EvalSample],
    scales: &[f64],
    unit: RmseUnit,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation dataset".into()));
    }
    if scales.is_empty() {
        return Err(Error::InvalidArgument("no scales requested".into()));
    }
    let was_checked = checked_mode();
    set_checked_mode(false);
    let result = benchmark_inner(method, dataset, scales, unit);
    set_checked_mode(was_checked);
    result
}

fn benchmark_inner(
    method: &EvalMethod<'_>,
    dataset: &[EvalSample],
    scales: &[f64],
    unit: RmseUnit,
) -> Result<EvalReport> {
    let mut per_sample = Vec::with_capacity(scales.len());
    let mut mean_rmse = Vec::with_capacity(scales.len());
    let mut total_seconds = 0.0f64;
    let mut total_images = 0usize;
    for &s in scales {
        if s < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "evaluation scales must be >= 1, got {s}"
            )));
        }
        let mut rmses = Vec::with_capacity(dataset.len());
        for sample in dataset {
            let (hr_d, hr_g) = eval_crop(sample, s)?;
            let degraded = degrade_sample(&hr_d, &hr_g, s, sample.denorm)?;
            let (lh, lw) = (
                degraded.lr_depth.shape()[1],
                degraded.lr_depth.shape()[2],
            );
            let (hh, hw) = (hr_d.shape()[1], hr_d.shape()[2]);
            let start = Instant::now();
            let pred = match method {
                EvalMethod::Bicubic => bicubic_resample(&degraded.lr_depth, hh, hw)?,
                EvalMethod::Model(net) => {
                    let grid = make_target_grid(lh, lw, hh, hw)?;
                    net.forward(&degraded.lr_depth, &hr_g, &grid, &degraded.spec)?
                }
            };
            total_seconds += start.elapsed().as_secs_f64();
            total_images += 1;
            let r = match unit {
                RmseUnit::Levels255 => rmse(&pred, &hr_d, RmseUnit::Levels255)?,
                RmseUnit::Centimeters => {
                    let (lo, hi) = sample.denorm;
                    let pred_d = denormalize(&pred, lo, hi)?;
                    let truth_d = denormalize(&hr_d, lo, hi)?;
                    rmse(&pred_d, &truth_d, RmseUnit::Centimeters)?
                }
            };
            rmses.push(r);
        }
        mean_rmse.push(rmses.iter().sum::<f64>() / rmses.len() as f64);
        per_sample.push(rmses);
    }
    Ok(EvalReport {
        method: method.name().to_string(),
        unit,
        scales: scales.to_vec(),
        mean_rmse,
        per_sample,
        seconds_per_image: total_seconds / total_images as f64,
        param_count: match method {
            EvalMethod::Bicubic => 0,
            EvalMethod::Model(net) => net.param_count(),
        },
    })
}
