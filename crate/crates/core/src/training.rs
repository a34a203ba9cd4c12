//! L1-loss training: Adam optimization, the two-stage schedule, and the
//! crop / bicubic-degrade / normalize data pipeline.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::GeoDsrNetwork;
use crate::geometry::{bicubic_resample, make_target_grid, ScaleSpec};
use crate::tensor::{ef, Elem, Tape, Tensor};

pub use crate::tensor::ops::l1_loss;

/// Hyperparameters of one training stage. Stage 1 trains at a fixed scale;
/// stage 2 fine-tunes with scales drawn uniformly from `scale_range`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub fixed_scale: f64,
    pub scale_range: (f64, f64),
    pub crop: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    /// Optional hard cap on optimization steps for abbreviated runs.
    pub max_steps: Option<usize>,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (and at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        TrainConfig {
            stage: 1,
            fixed_scale: 8.0,
            scale_range: (1.0, 16.0),
            crop: 256,
            lr: 1e-4,
            lr_decay: 0.2,
            lr_decay_every: 60,
            epochs: 200,
            max_steps: None,
            batch: 1,
            beta1: 0.9,
            beta2: 0.99,
            seed: 0,
            checkpoint_every: 50,
        }
    }

    pub fn stage2() -> Self {
        TrainConfig {
            stage: 2,
            ..Self::stage1()
        }
    }

    /// CPU-scale preset: small crops, step-capped.
    pub fn desk(stage: u8, max_steps: usize) -> Self {
        TrainConfig {
            stage,
            crop: 64,
            max_steps: Some(max_steps),
            ..Self::stage1()
        }
    }

    /// Learning rate for a 1-based epoch: multiplied by `lr_decay` at every
    /// `lr_decay_every` epoch boundary.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let k = epoch.saturating_sub(1) / self.lr_decay_every;
        self.lr * self.lr_decay.powi(k as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::InvalidArgument(format!(
                "stage must be 1 or 2, got {}",
                self.stage
            )));
        }
        if self.scale_range.0 < 1.0 || self.scale_range.1 < self.scale_range.0 {
            return Err(Error::InvalidArgument(format!(
                "scale range minimum must be >= 1, got {:?}",
                self.scale_range
            )));
        }
        if self.batch != 1 {
            return Err(Error::InvalidArgument(
                "only batch size 1 is supported".into(),
            ));
        }
        if self.crop == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "crop and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Draw the scale for one step: fixed in stage 1, uniform over the range in
/// stage 2.
pub fn draw_scale(rng: &mut impl Rng, config: &TrainConfig) -> f64 {
    if config.stage == 1 {
        config.fixed_scale
    } else {
        rng.gen_range(config.scale_range.0..config.scale_range.1)
    }
}

// ---------------------------------------------------------------------------
// Adam

/// Adam with bias correction over a fixed parameter list.
pub struct Adam<E: Elem = f32> {
    params: Vec<Tensor<E>>,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<E: Elem> Adam<E> {
    pub fn new(params: Vec<Tensor<E>>, beta1: f64, beta2: f64) -> Self {
        let m = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        Adam {
            params,
            m,
            v,
            t: 0,
            beta1,
            beta2,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update from the currently accumulated gradients. Every parameter
    /// must carry a gradient.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = ef::<E>(self.beta1);
        let b2 = ef::<E>(self.beta2);
        let one = E::one();
        let c1 = ef::<E>(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let c2 = ef::<E>(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr_e = ef::<E>(lr);
        let eps = ef::<E>(self.epsilon);
        for (i, p) in self.params.iter().enumerate() {
            let g = p
                .grad()
                .ok_or_else(|| Error::InvalidArgument(format!("parameter {i} has no gradient")))?;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut data = p.to_vec();
            for j in 0..data.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] * c1;
                let vhat = v[j] * c2;
                data[j] = data[j] - lr_e * mhat / (vhat.sqrt() + eps);
            }
            p.set_data(&data)?;
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

// ---------------------------------------------------------------------------
// data pipeline

/// One training/evaluation unit: low-resolution depth, high-resolution guide
/// and ground truth, all normalized to [0, 1], with the effective scale and
/// the physical denormalization range.
pub struct DepthSample<E: Elem = f32> {
    pub lr_depth: Tensor<E>,
    pub hr_guide: Tensor<E>,
    pub hr_depth: Tensor<E>,
    pub spec: ScaleSpec,
    pub denorm: (f64, f64),
}

/// Map values from [min, max] to [0, 1].
pub fn normalize<E: Elem>(x: &Tensor<E>, min: f64, max: f64) -> Result<Tensor<E>> {
    if max <= min {
        return Err(Error::InvalidArgument(format!(
            "normalize requires max > min, got ({min}, {max})"
        )));
    }
    let lo = ef::<E>(min);
    let inv = ef::<E>(1.0 / (max - min));
    let data = x.data().iter().map(|&v| (v - lo) * inv).collect();
    Tensor::from_vec(data, x.shape())
}

/// Map values from [0, 1] back to [min, max].
pub fn denormalize<E: Elem>(x: &Tensor<E>, min: f64, max: f64) -> Result<Tensor<E>> {
    let lo = ef::<E>(min);
    let span = ef::<E>(max - min);
    let data = x.data().iter().map(|&v| lo + v * span).collect();
    Tensor::from_vec(data, x.shape())
}

fn clamp_unit<E: Elem>(data: &mut [E]) {
    for v in data.iter_mut() {
        if *v < E::zero() {
            *v = E::zero();
        } else if *v > E::one() {
            *v = E::one();
        }
    }
}

/// Bicubic-degrade a normalized HR depth map by scale `s`, keeping the guide
/// at full resolution. The LR extent is floor(len/s) per axis (at least 1)
/// and the stored spec carries the exact effective scale len/lr_len, so a
/// non-integer `s` never alters the ground truth.
pub fn degrade_sample<E: Elem>(
    hr_depth: &Tensor<E>,
    hr_guide: &Tensor<E>,
    s: f64,
    denorm: (f64, f64),
) -> Result<DepthSample<E>> {
    if s < 1.0 || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "degradation scale must be >= 1, got {s}"
        )));
    }
    if hr_depth.ndim() != 3 || hr_depth.shape()[0] != 1 {
        return Err(Error::ShapeMismatch {
            op: "degrade_sample",
            detail: format!("depth must be [1,h,w], got {:?}", hr_depth.shape()),
        });
    }
    if hr_guide.ndim() != 3
        || hr_guide.shape()[0] != 3
        || hr_guide.shape()[1..] != hr_depth.shape()[1..]
    {
        return Err(Error::ShapeMismatch {
            op: "degrade_sample",
            detail: format!(
                "guide {:?} must be [3,h,w] matching depth {:?}",
                hr_guide.shape(),
                hr_depth.shape()
            ),
        });
    }
    let (hh, hw) = (hr_depth.shape()[1], hr_depth.shape()[2]);
    let lh = ((hh as f64 / s).floor() as usize).max(1);
    let lw = ((hw as f64 / s).floor() as usize).max(1);
    let spec = ScaleSpec::from_extents(lh, lw, hh, hw)?;
    let lr = bicubic_resample(hr_depth, lh, lw)?;
    // the cubic kernel can overshoot; depth stays in [0, 1]
    let mut lr_data = lr.to_vec();
    clamp_unit(&mut lr_data);
    Ok(DepthSample {
        lr_depth: Tensor::from_vec(lr_data, lr.shape())?,
        hr_guide: hr_guide.clone(),
        hr_depth: hr_depth.clone(),
        spec,
        denorm,
    })
}

/// Copy a crop of matching depth/guide images starting at a random offset.
pub fn random_crop_pair<E: Elem>(
    hr_depth: &Tensor<E>,
    hr_guide: &Tensor<E>,
    crop: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let (h, w) = (hr_depth.shape()[1], hr_depth.shape()[2]);
    let ch = crop.min(h);
    let cw = crop.min(w);
    let oy = if h > ch { rng.gen_range(0..=h - ch) } else { 0 };
    let ox = if w > cw { rng.gen_range(0..=w - cw) } else { 0 };
    let crop_plane = |src: &Tensor<E>, channels: usize| -> Tensor<E> {
        let data = src.data();
        let mut out = Vec::with_capacity(channels * ch * cw);
        for c in 0..channels {
            for y in 0..ch {
                let base = (c * h + oy + y) * w + ox;
                out.extend_from_slice(&data[base..base + cw]);
            }
        }
        Tensor::from_op(out, vec![channels, ch, cw], false)
    };
    Ok((crop_plane(hr_depth, 1), crop_plane(hr_guide, 3)))
}

// ---------------------------------------------------------------------------
// stage runner

/// One row of the loss log CSV: `step,epoch,scale,loss,lr`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub scale: f64,
    pub loss: f32,
    pub lr: f64,
}

#[derive(Debug)]
pub struct StageResult {
    pub loss_log: Vec<LogRow>,
    pub steps_run: usize,
}

pub fn loss_log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,epoch,scale,loss,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.epoch, r.scale, r.loss, r.lr
        ));
    }
    out
}

/// Per-step seed: a mix of the run seed, epoch and sample index, so runs are
/// reproducible and steps decorrelated.
fn step_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train one stage: per step, crop, draw a scale, bicubic-degrade, run the
/// network on the regular target grid, take the L1 loss, backpropagate and
/// apply Adam. The learning rate follows the epoch schedule. A non-finite
/// loss aborts with a diagnostic dump of the offending batch.
///
/// `data` holds normalized (hr_depth [1,S,S], hr_guide [3,S,S]) pairs. When
/// `out_dir` is given, the loss log and periodic checkpoints are written
/// there.
pub fn run_stage(
    net: &GeoDsrNetwork<f32>,
    data: &[(Tensor<f32>, Tensor<f32>)],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<StageResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut opt = Adam::new(net.params(), config.beta1, config.beta2);
    let mut log = Vec::new();
    let mut step = 0usize;
    'outer: for epoch in 1..=config.epochs {
        let lr = config.lr_at_epoch(epoch);
        for index in 0..data.len() {
            if let Some(cap) = config.max_steps {
                if step >= cap {
                    break 'outer;
                }
            }
            step += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed(config.seed, epoch, index));
            let (hr_d, hr_g) =
                random_crop_pair(&data[index].0, &data[index].1, config.crop, &mut rng)?;
            let s = draw_scale(&mut rng, config);
            let sample = degrade_sample(&hr_d, &hr_g, s, (0.0, 1.0))?;
            let (lh, lw) = (sample.lr_depth.shape()[1], sample.lr_depth.shape()[2]);
            let (hh, hw) = (sample.hr_depth.shape()[1], sample.hr_depth.shape()[2]);
            let grid = make_target_grid(lh, lw, hh, hw)?;
            let tape = Tape::new();
            let pred = net.forward(&sample.lr_depth, &sample.hr_guide, &grid, &sample.spec)?;
            let loss = l1_loss(&pred, &sample.hr_depth)?;
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                if let Some(dir) = out_dir {
                    let _ = crate::io::write_depth_pgm(
                        &dir.join("diverged_lr_depth.pgm"),
                        &sample.lr_depth,
                    );
                    let _ = crate::io::write_guide_ppm(
                        &dir.join("diverged_hr_guide.ppm"),
                        &sample.hr_guide,
                    );
                }
                return Err(Error::NumericFailure(format!(
                    "non-finite loss {loss_value} at step {step} (epoch {epoch}, sample {index}, scale {s:.4})"
                )));
            }
            tape.backward(&loss)?;
            opt.step(lr)?;
            opt.zero_grad();
            log.push(LogRow {
                step,
                epoch,
                scale: sample.spec.s_eff,
                loss: loss_value,
                lr,
            });
        }
        if let Some(dir) = out_dir {
            if epoch % config.checkpoint_every == 0 {
                crate::io::save_checkpoint(
                    &dir.join(format!("checkpoint_epoch{epoch:04}.ckpt")),
                    net,
                    Some(config),
                )?;
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("loss_log.csv"), loss_log_to_csv(&log))?;
        crate::io::save_checkpoint(&dir.join("checkpoint.ckpt"), net, Some(config))?;
    }
    Ok(StageResult {
        steps_run: step,
        loss_log: log,
    })
}
