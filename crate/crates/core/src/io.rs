//! File formats: 16-bit PGM depth maps, PPM guides, dataset manifests, the
//! checkpoint container, and key=value config blocks.
//!
//! All writes are atomic (temp file + rename).

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{EvalSample, RmseUnit};
use crate::fusion::{GeoDsrNetwork, NetworkConfig};
use crate::tensor::Tensor;
use crate::training::TrainConfig;

/// Write via a temp file in the same directory, then rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// netpbm

struct ByteParser<'a> {
    data: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteParser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            offset: Some(self.pos),
            msg: msg.into(),
        }
    }

    /// Skip whitespace and `#` comments between header tokens.
    fn skip_separators(&mut self) {
        while self.pos < self.data.len() {
            let b = self.data[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| self.err("header is not ascii"))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| self.err(format!("invalid {what}: {tok:?}")))
    }

    /// Consume the single whitespace byte that terminates the header.
    fn end_header(&mut self) -> Result<()> {
        if self.pos >= self.data.len() || !self.data[self.pos].is_ascii_whitespace() {
            return Err(self.err("missing whitespace after maxval"));
        }
        self.pos += 1;
        Ok(())
    }

    fn payload(&mut self, expected: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.data.len() - self.pos;
        if available < expected {
            return Err(self.err(format!(
                "{what} payload short by {} bytes ({} declared, {} present)",
                expected - available,
                expected,
                available
            )));
        }
        let out = &self.data[self.pos..self.pos + expected];
        self.pos += expected;
        Ok(out)
    }
}

/// Write a [1, h, w] depth map with values in [0, 1] as a 16-bit binary PGM
/// (big-endian sample bytes, maxval 65535).
pub fn write_depth_pgm(path: &Path, depth: &Tensor<f32>) -> Result<()> {
    if depth.ndim() != 3 || depth.shape()[0] != 1 {
        return Err(Error::ShapeMismatch {
            op: "write_depth_pgm",
            detail: format!("expected [1,h,w], got {:?}", depth.shape()),
        });
    }
    let (h, w) = (depth.shape()[1], depth.shape()[2]);
    let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in depth.data().iter() {
        let q = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    atomic_write(path, &bytes)
}

/// Read a 16-bit binary PGM into a [1, h, w] tensor with values in [0, 1]
/// (raw sample / 65535).
pub fn read_depth_pgm(path: &Path) -> Result<Tensor<f32>> {
    let data = std::fs::read(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        offset: None,
        msg: e.to_string(),
    })?;
    let mut p = ByteParser {
        data: &data,
        pos: 0,
        path: path.display().to_string(),
    };
    let magic = p.token()?;
    if magic != "P5" {
        return Err(p.err(format!("expected P5, got {magic:?}")));
    }
    let w = p.number("width")?;
    let h = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 65535 {
        return Err(p.err(format!("depth maps are 16-bit (maxval 65535), got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(p.err("zero extent"));
    }
    p.end_header()?;
    let payload = p.payload(2 * w * h, "pgm")?;
    let values: Vec<f32> = payload
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
        .collect();
    Tensor::from_vec(values, &[1, h, w])
}

/// Write a [3, h, w] guide with values in [0, 1] as an 8-bit binary PPM.
pub fn write_guide_ppm(path: &Path, guide: &Tensor<f32>) -> Result<()> {
    if guide.ndim() != 3 || guide.shape()[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "write_guide_ppm",
            detail: format!("expected [3,h,w], got {:?}", guide.shape()),
        });
    }
    let (h, w) = (guide.shape()[1], guide.shape()[2]);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = guide.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = d[(c * h + y) * w + x];
                bytes.push((v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8);
            }
        }
    }
    atomic_write(path, &bytes)
}

/// Read an 8-bit binary PPM into a [3, h, w] tensor with values in [0, 1].
pub fn read_guide_ppm(path: &Path) -> Result<Tensor<f32>> {
    let data = std::fs::read(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        offset: None,
        msg: e.to_string(),
    })?;
    let mut p = ByteParser {
        data: &data,
        pos: 0,
        path: path.display().to_string(),
    };
    let magic = p.token()?;
    if magic != "P6" {
        return Err(p.err(format!("expected P6, got {magic:?}")));
    }
    let w = p.number("width")?;
    let h = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return Err(p.err(format!("guides are 8-bit (maxval 255), got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(p.err("zero extent"));
    }
    p.end_header()?;
    let payload = p.payload(3 * w * h, "ppm")?;
    let mut values = vec![0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                values[(c * h + y) * w + x] = payload[(y * w + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(values, &[3, h, w])
}

// ---------------------------------------------------------------------------
// manifest

/// Dataset listing: unit declaration, optional physical normalization range,
/// and (depth, guide) file pairs. Format:
///
/// ```text
/// unit cm
/// range 50 1000
/// scene0_depth.pgm scene0_guide.ppm
/// ```
///
/// Paths are resolved relative to the manifest's directory.
pub struct Manifest {
    pub unit: RmseUnit,
    pub range: Option<(f64, f64)>,
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
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
    let base = path.parent().unwrap_or(Path::new("."));
    let mut unit = None;
    let mut range = None;
    let mut pairs = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "unit" => {
                unit = Some(match tokens.get(1) {
                    Some(&"cm") => RmseUnit::Centimeters,
                    Some(&"levels255") => RmseUnit::Levels255,
                    other => {
                        return Err(perr(format!(
                            "line {}: unit must be cm or levels255, got {:?}",
                            ln + 1,
                            other
                        )))
                    }
                });
            }
            "range" => {
                if tokens.len() != 3 {
                    return Err(perr(format!("line {}: range needs two numbers", ln + 1)));
                }
                let lo: f64 = tokens[1]
                    .parse()
                    .map_err(|_| perr(format!("line {}: bad range minimum", ln + 1)))?;
                let hi: f64 = tokens[2]
                    .parse()
                    .map_err(|_| perr(format!("line {}: bad range maximum", ln + 1)))?;
                if hi <= lo {
                    return Err(perr(format!("line {}: range max must exceed min", ln + 1)));
                }
                range = Some((lo, hi));
            }
            _ => {
                if tokens.len() != 2 {
                    return Err(perr(format!(
                        "line {}: expected `<depth path> <guide path>`",
                        ln + 1
                    )));
                }
                let d = base.join(tokens[0]);
                let g = base.join(tokens[1]);
                for f in [&d, &g] {
                    if !f.exists() {
                        return Err(perr(format!(
                            "line {}: referenced file {} does not exist",
                            ln + 1,
                            f.display()
                        )));
                    }
                }
                pairs.push((d, g));
            }
        }
    }
    let unit = unit.ok_or_else(|| perr("missing `unit` declaration".into()))?;
    if pairs.is_empty() {
        return Err(perr("manifest lists no image pairs".into()));
    }
    Ok(Manifest { unit, range, pairs })
}

/// Load the manifest's pairs as normalized evaluation samples. With an
/// explicit range the stored values already span it ([0,1] maps onto
/// [min, max]); otherwise each depth map is normalized by its own observed
/// range and the denormalization carries raw 16-bit units.
pub fn load_eval_samples(manifest: &Manifest) -> Result<Vec<EvalSample>> {
    let mut out = Vec::with_capacity(manifest.pairs.len());
    for (dpath, gpath) in &manifest.pairs {
        let depth = read_depth_pgm(dpath)?;
        let guide = read_guide_ppm(gpath)?;
        if depth.shape()[1..] != guide.shape()[1..] {
            return Err(Error::InvalidArgument(format!(
                "{}: depth {:?} and guide {:?} extents disagree",
                dpath.display(),
                depth.shape(),
                guide.shape()
            )));
        }
        let (hr_depth, denorm) = match manifest.range {
            Some((lo, hi)) => (depth, (lo, hi)),
            None => {
                let d = depth.to_vec();
                let lo = d.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
                let hi = d.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                if hi > lo {
                    let norm: Vec<f32> = d
                        .iter()
                        .map(|&v| ((v as f64 - lo) / (hi - lo)) as f32)
                        .collect();
                    (
                        Tensor::from_vec(norm, depth.shape())?,
                        (lo * 65535.0, hi * 65535.0),
                    )
                } else {
                    (
                        Tensor::zeros(depth.shape()),
                        (lo * 65535.0, lo * 65535.0 + 1.0),
                    )
                }
            }
        };
        out.push(EvalSample {
            hr_depth,
            hr_guide: guide,
            denorm,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// key=value config blocks

pub fn parse_kv(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}

pub fn network_config_to_kv(c: &NetworkConfig) -> String {
    format!(
        "net.channels={}\nnet.blocks_per_group={}\nnet.kernel_window={}\nnet.encoder_hidden={}\nnet.use_gsa={}\nnet.use_modulation_fusion={}\nnet.two_step_upsampling={}\nnet.global_residual={}\n",
        c.channels,
        c.blocks_per_group,
        c.kernel_window,
        c.encoder_hidden,
        c.use_gsa,
        c.use_modulation_fusion,
        c.two_step_upsampling,
        c.global_residual
    )
}

pub fn train_config_to_kv(c: &TrainConfig) -> String {
    let mut s = format!(
        "train.stage={}\ntrain.fixed_scale={}\ntrain.scale_min={}\ntrain.scale_max={}\ntrain.crop={}\ntrain.lr={}\ntrain.lr_decay={}\ntrain.lr_decay_every={}\ntrain.epochs={}\ntrain.batch={}\ntrain.beta1={}\ntrain.beta2={}\ntrain.seed={}\ntrain.checkpoint_every={}\n",
        c.stage,
        c.fixed_scale,
        c.scale_range.0,
        c.scale_range.1,
        c.crop,
        c.lr,
        c.lr_decay,
        c.lr_decay_every,
        c.epochs,
        c.batch,
        c.beta1,
        c.beta2,
        c.seed,
        c.checkpoint_every
    );
    if let Some(ms) = c.max_steps {
        s.push_str(&format!("train.max_steps={ms}\n"));
    }
    s
}

fn kv_get<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad value for {key}: {v:?}"))),
    }
}

/// Network config from a key=value map, with unset keys falling back to the
/// full-size defaults.
pub fn network_config_from_kv(map: &BTreeMap<String, String>) -> Result<NetworkConfig> {
    let d = NetworkConfig::full();
    let cfg = NetworkConfig {
        channels: kv_get(map, "net.channels", d.channels)?,
        blocks_per_group: kv_get(map, "net.blocks_per_group", d.blocks_per_group)?,
        kernel_window: kv_get(map, "net.kernel_window", d.kernel_window)?,
        encoder_hidden: kv_get(map, "net.encoder_hidden", d.encoder_hidden)?,
        use_gsa: kv_get(map, "net.use_gsa", d.use_gsa)?,
        use_modulation_fusion: kv_get(map, "net.use_modulation_fusion", d.use_modulation_fusion)?,
        two_step_upsampling: kv_get(map, "net.two_step_upsampling", d.two_step_upsampling)?,
        global_residual: kv_get(map, "net.global_residual", d.global_residual)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Train config from a key=value map, with unset keys falling back to the
/// stage-1 defaults.
pub fn train_config_from_kv(map: &BTreeMap<String, String>) -> Result<TrainConfig> {
    let d = TrainConfig::stage1();
    let cfg = TrainConfig {
        stage: kv_get(map, "train.stage", d.stage)?,
        fixed_scale: kv_get(map, "train.fixed_scale", d.fixed_scale)?,
        scale_range: (
            kv_get(map, "train.scale_min", d.scale_range.0)?,
            kv_get(map, "train.scale_max", d.scale_range.1)?,
        ),
        crop: kv_get(map, "train.crop", d.crop)?,
        lr: kv_get(map, "train.lr", d.lr)?,
        lr_decay: kv_get(map, "train.lr_decay", d.lr_decay)?,
        lr_decay_every: kv_get(map, "train.lr_decay_every", d.lr_decay_every)?,
        epochs: kv_get(map, "train.epochs", d.epochs)?,
        max_steps: match map.get("train.max_steps") {
            None => None,
            Some(v) => Some(v.parse().map_err(|_| {
                Error::InvalidArgument(format!("bad value for train.max_steps: {v:?}"))
            })?),
        },
        batch: kv_get(map, "train.batch", d.batch)?,
        beta1: kv_get(map, "train.beta1", d.beta1)?,
        beta2: kv_get(map, "train.beta2", d.beta2)?,
        seed: kv_get(map, "train.seed", d.seed)?,
        checkpoint_every: kv_get(map, "train.checkpoint_every", d.checkpoint_every)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// checkpoint container

const CKPT_MAGIC: &[u8; 8] = b"GEODSRCK";
const CKPT_VERSION: u32 = 1;

/// Serialize the network (config block plus named little-endian f32
/// parameters) with a SHA-256 integrity digest.
pub fn save_checkpoint(
    path: &Path,
    net: &GeoDsrNetwork<f32>,
    train: Option<&TrainConfig>,
) -> Result<()> {
    let mut config = network_config_to_kv(&net.config);
    if let Some(t) = train {
        config.push_str(&train_config_to_kv(t));
    }
    let mut body: Vec<u8> = Vec::new();
    body.extend_from_slice(&(config.len() as u32).to_le_bytes());
    body.extend_from_slice(config.as_bytes());
    let params = net.named_params();
    body.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in &params {
        let nb = name.as_bytes();
        body.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        body.extend_from_slice(nb);
        body.push(tensor.ndim() as u8);
        for &d in tensor.shape() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data().iter() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&body);
    let mut bytes = Vec::with_capacity(12 + body.len() + 32);
    bytes.extend_from_slice(CKPT_MAGIC);
    bytes.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&body);
    bytes.extend_from_slice(&digest);
    atomic_write(path, &bytes)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            offset: Some(self.pos),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} remain",
                self.data.len() - self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Rebuild a network from a checkpoint. The architecture comes from the
/// stored config; every stored parameter must match a network parameter by
/// name and shape, and every network parameter must be covered.
pub fn load_checkpoint(path: &Path) -> Result<(GeoDsrNetwork<f32>, Option<TrainConfig>)> {
    let data = std::fs::read(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        offset: None,
        msg: e.to_string(),
    })?;
    let mut c = Cursor {
        data: &data,
        pos: 0,
        path: path.display().to_string(),
    };
    if c.take(8)? != CKPT_MAGIC {
        return Err(c.err("not a checkpoint file (bad magic)"));
    }
    let version = c.u32()?;
    if version != CKPT_VERSION {
        return Err(c.err(format!("unsupported checkpoint version {version}")));
    }
    if data.len() < 12 + 32 {
        return Err(c.err("file too short for checksum"));
    }
    let body = &data[12..data.len() - 32];
    let stored_digest = &data[data.len() - 32..];
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_digest {
        return Err(Error::ChecksumMismatch {
            expected: hex_string(stored_digest),
            actual: hex_string(&digest),
        });
    }
    let config_len = c.u32()? as usize;
    let config_text = std::str::from_utf8(c.take(config_len)?)
        .map_err(|_| c.err("config block is not utf-8"))?
        .to_string();
    let kv = parse_kv(&config_text);
    let net_config = network_config_from_kv(&kv)?;
    let train_config = if kv.keys().any(|k| k.starts_with("train.")) {
        Some(train_config_from_kv(&kv)?)
    } else {
        None
    };
    let net = GeoDsrNetwork::new(net_config, 0)?;
    let mut by_name: BTreeMap<String, Tensor<f32>> = net.named_params().into_iter().collect();

    let count = c.u32()? as usize;
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| c.err("parameter name is not utf-8"))?
            .to_string();
        let ndim = c.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(4 * numel)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = by_name.remove(&name).ok_or_else(|| {
            Error::ConfigMismatch(format!(
                "checkpoint parameter {name:?} does not exist in a network built from the stored config"
            ))
        })?;
        if tensor.shape() != shape.as_slice() {
            return Err(Error::ConfigMismatch(format!(
                "parameter {name:?}: checkpoint shape {:?} vs network shape {:?}",
                shape,
                tensor.shape()
            )));
        }
        tensor.set_data(&values)?;
    }
    if !by_name.is_empty() {
        let missing: Vec<&String> = by_name.keys().collect();
        return Err(Error::ConfigMismatch(format!(
            "checkpoint is missing {} parameters, e.g. {:?}",
            missing.len(),
            missing[0]
        )));
    }
    Ok((net, train_config))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tmpdir();
        let p = dir.path().join("d.pgm");
        let depth = Tensor::from_vec(
            (0..48).map(|v| (v as f32 / 47.0).powf(1.3)).collect(),
            &[1, 6, 8],
        )
        .unwrap();
        write_depth_pgm(&p, &depth).unwrap();
        let back = read_depth_pgm(&p).unwrap();
        assert_eq!(back.shape(), &[1, 6, 8]);
        for (a, b) in depth.to_vec().iter().zip(back.to_vec()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn pgm_header_extents_order() {
        let dir = tmpdir();
        let p = dir.path().join("h.pgm");
        let mut bytes = b"P5\n4 3\n65535\n".to_vec();
        bytes.extend_from_slice(&[0u8; 24]); // 12 samples, 2 bytes each
        std::fs::write(&p, bytes).unwrap();
        let t = read_depth_pgm(&p).unwrap();
        // width 4, height 3 -> extents (h=3, w=4)
        assert_eq!(t.shape(), &[1, 3, 4]);
    }

    #[test]
    fn pgm_payload_shortfall_names_missing_bytes() {
        let dir = tmpdir();
        let p = dir.path().join("short.pgm");
        let mut bytes = b"P5\n4 3\n65535\n".to_vec();
        bytes.extend_from_slice(&[0u8; 20]); // 4 bytes short
        std::fs::write(&p, bytes).unwrap();
        let err = read_depth_pgm(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("short by 4"), "message: {msg}");
        assert!(msg.contains("byte"), "message: {msg}");
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tmpdir();
        let p = dir.path().join("g.ppm");
        let guide = Tensor::from_vec(
            (0..3 * 12).map(|v| (v as f32 * 37.0 % 255.0) / 255.0).collect(),
            &[3, 3, 4],
        )
        .unwrap();
        write_guide_ppm(&p, &guide).unwrap();
        let back = read_guide_ppm(&p).unwrap();
        for (a, b) in guide.to_vec().iter().zip(back.to_vec()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn manifest_parses_and_validates() {
        let dir = tmpdir();
        let d = Tensor::full(&[1, 4, 4], 0.5f32);
        let g = Tensor::full(&[3, 4, 4], 0.5f32);
        write_depth_pgm(&dir.path().join("a.pgm"), &d).unwrap();
        write_guide_ppm(&dir.path().join("a.ppm"), &g).unwrap();
        let mpath = dir.path().join("set.manifest");
        std::fs::write(&mpath, "# test\nunit cm\nrange 50 1000\na.pgm a.ppm\n").unwrap();
        let m = read_manifest(&mpath).unwrap();
        assert_eq!(m.unit, RmseUnit::Centimeters);
        assert_eq!(m.range, Some((50.0, 1000.0)));
        let samples = load_eval_samples(&m).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].denorm, (50.0, 1000.0));

        std::fs::write(&mpath, "unit cm\nmissing.pgm a.ppm\n").unwrap();
        assert!(read_manifest(&mpath).is_err());
        std::fs::write(&mpath, "a.pgm a.ppm\n").unwrap();
        assert!(read_manifest(&mpath).is_err()); // no unit
    }

    #[test]
    fn config_kv_round_trip() {
        let net = NetworkConfig::desk();
        let train = TrainConfig::desk(2, 300);
        let text = format!("{}{}", network_config_to_kv(&net), train_config_to_kv(&train));
        let kv = parse_kv(&text);
        assert_eq!(network_config_from_kv(&kv).unwrap(), net);
        assert_eq!(train_config_from_kv(&kv).unwrap(), train);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let dir = tmpdir();
        let path = dir.path().join("net.ckpt");
        let mut cfg = NetworkConfig::desk();
        cfg.channels = 8;
        let net = GeoDsrNetwork::new(cfg, 123).unwrap();
        save_checkpoint(&path, &net, Some(&TrainConfig::desk(1, 10))).unwrap();
        let (loaded, train) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, net.config);
        assert_eq!(train.unwrap().max_steps, Some(10));
        for ((an, at), (bn, bt)) in net.named_params().iter().zip(loaded.named_params()) {
            assert_eq!(an, &bn);
            assert_eq!(at.to_vec(), bt.to_vec(), "parameter {an}");
        }

        // flip one byte inside the parameter payload
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch { .. }), "{err}");
    }

    #[test]
    fn checkpoint_config_mismatch_fails_loudly() {
        let dir = tmpdir();
        let path = dir.path().join("net.ckpt");
        let mut cfg = NetworkConfig::desk();
        cfg.channels = 8;
        let net = GeoDsrNetwork::new(cfg, 1).unwrap();
        save_checkpoint(&path, &net, None).unwrap();
        // rewrite the config block to claim a different fusion, leaving the
        // parameter table untouched
        let bytes = std::fs::read(&path).unwrap();
        let body = &bytes[12..bytes.len() - 32];
        let config_len = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&body[4..4 + config_len]).unwrap();
        let patched = text.replace(
            "net.use_modulation_fusion=true",
            "net.use_modulation_fusion=false",
        );
        assert_ne!(text, patched);
        let mut new_body = Vec::new();
        new_body.extend_from_slice(&(patched.len() as u32).to_le_bytes());
        new_body.extend_from_slice(patched.as_bytes());
        new_body.extend_from_slice(&body[4 + config_len..]);
        let digest = Sha256::digest(&new_body);
        let mut new_bytes = bytes[..12].to_vec();
        new_bytes.extend_from_slice(&new_body);
        new_bytes.extend_from_slice(&digest);
        std::fs::write(&path, &new_bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    }
}
