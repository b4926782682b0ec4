//! Binary little-endian checkpoint files.
//!
//! ```text
//! "SKPT" | u32 version | u32 config_len | config block
//! u32 tensor_count | { u32 name_len | name | u32 rank | u32 dims.. | f32 data.. }*
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{join, Decoder, DecoderConfig, Encoder, EncoderConfig, HeadConfig, Mlp, ParamSet};
use crate::cloud::Stream;

pub const MAGIC: &[u8; 4] = b"SKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Configs plus named tensors. Tensor names carry a sub-network prefix
/// (`encoder.`, `decoder.`, `head.`, or the same with a `coarse_` prefix).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub decoder: Option<DecoderConfig>,
    pub head: Option<HeadConfig>,
    pub stream: Option<Stream>,
    pub tensors: Vec<NamedTensor>,
}

fn collect(set: &dyn ParamSet, prefix: &str, out: &mut Vec<NamedTensor>) {
    set.visit(prefix, &mut |name, shape, data| {
        out.push(NamedTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: data.to_vec(),
        })
    });
}

impl Checkpoint {
    pub fn new(encoder: &Encoder, stream: Option<Stream>) -> Self {
        let mut tensors = Vec::new();
        collect(encoder, "encoder", &mut tensors);
        Self {
            encoder: encoder.cfg.clone(),
            decoder: None,
            head: None,
            stream,
            tensors,
        }
    }

    pub fn with_decoder(mut self, decoder: &Decoder) -> Self {
        collect(decoder, "decoder", &mut self.tensors);
        self.decoder = Some(decoder.cfg.clone());
        self
    }

    pub fn with_head(mut self, head: &Mlp, cfg: &HeadConfig) -> Self {
        collect(head, "head", &mut self.tensors);
        self.head = Some(cfg.clone());
        self
    }

    /// Adds training-time extras under `prefix` (e.g. `coarse_`).
    pub fn with_extra(mut self, prefix: &str, name: &str, set: &dyn ParamSet) -> Self {
        collect(set, &join(prefix, name), &mut self.tensors);
        self
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|t| t.name.as_str()).collect()
    }

    fn fill(&self, set: &mut dyn ParamSet, prefix: &str) -> Result<(), CheckpointError> {
        let by_name: BTreeMap<&str, &NamedTensor> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut expected = Vec::new();
        set.visit(prefix, &mut |name, shape, _| {
            expected.push((name.to_string(), shape.to_vec()))
        });
        for (name, shape) in &expected {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| CheckpointError::Shape(format!("missing tensor {name}")))?;
            if &t.shape != shape {
                return Err(CheckpointError::Shape(format!(
                    "{name}: expected {shape:?}, stored {:?}",
                    t.shape
                )));
            }
        }
        for (name, _) in &expected {
            if by_name[name.as_str()].data.len()
                != by_name[name.as_str()].shape.iter().product::<usize>()
            {
                return Err(CheckpointError::Corrupt(format!(
                    "{name}: data length does not match dims"
                )));
            }
        }
        set.visit_mut(prefix, &mut |name, data| {
            data.copy_from_slice(&by_name[name].data)
        });
        Ok(())
    }

    fn zero_encoder(&self) -> Encoder {
        let mut rng = crate::seed::rng(0, &[]);
        let mut e = Encoder::init(&self.encoder, &mut rng);
        e.scale(0.0);
        e
    }

    /// Fine encoder weights.
    pub fn encoder(&self) -> Result<Encoder, CheckpointError> {
        self.encoder_with_prefix("")
    }

    /// Encoder stored under `prefix` (empty for the exported one).
    pub fn encoder_with_prefix(&self, prefix: &str) -> Result<Encoder, CheckpointError> {
        let mut e = self.zero_encoder();
        self.fill(&mut e, &join(prefix, "encoder"))?;
        Ok(e)
    }

    pub fn decoder(&self) -> Result<Decoder, CheckpointError> {
        let cfg = self
            .decoder
            .as_ref()
            .ok_or_else(|| CheckpointError::Shape("no decoder config".into()))?;
        let mut d = Decoder::init(cfg, self.encoder.latent_dim, &mut crate::seed::rng(0, &[]));
        self.fill(&mut d, "decoder")?;
        Ok(d)
    }

    pub fn head(&self) -> Result<Mlp, CheckpointError> {
        let cfg = self
            .head
            .as_ref()
            .ok_or_else(|| CheckpointError::Shape("no head config".into()))?;
        let mut h = Mlp::init(&cfg.dims(), &mut crate::seed::rng(0, &[]));
        self.fill(&mut h, "head")?;
        Ok(h)
    }

    /// Loads the encoder, requiring its config to equal `expected`.
    pub fn encoder_matching(&self, expected: &EncoderConfig) -> Result<Encoder, CheckpointError> {
        if &self.encoder != expected {
            return Err(CheckpointError::Shape(format!(
                "checkpoint encoder {:?} does not match requested {:?}",
                self.encoder, expected
            )));
        }
        self.encoder()
    }

    /// Checks every tensor against the shapes implied by the configs.
    fn validate(&self) -> Result<(), CheckpointError> {
        if self.encoder.validate().is_err() {
            return Err(CheckpointError::Corrupt(format!(
                "invalid encoder config {:?}",
                self.encoder
            )));
        }
        if let Some(d) = &self.decoder {
            if d.validate().is_err() {
                return Err(CheckpointError::Corrupt(format!(
                    "invalid decoder config {d:?}"
                )));
            }
        }
        let mut reference: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut add = |set: &dyn ParamSet, name: &str| {
            for prefix in ["", "coarse_"] {
                set.visit(&join(prefix, name), &mut |n, shape, _| {
                    reference.insert(n.to_string(), shape.to_vec());
                });
            }
        };
        add(&self.zero_encoder(), "encoder");
        if let Some(cfg) = &self.decoder {
            add(
                &Decoder::init(cfg, self.encoder.latent_dim, &mut crate::seed::rng(0, &[])),
                "decoder",
            );
        }
        if let Some(cfg) = &self.head {
            add(
                &Mlp::init(&cfg.dims(), &mut crate::seed::rng(0, &[])),
                "head",
            );
        }
        for t in &self.tensors {
            match reference.get(&t.name) {
                None => {
                    return Err(CheckpointError::Shape(format!(
                        "unexpected tensor {}",
                        t.name
                    )))
                }
                Some(shape) if shape != &t.shape => {
                    return Err(CheckpointError::Shape(format!(
                        "{}: config implies {shape:?}, stored {:?}",
                        t.name, t.shape
                    )))
                }
                _ => {}
            }
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(CheckpointError::Corrupt(format!(
                    "{}: data length does not match dims",
                    t.name
                )));
            }
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_list(out: &mut Vec<u8>, v: &[usize]) {
    put_u32(out, v.len());
    v.iter().for_each(|&x| put_u32(out, x));
}

fn stream_code(s: Option<Stream>) -> u8 {
    match s {
        None => 0,
        Some(Stream::Temporal) => 1,
        Some(Stream::Spatial) => 2,
        Some(Stream::Person) => 3,
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut cfg = Vec::new();
    let e = &ckpt.encoder;
    put_u32(&mut cfg, e.k_neighbors);
    put_u32(&mut cfg, e.latent_dim);
    cfg.push(e.normalize as u8);
    put_list(&mut cfg, &e.layer_widths);
    match &ckpt.decoder {
        None => cfg.push(0),
        Some(d) => {
            cfg.push(1);
            put_u32(&mut cfg, d.grid_side);
            put_u32(&mut cfg, d.output_points);
            put_u32(&mut cfg, d.output_channels);
            put_list(&mut cfg, &d.fold_widths);
        }
    }
    match &ckpt.head {
        None => cfg.push(0),
        Some(h) => {
            cfg.push(1);
            put_u32(&mut cfg, h.latent_dim);
            put_u32(&mut cfg, h.classes);
            put_list(&mut cfg, &h.hidden);
        }
    }
    cfg.push(stream_code(ckpt.stream));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    put_u32(&mut out, ckpt.tensors.len());
    for t in &ckpt.tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_list(&mut out, &t.shape);
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                CheckpointError::Corrupt(format!("truncated at byte {} (need {n} more)", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn list(&mut self) -> Result<Vec<usize>, CheckpointError> {
        let n = self.u32()?;
        if n > self.buf.len() {
            return Err(CheckpointError::Corrupt(format!(
                "implausible list length {n}"
            )));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Corrupt("truncated header".into())
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let cfg_len = r.u32()?;
    let cfg_bytes = r.take(cfg_len)?;
    let mut c = Reader {
        buf: cfg_bytes,
        pos: 0,
    };
    let encoder = EncoderConfig {
        k_neighbors: c.u32()?,
        latent_dim: c.u32()?,
        normalize: c.u8()? != 0,
        layer_widths: c.list()?,
    };
    let decoder = match c.u8()? {
        0 => None,
        _ => Some(DecoderConfig {
            grid_side: c.u32()?,
            output_points: c.u32()?,
            output_channels: c.u32()?,
            fold_widths: c.list()?,
        }),
    };
    let head = match c.u8()? {
        0 => None,
        _ => {
            let latent_dim = c.u32()?;
            let classes = c.u32()?;
            Some(HeadConfig {
                latent_dim,
                classes,
                hidden: c.list()?,
            })
        }
    };
    let stream = match c.u8()? {
        0 => None,
        1 => Some(Stream::Temporal),
        2 => Some(Stream::Spatial),
        3 => Some(Stream::Person),
        x => return Err(CheckpointError::Corrupt(format!("unknown stream code {x}"))),
    };
    if c.pos != cfg_bytes.len() {
        return Err(CheckpointError::Corrupt(
            "config block length mismatch".into(),
        ));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let shape = r.list()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len
            .filter(|&l| l <= bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: bad dims")))?;
        let raw = r.take(4 * len)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let ckpt = Checkpoint {
        encoder,
        decoder,
        head,
        stream,
        tensors,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

/// Writes atomically via a temporary file in the same directory.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(ckpt);
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}
