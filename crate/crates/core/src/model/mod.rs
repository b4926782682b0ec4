//! Differentiable encoder, decoder and classifier head.
//!
//! Forward passes return caches; backward passes accumulate parameter
//! gradients into a zero-initialized copy of the same structure. Values are
//! held as `f64` for exact gradient checks; trained parameters are kept
//! representable as `f32`, which is what checkpoints store.

mod checkpoint;
mod decoder;
mod encoder;
mod knn;
mod linear;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, NamedTensor,
};
pub use decoder::{Decoder, DecoderCache, DecoderConfig, OUTPUT_CHANNELS};
pub use encoder::{Encoder, EncoderCache, EncoderConfig};
pub use knn::knn_graph;
pub use linear::{Linear, Mlp, MlpCache};

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::seed::{self, stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("k = {k} neighbours needs between 1 and n-1 for n = {points} points")]
    Neighbors { k: usize, points: usize },
    #[error("grid side {side} gives fewer than {points} nodes")]
    GridTooSmall { side: usize, points: usize },
    #[error("{0}")]
    Config(String),
}

/// Callback receiving a tensor's name, shape and values.
pub type TensorVisitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

/// Named parameter tensors, visited in a fixed order.
pub trait ParamSet {
    fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>);
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += scale * other`, matched by visiting order.
    fn add_scaled(&mut self, other: &dyn ParamSet, scale: f64) {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut("", &mut |_, v| {
            for (a, b) in v.iter_mut().zip(&flat[offset..]) {
                *a += scale * b;
            }
            offset += v.len();
        });
    }

    fn scale(&mut self, s: f64) {
        self.visit_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x *= s));
    }

    /// Rounds every value to the nearest `f32`.
    fn round_to_f32(&mut self) {
        self.visit_mut("", &mut |_, v| {
            v.iter_mut().for_each(|x| *x = *x as f32 as f64)
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Array1<f64>);

impl LatentVector {
    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Classifier head shape: `latent -> hidden.. -> classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl HeadConfig {
    /// Three fully connected layers: `L -> L/2 -> L/4 -> C`.
    pub fn new(latent_dim: usize, classes: usize) -> Self {
        Self {
            latent_dim,
            hidden: vec![(latent_dim / 2).max(1), (latent_dim / 4).max(1)],
            classes,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.hidden);
        d.push(self.classes);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: Option<DecoderConfig>,
    pub head: Option<HeadConfig>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if let Some(d) = &self.decoder {
            d.validate()?;
        }
        if let Some(h) = &self.head {
            if h.latent_dim != self.encoder.latent_dim {
                return Err(ModelError::Shape {
                    what: "head input width",
                    expected: self.encoder.latent_dim,
                    found: h.latent_dim,
                });
            }
            if h.classes < 2 {
                return Err(ModelError::Config(format!(
                    "need at least 2 classes, got {}",
                    h.classes
                )));
            }
        }
        Ok(())
    }
}

/// Encoder plus optional decoder and classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub decoder: Option<Decoder>,
    pub head: Option<Mlp>,
}

/// Deterministic initialization from `seed`; each sub-network draws from its
/// own derived stream.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let encoder = Encoder::init(&cfg.encoder, &mut seed::rng(seed, &[stream::INIT, 0]));
    let decoder = cfg.decoder.as_ref().map(|d| {
        Decoder::init(
            d,
            cfg.encoder.latent_dim,
            &mut seed::rng(seed, &[stream::INIT, 1]),
        )
    });
    let head = cfg
        .head
        .as_ref()
        .map(|h| Mlp::init(&h.dims(), &mut seed::rng(seed, &[stream::INIT, 2])));
    let mut params = ModelParams {
        encoder,
        decoder,
        head,
    };
    params.round_to_f32();
    Ok(params)
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.as_ref().map(Decoder::zeros_like),
            head: self.head.as_ref().map(Mlp::zeros_like),
        }
    }

    pub fn decoder(&self) -> &Decoder {
        self.decoder.as_ref().expect("model has a decoder")
    }

    pub fn head(&self) -> &Mlp {
        self.head.as_ref().expect("model has a classifier head")
    }
}

impl ParamSet for ModelParams {
    fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        if let Some(d) = &self.decoder {
            d.visit(&join(prefix, "decoder"), f);
        }
        if let Some(h) = &self.head {
            h.visit(&join(prefix, "head"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        if let Some(d) = &mut self.decoder {
            d.visit_mut(&join(prefix, "decoder"), f);
        }
        if let Some(h) = &mut self.head {
            h.visit_mut(&join(prefix, "head"), f);
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}{name}")
    }
}

/// Logits of the classifier head for one latent code.
pub fn classify(head: &Mlp, latent: ArrayView1<f64>) -> Array1<f64> {
    let x = latent.insert_axis(ndarray::Axis(0));
    head.forward(x).0.row(0).to_owned()
}

/// Latent codes stacked as rows.
pub fn stack_latents(latents: &[LatentVector]) -> Array2<f64> {
    let views: Vec<_> = latents
        .iter()
        .map(|z| z.view().insert_axis(ndarray::Axis(0)))
        .collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("equal latent widths")
}

#[cfg(test)]
mod tests;
