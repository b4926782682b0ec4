//! Flat `key = value` run configuration.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}` = `{value}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
}

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "data.dir",
        "data",
        "dataset directory with train/ and test/ SKL files",
    ),
    (
        "data.frames",
        "0",
        "resample every sequence to this many frames (0 keeps the input length)",
    ),
    (
        "data.center",
        "false",
        "translate each sequence so the first root joint is at the origin",
    ),
    (
        "data.layout",
        "",
        "joint layout file (empty uses the built-in layout for J)",
    ),
    ("color.stream", "temporal", "temporal | spatial | person"),
    (
        "color.segment_size",
        "5",
        "frames per coarse temporal segment",
    ),
    (
        "color.scale",
        "1",
        "body-part scale for coarse spatial coloring: 1 (10 parts) or 2 (6 parts)",
    ),
    (
        "color.input",
        "raw",
        "encoder input at visible points: raw | colored",
    ),
    (
        "mask.strategy",
        "auto",
        "auto | random | frame | segment | joint | body_part (auto: segment for temporal, joint for spatial, random for person)",
    ),
    (
        "mask.param",
        "auto",
        "ratio for random, otherwise a count or segment length (auto: 0.25 ratio, 15 frames, 10 joints)",
    ),
    ("mask.seed", "", "mask seed (empty derives it from --seed)"),
    ("mask.scale", "1", "partition scale for body_part masking"),
    (
        "train.objective",
        "coarse_fine",
        "coarse_fine | fine_only (the person stream is always fine_only)",
    ),
    ("train.epochs", "150", "pretraining epochs"),
    ("train.batch_size", "24", "samples per optimizer step"),
    ("train.lr_start", "1e-5", "initial learning rate"),
    (
        "train.lr_end",
        "1e-7",
        "final learning rate of the cosine schedule",
    ),
    (
        "train.align_weight",
        "1.0",
        "weight of the latent alignment term",
    ),
    (
        "train.k",
        "8",
        "neighbours per point in the edge convolutions",
    ),
    ("train.widths", "64,128", "edge convolution output widths"),
    ("train.latent", "128", "latent code width"),
    (
        "train.normalize",
        "false",
        "normalize each point's features after every edge convolution",
    ),
    (
        "train.decoder_widths",
        "64,64",
        "hidden widths of both folding stages",
    ),
    (
        "train.export_extras",
        "false",
        "also store decoders and the coarse branch in the checkpoint",
    ),
    ("eval.mode", "frozen", "frozen | semi | supervised"),
    (
        "eval.percent",
        "10",
        "labelled percentage per class in semi mode",
    ),
    ("eval.epochs", "200", "classifier training epochs"),
    ("eval.batch_size", "32", "classifier batch size"),
    ("eval.lr_start", "1e-3", "initial classifier learning rate"),
    ("eval.lr_end", "1e-5", "final classifier learning rate"),
    (
        "eval.standardize",
        "true",
        "standardize frozen latent codes before the probe head",
    ),
    (
        "eval.fusion",
        "mean",
        "stream fusion: mean (softmax average) | sum (logit sum)",
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

impl RunConfig {
    /// Defaults overlaid with the assignments in `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            if k.trim().is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("undeclared config key {key}"))
    }

    fn invalid(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            key: key.to_string(),
            value: self.get(key).to_string(),
            reason: reason.into(),
        }
    }

    pub fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key)
            .parse()
            .map_err(|_| self.invalid(key, format!("expected {}", std::any::type_name::<T>())))
    }

    pub fn list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| self.invalid(key, "expected comma-separated counts"))
            })
            .collect()
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(self.invalid(key, "expected true or false")),
        }
    }

    /// One `key = value` line per key, sorted; the input to [`Self::hash`].
    pub fn resolved(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the resolved text, in hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn error(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        self.invalid(key, reason)
    }
}
