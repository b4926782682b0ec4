//! Dataset directories and translation of run configs into library configs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use skelcloud::cloud::{ColorScheme, Stream};
use skelcloud::masking::MaskStrategy;
use skelcloud::model::EncoderConfig;
use skelcloud::probe::{EvalConfig, EvalMode, Fusion};
use skelcloud::skeleton::{
    body_partition, load_sequence, parse_layout, write_sequence, BodyPartition, JointLayout,
    LabeledDataset, PartitionScale, SkeletonSequence, Split,
};
use skelcloud::trainer::{Coarse, InputColoring, TrainConfig};

use crate::config::RunConfig;

/// A split loaded from disk, with file stems as sample ids.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub dataset: LabeledDataset,
    pub ids: Vec<String>,
}

fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(match split {
        Split::Train => "train",
        Split::Test => "test",
    })
}

/// Class names from `classes.txt`, one per line.
pub fn class_names(root: &Path) -> Result<Option<Vec<String>>> {
    let path = root.join("classes.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    ))
}

/// Writes a dataset directory: `classes.txt` plus one SKL file per sample
/// under `train/` and `test/`.
pub fn write_dataset(
    root: &Path,
    classes: &[&str],
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    fs::create_dir_all(root)?;
    let names = root.join("classes.txt");
    fs::write(
        &names,
        classes.iter().map(|c| format!("{c}\n")).collect::<String>(),
    )?;
    written.push(names);
    for d in [train, test] {
        let dir = split_dir(root, d.split);
        fs::create_dir_all(&dir)?;
        for (i, s) in d.samples.iter().enumerate() {
            let path = dir.join(format!("{i:04}.skl"));
            fs::write(&path, write_sequence(s))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Loads one split, applying the `data.*` preprocessing keys.
pub fn load_split(cfg: &RunConfig, root: &Path, split: Split) -> Result<LoadedSplit> {
    let dir = split_dir(root, split);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "skl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .skl files in {}", dir.display());
    }
    let frames: usize = cfg.parse_as("data.frames")?;
    let center = cfg.bool("data.center")?;
    let mut samples = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for p in &paths {
        let mut s = load_sequence(p, None).with_context(|| format!("loading {}", p.display()))?;
        if s.label().is_none() {
            bail!("{} has no class label", p.display());
        }
        if frames > 0 {
            s = s.uniform_sample(frames);
        }
        if center {
            s = s.centered();
        }
        samples.push(s);
        ids.push(
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let max_label = samples
        .iter()
        .filter_map(SkeletonSequence::label)
        .max()
        .unwrap_or(0);
    let class_count = match class_names(root)? {
        Some(names) => {
            if max_label >= names.len() {
                bail!(
                    "label {} exceeds the {} classes in classes.txt",
                    max_label + 1,
                    names.len()
                );
            }
            names.len()
        }
        None => max_label + 1,
    };
    Ok(LoadedSplit {
        dataset: LabeledDataset {
            samples,
            class_count,
            split,
        },
        ids,
    })
}

/// Applies `data.*` preprocessing to a single sequence.
pub fn preprocess(cfg: &RunConfig, mut s: SkeletonSequence) -> Result<SkeletonSequence> {
    let frames: usize = cfg.parse_as("data.frames")?;
    if frames > 0 {
        s = s.uniform_sample(frames);
    }
    if cfg.bool("data.center")? {
        s = s.centered();
    }
    Ok(s)
}

pub fn layout(cfg: &RunConfig, joints: usize) -> Result<Option<JointLayout>> {
    let path = cfg.get("data.layout");
    if path.is_empty() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading layout {path}"))?;
    Ok(Some(parse_layout(path, joints, &text)?))
}

fn scale(cfg: &RunConfig, key: &str) -> Result<PartitionScale> {
    let n: u8 = cfg.parse_as(key)?;
    PartitionScale::from_number(n).ok_or_else(|| cfg.error(key, "expected 1 or 2").into())
}

pub fn partition(cfg: &RunConfig, key: &str, joints: usize) -> Result<BodyPartition> {
    let l = layout(cfg, joints)?;
    Ok(body_partition(joints, scale(cfg, key)?, l.as_ref())?)
}

pub fn stream(cfg: &RunConfig) -> Result<Stream> {
    Stream::from_name(cfg.get("color.stream")).ok_or_else(|| {
        cfg.error("color.stream", "expected temporal, spatial or person")
            .into()
    })
}

/// A coloring scheme by name: the three fine schemes plus
/// `coarse-temporal` and `coarse-spatial`.
pub fn scheme(cfg: &RunConfig, name: &str, joints: usize) -> Result<ColorScheme> {
    Ok(match name {
        "coarse-temporal" => ColorScheme::CoarseTemporal {
            segment_size: cfg.parse_as("color.segment_size")?,
        },
        "coarse-spatial" => ColorScheme::CoarseSpatial {
            partition: partition(cfg, "color.scale", joints)?,
        },
        other => Stream::from_name(other)
            .ok_or_else(|| anyhow::anyhow!("unknown scheme `{other}`"))?
            .fine_scheme(),
    })
}

pub fn mask_strategy(cfg: &RunConfig, joints: usize) -> Result<MaskStrategy> {
    let strategy = match cfg.get("mask.strategy") {
        "auto" => match stream(cfg)? {
            Stream::Temporal => "segment",
            Stream::Spatial => "joint",
            Stream::Person => "random",
        },
        name => name,
    };
    let param = match (cfg.get("mask.param"), strategy) {
        ("auto", "random") => "0.25",
        ("auto", "segment") => "15",
        ("auto", "joint") => "10",
        ("auto", _) => {
            return Err(cfg
                .error("mask.param", "no default for this strategy; set a count")
                .into())
        }
        (p, _) => p,
    };
    let count = || -> Result<usize> {
        param
            .parse()
            .map_err(|_| cfg.error("mask.param", "expected a count").into())
    };
    Ok(match strategy {
        "random" => MaskStrategy::Random {
            ratio: param
                .parse()
                .map_err(|_| cfg.error("mask.param", "expected a ratio"))?,
        },
        "frame" => MaskStrategy::FrameOnly { frames: count()? },
        "segment" => MaskStrategy::Segment { length: count()? },
        "joint" => MaskStrategy::JointOnly { joints: count()? },
        "body_part" => MaskStrategy::BodyPart {
            parts: count()?,
            partition: partition(cfg, "mask.scale", joints)?,
        },
        _ => {
            return Err(cfg
                .error(
                    "mask.strategy",
                    "expected auto, random, frame, segment, joint or body_part",
                )
                .into())
        }
    })
}

pub fn mask_seed(cfg: &RunConfig, root: u64) -> Result<u64> {
    if cfg.get("mask.seed").is_empty() {
        Ok(skelcloud::seed::derive(
            root,
            &[skelcloud::seed::stream::MASK],
        ))
    } else {
        cfg.parse_as("mask.seed").map_err(Into::into)
    }
}

pub fn encoder_config(cfg: &RunConfig) -> Result<EncoderConfig> {
    let enc = EncoderConfig {
        k_neighbors: cfg.parse_as("train.k")?,
        layer_widths: cfg.list("train.widths")?,
        latent_dim: cfg.parse_as("train.latent")?,
        normalize: cfg.bool("train.normalize")?,
    };
    enc.validate()?;
    Ok(enc)
}

/// Whether the run trains the two-branch objective.
pub fn coarse_fine(cfg: &RunConfig, stream: Stream) -> Result<bool> {
    match cfg.get("train.objective") {
        "coarse_fine" => Ok(stream != Stream::Person),
        "fine_only" => Ok(false),
        _ => Err(cfg
            .error("train.objective", "expected coarse_fine or fine_only")
            .into()),
    }
}

pub fn train_config(cfg: &RunConfig, seed: u64, joints: usize) -> Result<TrainConfig> {
    let stream = stream(cfg)?;
    let coarse = match stream {
        Stream::Temporal => Some(Coarse::Segment(cfg.parse_as("color.segment_size")?)),
        Stream::Spatial => Some(Coarse::Partition(partition(cfg, "color.scale", joints)?)),
        Stream::Person => None,
    };
    let input = match cfg.get("color.input") {
        "raw" => InputColoring::Raw,
        "colored" => InputColoring::Colored,
        _ => return Err(cfg.error("color.input", "expected raw or colored").into()),
    };
    let mut t = TrainConfig::new(stream, mask_strategy(cfg, joints)?);
    t.mask.seed = mask_seed(cfg, seed)?;
    t.seed = skelcloud::seed::derive(seed, &[skelcloud::seed::stream::INIT]);
    t.epochs = cfg.parse_as("train.epochs")?;
    t.batch_size = cfg.parse_as("train.batch_size")?;
    t.lr_start = cfg.parse_as("train.lr_start")?;
    t.lr_end = cfg.parse_as("train.lr_end")?;
    t.align_weight = cfg.parse_as("train.align_weight")?;
    t.encoder = encoder_config(cfg)?;
    t.decoder_widths = cfg.list("train.decoder_widths")?;
    t.coarse = coarse;
    t.input = input;
    t.export_extras = cfg.bool("train.export_extras")?;
    t.validate()?;
    Ok(t)
}

pub fn eval_config(cfg: &RunConfig, seed: u64) -> Result<EvalConfig> {
    let mode = match cfg.get("eval.mode") {
        "frozen" => EvalMode::UnsupervisedFrozen,
        "semi" => EvalMode::SemiSupervised(cfg.parse_as("eval.percent")?),
        "supervised" => EvalMode::Supervised,
        _ => {
            return Err(cfg
                .error("eval.mode", "expected frozen, semi or supervised")
                .into())
        }
    };
    let mut e = EvalConfig::new(mode);
    e.epochs = cfg.parse_as("eval.epochs")?;
    e.batch_size = cfg.parse_as("eval.batch_size")?;
    e.lr_start = cfg.parse_as("eval.lr_start")?;
    e.lr_end = cfg.parse_as("eval.lr_end")?;
    e.standardize = cfg.bool("eval.standardize")?;
    e.seed = skelcloud::seed::derive(seed, &[skelcloud::seed::stream::PROBE]);
    e.validate()?;
    Ok(e)
}

pub fn fusion(cfg: &RunConfig) -> Result<Fusion> {
    match cfg.get("eval.fusion") {
        "mean" => Ok(Fusion::MeanSoftmax),
        "sum" => Ok(Fusion::SumLogits),
        _ => Err(cfg.error("eval.fusion", "expected mean or sum").into()),
    }
}
