//! Self-supervised repainting: masked raw cloud in, colorized cloud out.
//!
//! The temporal and spatial streams train a fine and a coarse
//! encoder-decoder pair side by side, tied by a latent alignment penalty.
//! The person stream has a single pair. Only the fine encoder is exported.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{build_cloud, colorize, ColorError, ColorScheme, SkeletonCloud, Stream};
use crate::losses::{chamfer_grad, mse_align_grad, LossError};
use crate::masking::{mask_indices, MaskError, MaskSpec, MaskStrategy};
use crate::model::{
    init_params, Checkpoint, Decoder, DecoderConfig, Encoder, EncoderConfig, ModelConfig,
    ModelError, ParamSet, TensorVisitor,
};
use crate::optim::{cosine_lr, Adam};
use crate::seed::{self, stream};
use crate::skeleton::{BodyPartition, SkeletonSequence};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset")]
    Empty,
    #[error("sample {index} has shape {found:?}, expected {expected:?}")]
    Shape {
        index: usize,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("person stream needs two-person sequences")]
    SinglePerson,
    #[error("{0} stream needs a coarse parameter (segment size or body partition)")]
    MissingCoarse(&'static str),
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the encoders see at visible points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputColoring {
    /// Positions with zero color.
    #[default]
    Raw,
    /// Positions with the branch's target color.
    Colored,
}

/// Coarse-level coloring for the second branch.
#[derive(Debug, Clone, PartialEq)]
pub enum Coarse {
    Segment(usize),
    Partition(BodyPartition),
}

impl Coarse {
    fn scheme(&self) -> ColorScheme {
        match self {
            Self::Segment(s) => ColorScheme::CoarseTemporal { segment_size: *s },
            Self::Partition(p) => ColorScheme::CoarseSpatial {
                partition: p.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Weight of the latent alignment term.
    pub align_weight: f64,
    pub stream: Stream,
    /// Per-sample masks are drawn from `mask.seed`, the epoch and the sample
    /// index, so they change every epoch.
    pub mask: MaskSpec,
    /// Seeds initialization and batch order.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub decoder_widths: Vec<usize>,
    /// Required for the two-branch temporal and spatial objectives.
    pub coarse: Option<Coarse>,
    pub input: InputColoring,
    /// Also store the fine decoder and the coarse branch in the checkpoint.
    pub export_extras: bool,
}

impl TrainConfig {
    pub fn new(stream: Stream, mask: MaskStrategy) -> Self {
        Self {
            epochs: 150,
            batch_size: 24,
            lr_start: 1e-5,
            lr_end: 1e-7,
            align_weight: 1.0,
            stream,
            mask: MaskSpec {
                strategy: mask,
                seed: 0,
            },
            seed: 0,
            encoder: EncoderConfig::desk(),
            decoder_widths: vec![64, 64],
            coarse: None,
            input: InputColoring::Raw,
            export_extras: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if !(self.align_weight >= 0.0 && self.align_weight.is_finite()) {
            return bad(format!(
                "alignment weight must be >= 0, got {}",
                self.align_weight
            ));
        }
        self.encoder.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub chamfer_fine: f64,
    /// Zero for single-branch training.
    pub chamfer_coarse: f64,
    /// Zero for single-branch training.
    pub align: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// The record without its wall-clock field, for reproducibility checks.
    pub fn losses(&self) -> [f64; 4] {
        [self.chamfer_fine, self.chamfer_coarse, self.align, self.lr]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,chamfer_fine,chamfer_coarse,align,lr,seconds";

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.epochs {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:.3}",
                r.epoch, r.chamfer_fine, r.chamfer_coarse, r.align, r.lr, r.seconds
            )?;
        }
        Ok(())
    }
}

/// One encoder-decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Branch {
    fn init(cfg: &TrainConfig, points: usize, seed: u64) -> Result<Self, TrainError> {
        let model = ModelConfig {
            encoder: cfg.encoder.clone(),
            decoder: Some(DecoderConfig::for_points(
                points,
                cfg.decoder_widths.clone(),
            )),
            head: None,
        };
        let p = init_params(&model, seed)?;
        Ok(Self {
            encoder: p.encoder,
            decoder: p.decoder.expect("decoder requested"),
        })
    }

    fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

impl ParamSet for Branch {
    fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>) {
        self.encoder.visit(&format!("{prefix}encoder"), f);
        self.decoder.visit(&format!("{prefix}decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&format!("{prefix}encoder"), f);
        self.decoder.visit_mut(&format!("{prefix}decoder"), f);
    }
}

/// Fine branch plus the optional coarse branch (names prefixed `coarse_`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable {
    pub fine: Branch,
    pub coarse: Option<Branch>,
}

impl Trainable {
    /// Fine branch from `seed`, coarse branch from a derived seed. The fine
    /// encoder equals `init_params(.., seed).encoder` for the same configs.
    pub fn init(cfg: &TrainConfig, points: usize, two_branch: bool) -> Result<Self, TrainError> {
        let fine = Branch::init(cfg, points, cfg.seed)?;
        let coarse = if two_branch {
            Some(Branch::init(
                cfg,
                points,
                seed::derive(cfg.seed, &[stream::COARSE]),
            )?)
        } else {
            None
        };
        Ok(Self { fine, coarse })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fine: self.fine.zeros_like(),
            coarse: self.coarse.as_ref().map(Branch::zeros_like),
        }
    }
}

impl ParamSet for Trainable {
    fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>) {
        self.fine.visit(prefix, f);
        if let Some(c) = &self.coarse {
            c.visit(&format!("{prefix}coarse_"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.fine.visit_mut(prefix, f);
        if let Some(c) = &mut self.coarse {
            c.visit_mut(&format!("{prefix}coarse_"), f);
        }
    }
}

/// A training sample with its raw cloud and repainting targets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub raw: SkeletonCloud,
    pub fine_target: Array2<f64>,
    pub coarse_target: Option<Array2<f64>>,
}

/// Builds clouds and targets for every sample; all samples must share one
/// `(T, J, M)` shape.
pub fn prepare(
    samples: &[SkeletonSequence],
    fine: &ColorScheme,
    coarse: Option<&ColorScheme>,
) -> Result<Vec<Prepared>, TrainError> {
    let first = samples.first().ok_or(TrainError::Empty)?;
    let expected = (first.frames(), first.joints(), first.persons());
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let found = (s.frames(), s.joints(), s.persons());
            if found != expected {
                return Err(TrainError::Shape {
                    index,
                    expected,
                    found,
                });
            }
            let raw = build_cloud(s);
            let fine_target = colorize(&raw, fine)?.features();
            let coarse_target = coarse
                .map(|c| colorize(&raw, c).map(|c| c.features()))
                .transpose()?;
            Ok(Prepared {
                raw,
                fine_target,
                coarse_target,
            })
        })
        .collect()
}

/// Mask drawn for `sample` in `epoch` (both 0-based).
pub fn epoch_mask(
    cloud: &SkeletonCloud,
    mask: &MaskSpec,
    epoch: usize,
    sample: usize,
) -> Result<Vec<usize>, MaskError> {
    let spec = MaskSpec {
        strategy: mask.strategy.clone(),
        seed: seed::derive(mask.seed, &[stream::MASK, epoch as u64, sample as u64]),
    };
    mask_indices(cloud, &spec)
}

/// `features` with the masked rows zeroed.
pub fn masked_input(features: &Array2<f64>, masked: &[usize]) -> Array2<f64> {
    let mut x = features.clone();
    for &i in masked {
        x.row_mut(i).fill(0.0);
    }
    x
}

impl Prepared {
    /// Encoder inputs of the fine and coarse branches under `masked`.
    pub fn inputs(
        &self,
        masked: &[usize],
        coloring: InputColoring,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        match coloring {
            InputColoring::Raw => {
                let x = masked_input(&self.raw.features(), masked);
                (x.clone(), self.coarse_target.as_ref().map(|_| x))
            }
            InputColoring::Colored => (
                masked_input(&self.fine_target, masked),
                self.coarse_target.as_ref().map(|c| masked_input(c, masked)),
            ),
        }
    }
}

/// Named loss terms of one sample or the mean over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub chamfer_fine: f64,
    pub chamfer_coarse: f64,
    pub align: f64,
    pub total: f64,
}

/// Loss and parameter gradient of one sample.
pub fn sample_loss(
    model: &Trainable,
    sample: &Prepared,
    masked: &[usize],
    coloring: InputColoring,
    align_weight: f64,
) -> Result<(LossTerms, Trainable), TrainError> {
    let mut grad = model.zeros_like();
    let (fine_input, coarse_input) = sample.inputs(masked, coloring);
    let branch = |b: &Branch,
                  g: &mut Branch,
                  input: &Array2<f64>,
                  target: &Array2<f64>|
     -> Result<_, TrainError> {
        let (z, enc_cache) = b.encoder.forward(input.view())?;
        let (y, dec_cache) = b.decoder.forward(z.view())?;
        let (c, dy) = chamfer_grad(target.view(), y.view())?;
        let dz = b
            .decoder
            .backward(z.view(), &dec_cache, dy.view(), &mut g.decoder);
        Ok((c.value, z, enc_cache, dz))
    };
    let (cf, zf, cache_f, mut dzf) = branch(
        &model.fine,
        &mut grad.fine,
        &fine_input,
        &sample.fine_target,
    )?;
    let mut terms = LossTerms {
        chamfer_fine: cf,
        ..Default::default()
    };
    if let (Some(coarse), Some(g), Some(target), Some(input)) = (
        &model.coarse,
        &mut grad.coarse,
        &sample.coarse_target,
        &coarse_input,
    ) {
        let (cc, zc, cache_c, mut dzc) = branch(coarse, g, input, target)?;
        let (a, gf, gc) = mse_align_grad(zf.view(), zc.view())?;
        dzf.scaled_add(align_weight, &gf);
        dzc.scaled_add(align_weight, &gc);
        coarse
            .encoder
            .backward(&cache_c, dzc.view(), &mut g.encoder);
        terms.chamfer_coarse = cc;
        terms.align = a;
    }
    model
        .fine
        .encoder
        .backward(&cache_f, dzf.view(), &mut grad.fine.encoder);
    terms.total = terms.chamfer_fine + terms.chamfer_coarse + align_weight * terms.align;
    Ok((terms, grad))
}

/// Mean loss terms and mean gradient over a batch, given each sample's mask.
/// Per-sample work runs in parallel; the reduction is in batch order.
pub fn batch_loss(
    model: &Trainable,
    batch: &[(&Prepared, Vec<usize>)],
    coloring: InputColoring,
    align_weight: f64,
) -> Result<(LossTerms, Trainable), TrainError> {
    let per_sample: Vec<(LossTerms, Trainable)> = batch
        .par_iter()
        .map(|(s, masked)| sample_loss(model, s, masked, coloring, align_weight))
        .collect::<Result<_, _>>()?;
    let mut grad = model.zeros_like();
    let mut sum = LossTerms::default();
    for (t, g) in &per_sample {
        grad.add_scaled(g, 1.0);
        sum.chamfer_fine += t.chamfer_fine;
        sum.chamfer_coarse += t.chamfer_coarse;
        sum.align += t.align;
        sum.total += t.total;
    }
    let n = per_sample.len() as f64;
    grad.scale(1.0 / n);
    let mean = LossTerms {
        chamfer_fine: sum.chamfer_fine / n,
        chamfer_coarse: sum.chamfer_coarse / n,
        align: sum.align / n,
        total: sum.total / n,
    };
    Ok((mean, grad))
}

/// Runs the optimization loop on prepared samples, calling `observe` after
/// every epoch.
pub fn train_loop(
    model: &mut Trainable,
    data: &[Prepared],
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let (frames, joints, _) = data.first().ok_or(TrainError::Empty)?.raw.shape();
    cfg.mask.strategy.validate(frames, joints)?;
    let start = Instant::now();
    let mut opt = Adam::new(model.param_count());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end);
        order.shuffle(&mut seed::rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut sums = [0.0; 3];
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| Ok((&data[i], epoch_mask(&data[i].raw, &cfg.mask, epoch, i)?)))
                .collect::<Result<Vec<_>, TrainError>>()?;
            let (terms, grad) = batch_loss(model, &batch, cfg.input, cfg.align_weight)?;
            if !terms.total.is_finite() {
                return Err(TrainError::NonFinite { epoch: epoch + 1 });
            }
            let n = chunk.len() as f64;
            sums[0] += terms.chamfer_fine * n;
            sums[1] += terms.chamfer_coarse * n;
            sums[2] += terms.align * n;
            opt.step(model, &grad, lr);
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            chamfer_fine: sums[0] / n,
            chamfer_coarse: sums[1] / n,
            align: sums[2] / n,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        observe(&record);
        report.epochs.push(record);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn export(model: &Trainable, cfg: &TrainConfig) -> Checkpoint {
    let mut ckpt = Checkpoint::new(&model.fine.encoder, Some(cfg.stream));
    if cfg.export_extras {
        ckpt = ckpt.with_decoder(&model.fine.decoder);
        if let Some(c) = &model.coarse {
            ckpt = ckpt
                .with_extra("coarse_", "encoder", &c.encoder)
                .with_extra("coarse_", "decoder", &c.decoder);
        }
    }
    ckpt
}

fn run(
    samples: &[SkeletonSequence],
    cfg: &TrainConfig,
    coarse: Option<ColorScheme>,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainReport), TrainError> {
    cfg.validate()?;
    let data = prepare(samples, &cfg.stream.fine_scheme(), coarse.as_ref())?;
    let mut model = Trainable::init(cfg, data[0].raw.len(), coarse.is_some())?;
    let report = train_loop(&mut model, &data, cfg, observe)?;
    Ok((export(&model, cfg), report))
}

/// Single-branch person-stream pretraining on two-person sequences.
pub fn pretrain_person(
    samples: &[SkeletonSequence],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    pretrain_person_with(samples, cfg, &mut |_| {})
}

pub fn pretrain_person_with(
    samples: &[SkeletonSequence],
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainReport), TrainError> {
    if cfg.stream != Stream::Person {
        return Err(TrainError::Config(format!(
            "person pretraining got the {} stream",
            cfg.stream.name()
        )));
    }
    if samples.iter().any(|s| s.persons() < 2) {
        return Err(TrainError::SinglePerson);
    }
    run(samples, cfg, None, observe)
}

/// Two-branch (fine and coarse) pretraining with latent alignment for the
/// temporal or spatial stream.
pub fn pretrain_coarse_fine(
    samples: &[SkeletonSequence],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    pretrain_coarse_fine_with(samples, cfg, &mut |_| {})
}

pub fn pretrain_coarse_fine_with(
    samples: &[SkeletonSequence],
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainReport), TrainError> {
    let coarse = match (cfg.stream, &cfg.coarse) {
        (Stream::Person, _) => {
            return Err(TrainError::Config(
                "coarse-fine pretraining needs the temporal or spatial stream".into(),
            ))
        }
        (Stream::Temporal, Some(c @ Coarse::Segment(_)))
        | (Stream::Spatial, Some(c @ Coarse::Partition(_))) => c.scheme(),
        (s, _) => return Err(TrainError::MissingCoarse(s.name())),
    };
    run(samples, cfg, Some(coarse), observe)
}

/// Single-branch pretraining of any stream, without the coarse branch.
pub fn pretrain_fine_only(
    samples: &[SkeletonSequence],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    pretrain_fine_only_with(samples, cfg, &mut |_| {})
}

pub fn pretrain_fine_only_with(
    samples: &[SkeletonSequence],
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainReport), TrainError> {
    if cfg.stream == Stream::Person && samples.iter().any(|s| s.persons() < 2) {
        return Err(TrainError::SinglePerson);
    }
    run(samples, cfg, None, observe)
}
