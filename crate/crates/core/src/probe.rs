//! Downstream protocols: frozen-encoder linear probe, fine-tuning on full or
//! per-class subsampled labels, multi-stream fusion and accuracy reports.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{build_cloud, colorize, ColorError, ColorScheme};
use crate::losses::{cross_entropy_grad, softmax, LossError};
use crate::model::{
    stack_latents, Checkpoint, CheckpointError, Encoder, HeadConfig, Mlp, ModelError, ParamSet,
    TensorVisitor,
};
use crate::optim::{cosine_lr, Sgd};
use crate::seed::{self, stream};
use crate::skeleton::LabeledDataset;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("class {0} is absent from the training labels")]
    ClassAbsent(usize),
    #[error("empty test set")]
    EmptyTest,
    #[error("streams disagree: {0}")]
    Misaligned(String),
    #[error("checkpoint records no stream; cannot choose a coloring")]
    NoStream,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    /// Frozen encoder, head trained on every training label.
    UnsupervisedFrozen,
    /// Encoder and head trained on `percent` of each class.
    SemiSupervised(f64),
    /// Encoder and head trained on every training label.
    Supervised,
}

/// Coloring of the unmasked probe input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeInput {
    /// Colored with the fine scheme of the checkpoint's stream.
    #[default]
    StreamColor,
    /// Positions only, zero color.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Standardize frozen latent codes per dimension with training-set
    /// statistics before the head sees them.
    pub standardize: bool,
    pub input: ProbeInput,
}

impl EvalConfig {
    pub fn new(mode: EvalMode) -> Self {
        Self {
            mode,
            epochs: 200,
            batch_size: 32,
            lr_start: 1e-3,
            lr_end: 1e-5,
            seed: 0,
            standardize: true,
            input: ProbeInput::StreamColor,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if let EvalMode::SemiSupervised(p) = self.mode {
            if !(p > 0.0 && p <= 100.0) {
                return bad(format!("percent must be in (0, 100], got {p}"));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        Ok(())
    }
}

/// Top-1 accuracy, per-class accuracy and confusion counts
/// (`confusion[true][pred]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Percent per class; `NaN` for a class without test samples.
    pub per_class: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub truth: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl EvalReport {
    pub fn from_predictions(
        truth: &[usize],
        predictions: &[usize],
        classes: usize,
    ) -> Result<Self, EvalError> {
        if truth.is_empty() {
            return Err(EvalError::EmptyTest);
        }
        if truth.len() != predictions.len() {
            return Err(EvalError::Misaligned(format!(
                "{} labels, {} predictions",
                truth.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predictions) {
            if t >= classes || p >= classes {
                return Err(EvalError::Loss(LossError::Label {
                    target: t.max(p),
                    classes,
                }));
            }
            confusion[t][p] += 1;
        }
        let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    f64::NAN
                } else {
                    100.0 * row[c] as f64 / n as f64
                }
            })
            .collect();
        Ok(Self {
            accuracy: 100.0 * trace as f64 / truth.len() as f64,
            per_class,
            confusion,
            truth: truth.to_vec(),
            predictions: predictions.to_vec(),
        })
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    /// Per-sample rows `sample_id,true,pred,stream` (1-based labels), then a
    /// `#`-prefixed summary block.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        sample_ids: &[String],
        stream: &str,
    ) -> std::io::Result<()> {
        writeln!(out, "sample_id,true,pred,stream")?;
        for ((id, t), p) in sample_ids.iter().zip(&self.truth).zip(&self.predictions) {
            writeln!(out, "{id},{},{},{stream}", t + 1, p + 1)?;
        }
        writeln!(out, "# samples,{}", self.truth.len())?;
        writeln!(out, "# top1,{:.4}", self.accuracy)?;
        for (c, a) in self.per_class.iter().enumerate() {
            writeln!(out, "# class_{},{a:.4}", c + 1)?;
        }
        Ok(())
    }

    /// `C` rows of `C` comma-separated counts.
    pub fn write_confusion_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Index of the largest entry; the first on ties.
pub fn argmax(v: ndarray::ArrayView1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Predictions from the rows of a score matrix.
pub fn predictions(scores: ArrayView2<f64>) -> Vec<usize> {
    scores.rows().into_iter().map(argmax).collect()
}

/// Stratified labelled subset: `max(1, round(percent * n / 100))` samples of
/// every class, drawn without replacement. Sample order is preserved.
pub fn split_semi(
    dataset: &LabeledDataset,
    percent: f64,
    seed: u64,
) -> Result<LabeledDataset, EvalError> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(EvalError::Config(format!(
            "percent must be in (0, 100], got {percent}"
        )));
    }
    let labels = dataset.labels();
    let mut keep = Vec::new();
    for class in 0..dataset.class_count {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(EvalError::EmptyClass(class));
        }
        let n = members.len();
        let take = ((percent * n as f64 / 100.0).round() as usize).clamp(1, n);
        let mut rng = seed::rng(seed, &[stream::SPLIT, class as u64]);
        keep.extend(
            index::sample(&mut rng, n, take)
                .into_iter()
                .map(|i| members[i]),
        );
    }
    keep.sort_unstable();
    Ok(dataset.with_samples(
        keep.into_iter()
            .map(|i| dataset.samples[i].clone())
            .collect(),
    ))
}

/// Unmasked clouds colored with `scheme`, as encoder inputs.
pub fn colored_inputs(
    dataset: &LabeledDataset,
    scheme: &ColorScheme,
) -> Result<Vec<Array2<f64>>, EvalError> {
    dataset
        .samples
        .iter()
        .map(|s| Ok(colorize(&build_cloud(s), scheme)?.features()))
        .collect()
}

/// Unmasked raw clouds (zero color), as encoder inputs.
pub fn raw_inputs(dataset: &LabeledDataset) -> Vec<Array2<f64>> {
    dataset
        .samples
        .iter()
        .map(|s| build_cloud(s).features())
        .collect()
}

fn check_classes(train: &LabeledDataset, test: &LabeledDataset) -> Result<(), EvalError> {
    if train.class_count < 2 {
        return Err(EvalError::Loss(LossError::Classes(train.class_count)));
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    if test.class_count != train.class_count {
        return Err(EvalError::Misaligned(format!(
            "train has {} classes, test has {}",
            train.class_count, test.class_count
        )));
    }
    let counts = train.class_counts();
    match counts.iter().position(|&n| n == 0) {
        Some(c) => Err(EvalError::ClassAbsent(c)),
        None => Ok(()),
    }
}

/// Outcome of a probe or fine-tuning run.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Test logits, one row per test sample.
    pub test_logits: Array2<f64>,
    /// Mean training cross-entropy per epoch.
    pub train_loss: Vec<f64>,
    /// Training-set accuracy after the last epoch.
    pub train_accuracy: f64,
    pub encoder: Encoder,
    pub head: Mlp,
}

fn init_head(latent: usize, classes: usize, seed: u64) -> (HeadConfig, Mlp) {
    let cfg = HeadConfig::new(latent, classes);
    let mut head = Mlp::init(&cfg.dims(), &mut seed::rng(seed, &[stream::PROBE, 0]));
    head.round_to_f32();
    (cfg, head)
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &[stream::PROBE, 1, epoch as u64]));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Mean cross-entropy of `logits` rows and its gradient.
fn batch_cross_entropy(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), EvalError> {
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = cross_entropy_grad(logits.row(i), y)?;
        loss += l;
        grad.row_mut(i).assign(&(g / n));
    }
    Ok((loss / n, grad))
}

/// Trains the head on fixed latent codes with Nesterov SGD.
pub fn train_head(
    head: &mut Mlp,
    latents: ArrayView2<f64>,
    labels: &[usize],
    cfg: &EvalConfig,
) -> Result<Vec<f64>, EvalError> {
    let mut opt = Sgd::nesterov(head.param_count());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end);
        let mut total = 0.0;
        for idx in batches(labels.len(), cfg.batch_size, cfg.seed, epoch) {
            let x = latents.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = head.forward(x.view());
            let (loss, dlogits) = batch_cross_entropy(logits.view(), &y)?;
            let mut grad = head.zeros_like();
            head.backward(&cache, dlogits.view(), &mut grad);
            opt.step(head, &grad, lr);
            total += loss * idx.len() as f64;
        }
        trace.push(total / labels.len() as f64);
    }
    Ok(trace)
}

fn encode_all(encoder: &Encoder, inputs: &[Array2<f64>]) -> Result<Array2<f64>, EvalError> {
    let latents = inputs
        .par_iter()
        .map(|x| encoder.encode(x.view()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(stack_latents(&latents))
}

fn scheme_of(ckpt: &Checkpoint) -> Result<ColorScheme, EvalError> {
    Ok(ckpt.stream.ok_or(EvalError::NoStream)?.fine_scheme())
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    /// Statistics of the rows of `x`. Constant dimensions are only centered.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("at least one row");
        let std = x.std_axis(Axis(0), 0.0);
        let scale = std.mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            row -= &self.mean;
            row *= &self.scale;
        }
    }

    /// A head that maps unstandardized latents to the logits `head` gives
    /// on standardized ones.
    pub fn fold(&self, head: &Mlp) -> Mlp {
        let mut folded = head.clone();
        if let Some(first) = folded.layers.first_mut() {
            for (mut row, s) in first.weight.rows_mut().into_iter().zip(&self.scale) {
                row *= *s;
            }
            let shift = self.mean.dot(&first.weight);
            first.bias -= &shift;
        }
        folded
    }
}

/// Frozen-encoder protocol: only the classifier head is trained, on the
/// unmasked cloud colored with the checkpoint's stream (or left raw, see
/// [`ProbeInput`]).
pub fn linear_probe(
    ckpt: &Checkpoint,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<EvalOutcome, EvalError> {
    if cfg.mode != EvalMode::UnsupervisedFrozen {
        return Err(EvalError::Config(
            "linear probe runs in unsupervised_frozen mode".into(),
        ));
    }
    cfg.validate()?;
    check_classes(train, test)?;
    let encoder = ckpt.encoder()?;
    let inputs = |d: &LabeledDataset| match cfg.input {
        ProbeInput::StreamColor => colored_inputs(d, &scheme_of(ckpt)?),
        ProbeInput::Raw => Ok(raw_inputs(d)),
    };
    let mut train_z = encode_all(&encoder, &inputs(train)?)?;
    let mut test_z = encode_all(&encoder, &inputs(test)?)?;
    let scaler = cfg.standardize.then(|| Standardizer::fit(train_z.view()));
    if let Some(scaler) = &scaler {
        scaler.apply(&mut train_z);
        scaler.apply(&mut test_z);
    }
    let labels = train.labels();
    let (_, mut head) = init_head(encoder.cfg.latent_dim, train.class_count, cfg.seed);
    let train_loss = train_head(&mut head, train_z.view(), &labels, cfg)?;
    let train_pred = predictions(head.forward(train_z.view()).0.view());
    let train_accuracy =
        EvalReport::from_predictions(&labels, &train_pred, train.class_count)?.accuracy;
    let test_logits = head.forward(test_z.view()).0;
    let report = EvalReport::from_predictions(
        &test.labels(),
        &predictions(test_logits.view()),
        test.class_count,
    )?;
    let head = match &scaler {
        Some(scaler) => scaler.fold(&head),
        None => head,
    };
    Ok(EvalOutcome {
        report,
        test_logits,
        train_loss,
        train_accuracy,
        encoder,
        head,
    })
}

/// An encoder with a classifier head and the coloring its inputs use.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: Mlp,
    pub scheme: ColorScheme,
}

impl Classifier {
    pub fn logits(&self, dataset: &LabeledDataset) -> Result<Array2<f64>, EvalError> {
        let z = encode_all(&self.encoder, &colored_inputs(dataset, &self.scheme)?)?;
        Ok(self.head.forward(z.view()).0)
    }

    pub fn classes(&self) -> usize {
        self.head.layers.last().map_or(0, |l| l.fan_out())
    }
}

/// Accuracy report of `model` on `test`.
pub fn evaluate(model: &Classifier, test: &LabeledDataset) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    if model.classes() != test.class_count {
        return Err(EvalError::Misaligned(format!(
            "model predicts {} classes, test set has {}",
            model.classes(),
            test.class_count
        )));
    }
    let logits = model.logits(test)?;
    EvalReport::from_predictions(
        &test.labels(),
        &predictions(logits.view()),
        test.class_count,
    )
}

/// Joint training of encoder and head. `encoder` is the starting point,
/// either loaded from a checkpoint or freshly initialized. In semi-supervised
/// mode only the [`split_semi`] subset of `train` is used.
pub fn finetune(
    encoder: &Encoder,
    scheme: &ColorScheme,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<EvalOutcome, EvalError> {
    cfg.validate()?;
    let labeled = match cfg.mode {
        EvalMode::UnsupervisedFrozen => {
            return Err(EvalError::Config(
                "fine-tuning needs semi_supervised or supervised mode".into(),
            ))
        }
        EvalMode::SemiSupervised(p) => split_semi(train, p, cfg.seed)?,
        EvalMode::Supervised => train.clone(),
    };
    check_classes(&labeled, test)?;
    let inputs = colored_inputs(&labeled, scheme)?;
    let labels = labeled.labels();
    let (_, head) = init_head(encoder.cfg.latent_dim, labeled.class_count, cfg.seed);
    let mut model = Classifier {
        encoder: encoder.clone(),
        head,
        scheme: scheme.clone(),
    };
    let mut opt = Sgd::nesterov(model.encoder.param_count() + model.head.param_count());
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end);
        let mut total = 0.0;
        for idx in batches(labels.len(), cfg.batch_size, cfg.seed, epoch) {
            let fwd = idx
                .par_iter()
                .map(|&i| model.encoder.forward(inputs[i].view()))
                .collect::<Result<Vec<_>, _>>()?;
            let z = stack_latents(&fwd.iter().map(|(z, _)| z.clone()).collect::<Vec<_>>());
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = model.head.forward(z.view());
            let (loss, dlogits) = batch_cross_entropy(logits.view(), &y)?;
            let mut grad = Joint {
                encoder: model.encoder.zeros_like(),
                head: model.head.zeros_like(),
            };
            let dz = model.head.backward(&cache, dlogits.view(), &mut grad.head);
            let enc_grads: Vec<Encoder> = fwd
                .par_iter()
                .enumerate()
                .map(|(r, (_, c))| {
                    let mut g = model.encoder.zeros_like();
                    model.encoder.backward(c, dz.row(r), &mut g);
                    g
                })
                .collect();
            for g in &enc_grads {
                grad.encoder.add_scaled(g, 1.0);
            }
            let mut joint = Joint {
                encoder: model.encoder.clone(),
                head: model.head.clone(),
            };
            opt.step(&mut joint, &grad, lr);
            model.encoder = joint.encoder;
            model.head = joint.head;
            total += loss * idx.len() as f64;
        }
        train_loss.push(total / labels.len() as f64);
    }
    let train_pred = predictions(model.logits(&labeled)?.view());
    let train_accuracy =
        EvalReport::from_predictions(&labels, &train_pred, labeled.class_count)?.accuracy;
    let test_logits = model.logits(test)?;
    let report = EvalReport::from_predictions(
        &test.labels(),
        &predictions(test_logits.view()),
        test.class_count,
    )?;
    Ok(EvalOutcome {
        report,
        test_logits,
        train_loss,
        train_accuracy,
        encoder: model.encoder,
        head: model.head,
    })
}

struct Joint {
    encoder: Encoder,
    head: Mlp,
}

impl ParamSet for Joint {
    fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>) {
        self.encoder.visit(&format!("{prefix}encoder"), f);
        self.head.visit(&format!("{prefix}head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&format!("{prefix}encoder"), f);
        self.head.visit_mut(&format!("{prefix}head"), f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    /// Arithmetic mean of per-stream softmax probabilities.
    #[default]
    MeanSoftmax,
    /// Sum of raw logits.
    SumLogits,
}

/// Fused per-sample scores of several streams' test logits.
pub fn fuse_scores(logits: &[Array2<f64>], method: Fusion) -> Result<Array2<f64>, EvalError> {
    let first = logits
        .first()
        .ok_or_else(|| EvalError::Misaligned("no streams".into()))?;
    if let Some(bad) = logits.iter().find(|l| l.dim() != first.dim()) {
        return Err(EvalError::Misaligned(format!(
            "score shapes {:?} and {:?}",
            first.dim(),
            bad.dim()
        )));
    }
    let mut acc = Array2::<f64>::zeros(first.raw_dim());
    for l in logits {
        match method {
            Fusion::MeanSoftmax => {
                for (mut out, row) in acc.rows_mut().into_iter().zip(l.rows()) {
                    out += &softmax(row);
                }
            }
            Fusion::SumLogits => acc += l,
        }
    }
    if method == Fusion::MeanSoftmax {
        acc /= logits.len() as f64;
    }
    Ok(acc)
}

/// Report of the fused prediction `argmax` over [`fuse_scores`].
pub fn fuse_streams(
    logits: &[Array2<f64>],
    truth: &[usize],
    method: Fusion,
) -> Result<EvalReport, EvalError> {
    let scores = fuse_scores(logits, method)?;
    if scores.nrows() != truth.len() {
        return Err(EvalError::Misaligned(format!(
            "{} score rows, {} labels",
            scores.nrows(),
            truth.len()
        )));
    }
    EvalReport::from_predictions(truth, &predictions(scores.view()), scores.ncols())
}

/// Softmax of every row.
pub fn probabilities(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let p: Array1<f64> = softmax(row.view());
        row.assign(&p);
    }
    out
}
