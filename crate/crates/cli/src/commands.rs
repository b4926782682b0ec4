//! Subcommands and the process entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ndarray::Array2;
use skelcloud::cloud::{build_cloud, colorize, SkeletonCloud};
use skelcloud::losses::{chamfer_grad, cross_entropy_grad, grad_check, mse_align_grad};
use skelcloud::masking::{apply_mask, MaskSpec};
use skelcloud::model::{
    init_params, load_checkpoint, save_checkpoint, Checkpoint, HeadConfig, ModelConfig, ParamSet,
};
use skelcloud::probe::{
    evaluate, finetune, fuse_scores, linear_probe, predictions, Classifier, EvalReport, ProbeInput,
};
use skelcloud::seed::{self, stream};
use skelcloud::skeleton::{generate_synthetic, load_sequence, Motion, Split, SynthConfig};
use skelcloud::trainer::{
    pretrain_coarse_fine_with, pretrain_fine_only_with, pretrain_person_with, sample_loss,
    EpochRecord, Prepared, TrainConfig, Trainable,
};

use crate::config::{RunConfig, KEYS};
use crate::data;
use crate::ply::write_ply;

#[derive(Debug, Parser)]
#[command(
    name = "skelcloud",
    version,
    about = "Self-supervised skeleton cloud repainting"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Root seed; every subsystem derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run-config file with `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override `key=value`; repeatable, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Suppress progress and config logging.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic motion dataset.
    Synth(SynthArgs),
    /// Color one sequence's cloud and write it as PLY.
    Colorize(ColorizeArgs),
    /// Mask one sequence's cloud and write it as PLY.
    Mask(MaskArgs),
    /// Self-supervised pretraining; writes a checkpoint and metrics CSV.
    Pretrain(PretrainArgs),
    /// Frozen-encoder linear probe.
    Probe(ProbeArgs),
    /// Train encoder and classifier jointly (semi or fully supervised).
    Finetune(FinetuneArgs),
    /// Evaluate a classifier checkpoint on a test split.
    Eval(EvalArgs),
    /// Fuse per-stream logits into one prediction.
    Fuse(FuseArgs),
    /// Write a sequence's raw cloud as PLY.
    ExportPly(ExportArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated motions: circle, raise, wave, twist, lower, unwind.
    #[arg(long, default_value = "circle,unwind,raise,lower")]
    pub classes: String,
    /// Samples per class before the train/test split.
    #[arg(long, default_value_t = 25)]
    pub samples_per_class: usize,
    /// Frames per sequence.
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Joints per person (15, 20 or 25).
    #[arg(long, default_value_t = 15)]
    pub joints: usize,
    /// Persons per sequence (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub persons: usize,
    /// Gaussian jitter in meters.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    /// temporal, spatial, person, coarse-temporal or coarse-spatial.
    #[arg(long)]
    pub scheme: String,
    /// Input SKL sequence.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PLY file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Input SKL sequence.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PLY file.
    #[arg(long)]
    pub out: PathBuf,
    /// Color the cloud with this scheme before masking (default: raw).
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Dataset directory (overrides data.dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for artifacts and manifests.
    #[arg(long, default_value = "runs/pretrain")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Pretrained checkpoint holding the encoder.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory (overrides data.dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for artifacts and manifests.
    #[arg(long, default_value = "runs/probe")]
    pub out_dir: PathBuf,
    /// Feed raw (uncolored) clouds instead of the checkpoint's coloring.
    #[arg(long)]
    pub raw_input: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Starting encoder; a fresh initialization from train.* keys if absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory (overrides data.dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for artifacts and manifests.
    #[arg(long, default_value = "runs/finetune")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint holding an encoder and a classifier head.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory (overrides data.dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for artifacts and manifests.
    #[arg(long, default_value = "runs/eval")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Logit CSVs written by probe, finetune or eval.
    #[arg(long, num_args = 1.., required = true)]
    pub logits: Vec<PathBuf>,
    /// Output directory for artifacts and manifests.
    #[arg(long, default_value = "runs/fuse")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Input SKL sequence.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PLY file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Frames of the toy sequence; points = frames * 15.
    #[arg(long, default_value_t = 2)]
    pub frames: usize,
    /// Latent width of the toy model.
    #[arg(long, default_value_t = 16)]
    pub latent: usize,
    /// Coordinates probed per check.
    #[arg(long, default_value_t = 64)]
    pub probes: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

/// State shared by every command: resolved config, seed and the flags that
/// affect outputs, all recorded in manifests.
pub struct RunContext {
    pub cfg: RunConfig,
    pub seed: u64,
    pub command: &'static str,
    pub flags: Vec<(String, String)>,
    pub quiet: bool,
}

impl RunContext {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn flag(&mut self, name: &str, value: impl ToString) {
        self.flags.push((name.to_string(), value.to_string()));
    }

    /// SHA-256 over the resolved config and the output-affecting flags.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut text = self.cfg.resolved();
        for (k, v) in &self.flags {
            text.push_str(&format!("--{k} = {v}\n"));
        }
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Writes `<artifact>.manifest` next to `artifact`.
    pub fn manifest(&self, artifact: &Path) -> Result<()> {
        let mut text = format!(
            "command = {}\nseed = {}\nconfig_hash = {}\nversion = {}\nartifact = {}\n",
            self.command,
            self.seed,
            self.config_hash(),
            env!("CARGO_PKG_VERSION"),
            artifact
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        );
        for (k, v) in &self.flags {
            text.push_str(&format!("flag.{k} = {v}\n"));
        }
        let mut path = artifact.as_os_str().to_owned();
        path.push(".manifest");
        fs::write(PathBuf::from(path), text)
            .with_context(|| format!("writing manifest for {}", artifact.display()))
    }

    fn write(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest(path)
    }

    fn data_dir(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .unwrap_or_else(|| PathBuf::from(self.cfg.get("data.dir")))
    }

    /// Writes the resolved config into `dir`.
    fn record_config(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved");
        fs::write(&path, self.cfg.resolved())?;
        self.manifest(&path)
    }
}

fn load_cloud(ctx: &RunContext, path: &Path) -> Result<(SkeletonCloud, usize)> {
    let seq = load_sequence(path, None).with_context(|| format!("loading {}", path.display()))?;
    let seq = data::preprocess(&ctx.cfg, seq)?;
    Ok((build_cloud(&seq), seq.joints()))
}

fn ply_bytes(cloud: &SkeletonCloud) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_ply(cloud, &mut buf)?;
    Ok(buf)
}

fn cmd_synth(ctx: &mut RunContext, a: &SynthArgs) -> Result<()> {
    let classes: Vec<Motion> = a
        .classes
        .split(',')
        .map(|n| Motion::from_name(n.trim()).ok_or_else(|| anyhow!("unknown motion `{n}`")))
        .collect::<Result<_>>()?;
    for (k, v) in [
        ("classes", a.classes.clone()),
        ("samples-per-class", a.samples_per_class.to_string()),
        ("frames", a.frames.to_string()),
        ("joints", a.joints.to_string()),
        ("persons", a.persons.to_string()),
        ("noise", a.noise.to_string()),
    ] {
        ctx.flag(k, v);
    }
    let cfg = SynthConfig {
        samples_per_class: a.samples_per_class,
        frames: a.frames,
        joints: a.joints,
        persons: a.persons,
        noise_sigma: a.noise,
        seed: seed::derive(ctx.seed, &[stream::DATA]),
    };
    let d = generate_synthetic(&classes, &cfg)?;
    let names: Vec<&str> = classes.iter().map(|m| m.name()).collect();
    let files = data::write_dataset(&a.out_dir, &names, &d.train, &d.test)?;
    for f in &files {
        ctx.manifest(f)?;
    }
    ctx.log(format!(
        "wrote {} train and {} test sequences to {}",
        d.train.len(),
        d.test.len(),
        a.out_dir.display()
    ));
    Ok(())
}

fn cmd_colorize(ctx: &mut RunContext, a: &ColorizeArgs) -> Result<()> {
    ctx.flag("scheme", &a.scheme);
    ctx.flag("in", a.input.display());
    let (raw, joints) = load_cloud(ctx, &a.input)?;
    let scheme = data::scheme(&ctx.cfg, &a.scheme, joints)?;
    let cloud = colorize(&raw, &scheme)?;
    ctx.write(&a.out, &ply_bytes(&cloud)?)?;
    ctx.log(format!(
        "wrote {} points to {}",
        cloud.len(),
        a.out.display()
    ));
    Ok(())
}

fn cmd_mask(ctx: &mut RunContext, a: &MaskArgs) -> Result<()> {
    ctx.flag("in", a.input.display());
    if let Some(s) = &a.scheme {
        ctx.flag("scheme", s);
    }
    let (raw, joints) = load_cloud(ctx, &a.input)?;
    let cloud = match &a.scheme {
        Some(name) => colorize(&raw, &data::scheme(&ctx.cfg, name, joints)?)?,
        None => raw,
    };
    let spec = MaskSpec {
        strategy: data::mask_strategy(&ctx.cfg, joints)?,
        seed: data::mask_seed(&ctx.cfg, ctx.seed)?,
    };
    let masked = apply_mask(&cloud, &spec)?;
    ctx.write(&a.out, &ply_bytes(&masked.cloud)?)?;
    ctx.log(format!(
        "masked {} of {} points",
        masked.masked.len(),
        cloud.len()
    ));
    Ok(())
}

fn cmd_export(ctx: &mut RunContext, a: &ExportArgs) -> Result<()> {
    ctx.flag("in", a.input.display());
    let (raw, _) = load_cloud(ctx, &a.input)?;
    ctx.write(&a.out, &ply_bytes(&raw)?)?;
    Ok(())
}

fn progress(ctx: &RunContext, total: usize) -> impl FnMut(&EpochRecord) + '_ {
    move |r: &EpochRecord| {
        ctx.log(format!(
            "epoch {}/{} chamfer_fine={:.5} chamfer_coarse={:.5} align={:.5} lr={:.3e} ({:.1}s)",
            r.epoch, total, r.chamfer_fine, r.chamfer_coarse, r.align, r.lr, r.seconds
        ))
    }
}

fn cmd_pretrain(ctx: &mut RunContext, a: &PretrainArgs) -> Result<()> {
    let root = ctx.data_dir(&a.data);
    ctx.flag("data", root.display());
    ctx.record_config(&a.out_dir)?;
    let train = data::load_split(&ctx.cfg, &root, Split::Train)?;
    let joints = train.dataset.samples[0].joints();
    let tc = data::train_config(&ctx.cfg, ctx.seed, joints)?;
    let two_branch = data::coarse_fine(&ctx.cfg, tc.stream)?;
    let samples = &train.dataset.samples;
    let mut observe = progress(ctx, tc.epochs);
    let (ckpt, report) = match tc.stream {
        skelcloud::cloud::Stream::Person => pretrain_person_with(samples, &tc, &mut observe)?,
        _ if two_branch => pretrain_coarse_fine_with(samples, &tc, &mut observe)?,
        _ => pretrain_fine_only_with(samples, &tc, &mut observe)?,
    };
    let ckpt_path = a.out_dir.join("checkpoint.skpt");
    save_checkpoint(&ckpt, &ckpt_path)?;
    ctx.manifest(&ckpt_path)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    ctx.write(&a.out_dir.join("metrics.csv"), &csv)?;
    ctx.log(format!(
        "pretraining took {:.1}s; wrote {}",
        report.wall_seconds,
        ckpt_path.display()
    ));
    Ok(())
}

/// Test logits as CSV: `sample_id,true,c1..cC` with 1-based labels.
fn logits_csv(ids: &[String], truth: &[usize], logits: &Array2<f64>) -> Vec<u8> {
    let mut out = String::from("sample_id,true");
    for c in 1..=logits.ncols() {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for ((id, t), row) in ids.iter().zip(truth).zip(logits.rows()) {
        out.push_str(&format!("{id},{}", t + 1));
        for v in row {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn parse_logits(path: &Path) -> Result<(Vec<String>, Vec<usize>, Array2<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| anyhow!("{}: empty logits file", path.display()))?;
    let classes = header.split(',').count().saturating_sub(2);
    if !header.starts_with("sample_id,true,") || classes == 0 {
        bail!("{}: not a logits file", path.display());
    }
    let (mut ids, mut truth, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != classes + 2 {
            bail!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                n + 2,
                f.len(),
                classes + 2
            );
        }
        ids.push(f[0].to_string());
        let t: usize = f[1]
            .parse()
            .with_context(|| format!("{}: bad label on line {}", path.display(), n + 2))?;
        truth.push(
            t.checked_sub(1)
                .ok_or_else(|| anyhow!("{}: labels are 1-based", path.display()))?,
        );
        for v in &f[2..] {
            values.push(
                v.parse::<f64>()
                    .with_context(|| format!("{}: bad logit on line {}", path.display(), n + 2))?,
            );
        }
    }
    let rows = ids.len();
    Ok((ids, truth, Array2::from_shape_vec((rows, classes), values)?))
}

fn write_reports(
    ctx: &RunContext,
    dir: &Path,
    ids: &[String],
    report: &EvalReport,
    logits: &Array2<f64>,
    stream: &str,
) -> Result<()> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf, ids, stream)?;
    ctx.write(&dir.join("report.csv"), &buf)?;
    let mut buf = Vec::new();
    report.write_confusion_csv(&mut buf)?;
    ctx.write(&dir.join("confusion.csv"), &buf)?;
    ctx.write(
        &dir.join("logits.csv"),
        &logits_csv(ids, &report.truth, logits),
    )?;
    ctx.log(format!(
        "top-1 accuracy {:.2}% on {} samples",
        report.accuracy,
        report.truth.len()
    ));
    Ok(())
}

fn stream_name(ckpt: &Checkpoint) -> &'static str {
    ckpt.stream.map_or("raw", |s| s.name())
}

fn cmd_probe(ctx: &mut RunContext, a: &ProbeArgs) -> Result<()> {
    let root = ctx.data_dir(&a.data);
    ctx.flag("checkpoint", a.checkpoint.display());
    ctx.flag("data", root.display());
    ctx.flag("raw-input", a.raw_input);
    ctx.record_config(&a.out_dir)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let train = data::load_split(&ctx.cfg, &root, Split::Train)?;
    let test = data::load_split(&ctx.cfg, &root, Split::Test)?;
    let mut ec = data::eval_config(&ctx.cfg, ctx.seed)?;
    if ec.mode != skelcloud::probe::EvalMode::UnsupervisedFrozen {
        bail!("probe runs with eval.mode = frozen; use finetune for other modes");
    }
    if a.raw_input {
        ec.input = ProbeInput::Raw;
    }
    let out = linear_probe(&ckpt, &train.dataset, &test.dataset, &ec)?;
    let stream = if a.raw_input {
        "raw"
    } else {
        stream_name(&ckpt)
    };
    write_reports(
        ctx,
        &a.out_dir,
        &test.ids,
        &out.report,
        &out.test_logits,
        stream,
    )?;
    let head_cfg = HeadConfig::new(out.encoder.cfg.latent_dim, train.dataset.class_count);
    let classifier = Checkpoint::new(&out.encoder, ckpt.stream).with_head(&out.head, &head_cfg);
    let path = a.out_dir.join("classifier.skpt");
    save_checkpoint(&classifier, &path)?;
    ctx.manifest(&path)
}

fn cmd_finetune(ctx: &mut RunContext, a: &FinetuneArgs) -> Result<()> {
    let root = ctx.data_dir(&a.data);
    if let Some(c) = &a.checkpoint {
        ctx.flag("checkpoint", c.display());
    }
    ctx.flag("data", root.display());
    ctx.record_config(&a.out_dir)?;
    let train = data::load_split(&ctx.cfg, &root, Split::Train)?;
    let test = data::load_split(&ctx.cfg, &root, Split::Test)?;
    let ec = data::eval_config(&ctx.cfg, ctx.seed)?;
    let (encoder, stream) = match &a.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let s = ckpt
                .stream
                .ok_or_else(|| anyhow!("checkpoint records no stream"))?;
            (ckpt.encoder()?, s)
        }
        None => {
            let model = ModelConfig {
                encoder: data::encoder_config(&ctx.cfg)?,
                decoder: None,
                head: None,
            };
            let init = init_params(&model, seed::derive(ctx.seed, &[stream::INIT]))?;
            (init.encoder, data::stream(&ctx.cfg)?)
        }
    };
    let out = finetune(
        &encoder,
        &stream.fine_scheme(),
        &train.dataset,
        &test.dataset,
        &ec,
    )?;
    write_reports(
        ctx,
        &a.out_dir,
        &test.ids,
        &out.report,
        &out.test_logits,
        stream.name(),
    )?;
    let head_cfg = HeadConfig::new(out.encoder.cfg.latent_dim, train.dataset.class_count);
    let classifier = Checkpoint::new(&out.encoder, Some(stream)).with_head(&out.head, &head_cfg);
    let path = a.out_dir.join("classifier.skpt");
    save_checkpoint(&classifier, &path)?;
    ctx.manifest(&path)
}

fn cmd_eval(ctx: &mut RunContext, a: &EvalArgs) -> Result<()> {
    let root = ctx.data_dir(&a.data);
    ctx.flag("checkpoint", a.checkpoint.display());
    ctx.flag("data", root.display());
    ctx.record_config(&a.out_dir)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let stream = ckpt
        .stream
        .ok_or_else(|| anyhow!("checkpoint records no stream"))?;
    let model = Classifier {
        encoder: ckpt.encoder()?,
        head: ckpt.head()?,
        scheme: stream.fine_scheme(),
    };
    let test = data::load_split(&ctx.cfg, &root, Split::Test)?;
    let report = evaluate(&model, &test.dataset)?;
    let logits = model.logits(&test.dataset)?;
    write_reports(ctx, &a.out_dir, &test.ids, &report, &logits, stream.name())
}

fn cmd_fuse(ctx: &mut RunContext, a: &FuseArgs) -> Result<()> {
    for p in &a.logits {
        ctx.flag("logits", p.display());
    }
    let method = data::fusion(&ctx.cfg)?;
    let mut parsed = a
        .logits
        .iter()
        .map(|p| parse_logits(p))
        .collect::<Result<Vec<_>>>()?;
    let (ids, truth, _) = parsed[0].clone();
    for (p, (i, t, _)) in a.logits.iter().zip(&parsed) {
        if i != &ids || t != &truth {
            bail!(
                "{} is not aligned with {}",
                p.display(),
                a.logits[0].display()
            );
        }
    }
    let logits: Vec<Array2<f64>> = parsed.drain(..).map(|(_, _, l)| l).collect();
    let scores = fuse_scores(&logits, method)?;
    let report = EvalReport::from_predictions(&truth, &predictions(scores.view()), scores.ncols())?;
    write_reports(ctx, &a.out_dir, &ids, &report, &scores, "fused")
}

fn cmd_gradcheck(ctx: &mut RunContext, a: &GradcheckArgs) -> Result<()> {
    let frames = a.frames.max(1);
    let synth = SynthConfig {
        samples_per_class: 5,
        frames,
        seed: ctx.seed,
        ..Default::default()
    };
    let d = generate_synthetic(&[Motion::Circle, Motion::Raise], &synth)?;
    let mut tc = TrainConfig::new(
        skelcloud::cloud::Stream::Temporal,
        skelcloud::masking::MaskStrategy::Random { ratio: 0.25 },
    );
    tc.encoder = skelcloud::model::EncoderConfig {
        k_neighbors: 4,
        layer_widths: vec![8, 16],
        latent_dim: a.latent,
        normalize: false,
    };
    tc.decoder_widths = vec![16];
    tc.seed = ctx.seed;
    let coarse = skelcloud::cloud::ColorScheme::CoarseTemporal {
        segment_size: frames.div_ceil(2),
    };
    let prepared: Vec<Prepared> = skelcloud::trainer::prepare(
        &d.train.samples[..1],
        &skelcloud::cloud::ColorScheme::Temporal,
        Some(&coarse),
    )?;
    let sample = &prepared[0];
    let n = sample.raw.len();
    let mut model = Trainable::init(&tc, n, true)?;
    // Zero-initialized biases put masked (all-zero) edges exactly on ReLU
    // kinks; check at a generic point nearby instead.
    let mut jitter = seed::rng(ctx.seed, &[stream::INIT, 99]);
    let theta: Vec<f64> = model
        .flatten()
        .iter()
        .map(|v| v + 0.05 * rand_like(&mut jitter))
        .collect();
    model.assign_flat(&theta);
    let masked = skelcloud::trainer::epoch_mask(&sample.raw, &tc.mask, 0, 0)?;

    let mut rng = seed::rng(ctx.seed, &[stream::DATA, 99]);
    let mut random =
        |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rand_like(&mut rng));
    let target = random(n.min(32), 6);
    let pred = random(n.min(32), 6);
    let fine = random(1, a.latent);
    let coarse_z = random(1, a.latent);
    let logits = random(1, 5);

    let mut results = Vec::new();
    let pred_flat: Vec<f64> = pred.iter().copied().collect();
    let shape = pred.dim();
    results.push((
        "chamfer",
        grad_check(
            |p: &[f64]| {
                let q = Array2::from_shape_vec(shape, p.to_vec()).expect("shape");
                let (c, g) = chamfer_grad(target.view(), q.view()).expect("valid sets");
                (c.value, g.iter().copied().collect())
            },
            &pred_flat,
            a.probes,
            a.step,
            ctx.seed,
        )?,
        1e-4,
    ));
    let fine_flat: Vec<f64> = fine.iter().copied().collect();
    results.push((
        "mse_align",
        grad_check(
            |p: &[f64]| {
                let f = ndarray::Array1::from_vec(p.to_vec());
                let (v, g, _) = mse_align_grad(f.view(), coarse_z.row(0)).expect("equal widths");
                (v, g.to_vec())
            },
            &fine_flat,
            a.probes,
            a.step,
            ctx.seed,
        )?,
        1e-4,
    ));
    let logit_flat: Vec<f64> = logits.iter().copied().collect();
    results.push((
        "cross_entropy",
        grad_check(
            |p: &[f64]| {
                let l = ndarray::Array1::from_vec(p.to_vec());
                let (v, g) = cross_entropy_grad(l.view(), 2).expect("valid target");
                (v, g.to_vec())
            },
            &logit_flat,
            a.probes,
            a.step,
            ctx.seed,
        )?,
        1e-4,
    ));
    results.push((
        "full_graph",
        grad_check(
            |p: &[f64]| {
                let mut m = model.clone();
                m.assign_flat(p);
                let (t, g) = sample_loss(&m, sample, &masked, tc.input, 1.0).expect("toy graph");
                (t.total, g.flatten())
            },
            &model.flatten(),
            a.probes,
            a.step,
            ctx.seed,
        )?,
        1e-3,
    ));
    let mut failed = Vec::new();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (name, check, tol) in &results {
        let ok = check.max_rel_error < *tol;
        writeln!(
            out,
            "{name}\tmax_rel_error={:.3e}\ttolerance={tol:.0e}\t{}",
            check.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        )?;
        if !ok {
            failed.push(*name);
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}

fn rand_like(rng: &mut seed::Rng) -> f64 {
    use rand::Rng;
    rng.random_range(-1.0..1.0)
}

fn dispatch(ctx: &mut RunContext, command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(ctx, a),
        Command::Colorize(a) => cmd_colorize(ctx, a),
        Command::Mask(a) => cmd_mask(ctx, a),
        Command::Pretrain(a) => cmd_pretrain(ctx, a),
        Command::Probe(a) => cmd_probe(ctx, a),
        Command::Finetune(a) => cmd_finetune(ctx, a),
        Command::Eval(a) => cmd_eval(ctx, a),
        Command::Fuse(a) => cmd_fuse(ctx, a),
        Command::ExportPly(a) => cmd_export(ctx, a),
        Command::Gradcheck(a) => cmd_gradcheck(ctx, a),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Colorize(_) => "colorize",
        Command::Mask(_) => "mask",
        Command::Pretrain(_) => "pretrain",
        Command::Probe(_) => "probe",
        Command::Finetune(_) => "finetune",
        Command::Eval(_) => "eval",
        Command::Fuse(_) => "fuse",
        Command::ExportPly(_) => "export-ply",
        Command::Gradcheck(_) => "gradcheck",
    }
}

/// `error kind=<kind> message="<text>"` with quotes and backslashes escaped.
pub fn error_line(e: &anyhow::Error) -> String {
    let message = format!("{e:#}")
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', " ");
    format!("error kind={} message=\"{message}\"", error_kind(e))
}

/// Category of a failure for the one-line error report.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<crate::config::ConfigError>() {
            return "config";
        }
        if cause.is::<skelcloud::skeleton::SklError>()
            || cause.is::<skelcloud::skeleton::SynthError>()
        {
            return "data";
        }
        if cause.is::<skelcloud::model::CheckpointError>() {
            return "checkpoint";
        }
        if cause.is::<skelcloud::trainer::TrainError>() {
            return "train";
        }
        if cause.is::<skelcloud::probe::EvalError>() {
            return "eval";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "runtime"
}

fn build_context(cli: &Cli) -> Result<RunContext> {
    let mut cfg = match &cli.global.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for pair in &cli.global.overrides {
        cfg.set_pair(pair)?;
    }
    Ok(RunContext {
        cfg,
        seed: cli.global.seed,
        command: command_name(&cli.command),
        flags: Vec::new(),
        quiet: cli.global.quiet,
    })
}

/// Runs one invocation and returns the process exit code: 0 on success, 1
/// on runtime failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = Cli::command()
        .after_long_help(config_reference())
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let result = build_context(&cli).and_then(|mut ctx| {
        for line in ctx.cfg.resolved().lines() {
            ctx.log(format!("config: {line}"));
        }
        ctx.log(format!("config: seed = {}", ctx.seed));
        dispatch(&mut ctx, &cli.command)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// Key reference for `--help` output.
pub fn config_reference() -> String {
    let mut s = String::from("Config keys (key = default: description):\n");
    for (k, v, doc) in KEYS {
        s.push_str(&format!("  {k} = {v}: {doc}\n"));
    }
    s
}
