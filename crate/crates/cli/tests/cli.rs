use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skelcloud::cloud::{build_cloud, colorize, ColorScheme};
use skelcloud::skeleton::load_sequence;
use skelcloud_cli::ply::read_ply;
use tempfile::TempDir;

const SUBCOMMANDS: [&str; 10] = [
    "synth",
    "colorize",
    "mask",
    "pretrain",
    "probe",
    "finetune",
    "eval",
    "fuse",
    "export-ply",
    "gradcheck",
];

fn skelcloud(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skelcloud"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = skelcloud(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn dataset(dir: &Path, persons: &str) -> PathBuf {
    ok(
        dir,
        &[
            "synth",
            "--out-dir",
            "ds",
            "--samples-per-class",
            "5",
            "--frames",
            "6",
            "--persons",
            persons,
            "-q",
        ],
    );
    dir.join("ds")
}

const TINY_RUN: &str = "\
# tiny pretraining run
data.dir = ds
train.epochs = 3
train.batch_size = 4
train.k = 4
train.widths = 8,16
train.latent = 16
train.decoder_widths = 16
mask.strategy = segment
mask.param = 2
color.segment_size = 3
";

#[test]
fn colorize_writes_one_vertex_per_joint_sample() {
    let tmp = TempDir::new().unwrap();
    let ds = dataset(tmp.path(), "2");
    let seq = load_sequence(&ds.join("train/0000.skl"), None).unwrap();
    ok(
        tmp.path(),
        &[
            "colorize",
            "--scheme",
            "temporal",
            "--in",
            "ds/train/0000.skl",
            "--out",
            "a.ply",
            "-q",
        ],
    );
    let text = fs::read_to_string(tmp.path().join("a.ply")).unwrap();
    let n = seq.frames() * seq.joints() * seq.persons();
    assert_eq!(seq.persons(), 2);
    assert!(text.contains(&format!("element vertex {n}\n")));
    assert_eq!(
        text.lines().filter(|l| l.starts_with("property ")).count(),
        6
    );
    let body = text.split("end_header\n").nth(1).unwrap();
    assert_eq!(body.lines().count(), n);
    assert!(tmp.path().join("a.ply.manifest").exists());
}

#[test]
fn ply_round_trip_within_quantization() {
    let tmp = TempDir::new().unwrap();
    dataset(tmp.path(), "1");
    ok(
        tmp.path(),
        &[
            "colorize",
            "--scheme",
            "spatial",
            "--in",
            "ds/test/0001.skl",
            "--out",
            "s.ply",
            "-q",
        ],
    );
    let seq = load_sequence(&tmp.path().join("ds/test/0001.skl"), None).unwrap();
    let cloud = colorize(&build_cloud(&seq), &ColorScheme::Spatial).unwrap();
    let vertices = read_ply(BufReader::new(
        fs::File::open(tmp.path().join("s.ply")).unwrap(),
    ))
    .unwrap();
    assert_eq!(vertices.len(), cloud.len());
    for (v, p) in vertices.iter().zip(cloud.points()) {
        assert_eq!(v.position, p.position.map(|c| c as f32));
        for (q, c) in v.color.iter().zip(p.color) {
            assert!((f64::from(*q) / 255.0 - c).abs() <= 1.0 / 255.0);
        }
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = skelcloud(tmp.path(), &["colorize", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    let out = skelcloud(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one_with_a_parsable_line() {
    let tmp = TempDir::new().unwrap();
    let out = skelcloud(
        tmp.path(),
        &[
            "colorize",
            "--scheme",
            "temporal",
            "--in",
            "missing.skl",
            "--out",
            "x.ply",
            "-q",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=data message=\""), "{err}");

    let out = skelcloud(
        tmp.path(),
        &["gradcheck", "--set", "train.nonsense=1", "-q"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).starts_with("error kind=config "),
        "{}",
        stderr(&out)
    );
}

#[test]
fn help_documents_every_flag() {
    let tmp = TempDir::new().unwrap();
    let top = skelcloud(tmp.path(), &["--help"]);
    assert_eq!(top.status.code(), Some(0));
    let top = String::from_utf8_lossy(&top.stdout);
    for cmd in SUBCOMMANDS {
        assert!(top.contains(cmd), "{cmd} missing from top-level help");
        let out = skelcloud(tmp.path(), &[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in ["--seed", "--threads", "--config", "--set", "--help"] {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
    let colorize = String::from_utf8_lossy(&skelcloud(tmp.path(), &["colorize", "--help"]).stdout)
        .into_owned();
    for flag in ["--scheme", "--in", "--out"] {
        assert!(colorize.contains(flag));
    }
}

fn metrics_without_timing(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn pretrain_probe_eval_fuse_pipeline() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    dataset(dir, "1");
    fs::write(dir.join("run.cfg"), TINY_RUN).unwrap();
    let out = ok(
        dir,
        &[
            "pretrain",
            "--config",
            "run.cfg",
            "--out-dir",
            "pre",
            "--seed",
            "4",
        ],
    );
    assert!(stderr(&out).contains("config: train.epochs = 3"));
    assert!(dir.join("pre/checkpoint.skpt").exists());
    let metrics = fs::read_to_string(dir.join("pre/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
    for artifact in ["checkpoint.skpt", "metrics.csv", "config.resolved"] {
        let manifest = fs::read_to_string(dir.join(format!("pre/{artifact}.manifest"))).unwrap();
        assert!(
            manifest.contains("seed = 4\n") && manifest.contains("config_hash = "),
            "{manifest}"
        );
    }

    // Same manifest inputs reproduce the outputs.
    ok(
        dir,
        &[
            "pretrain",
            "--config",
            "run.cfg",
            "--out-dir",
            "again",
            "--seed",
            "4",
            "-q",
        ],
    );
    assert_eq!(
        fs::read(dir.join("pre/checkpoint.skpt")).unwrap(),
        fs::read(dir.join("again/checkpoint.skpt")).unwrap()
    );
    assert_eq!(
        metrics_without_timing(&dir.join("pre/metrics.csv")),
        metrics_without_timing(&dir.join("again/metrics.csv"))
    );
    let hash = |p: &str| {
        fs::read_to_string(dir.join(p))
            .unwrap()
            .lines()
            .find(|l| l.starts_with("config_hash"))
            .unwrap()
            .to_string()
    };
    assert_eq!(
        hash("pre/checkpoint.skpt.manifest"),
        hash("again/checkpoint.skpt.manifest")
    );

    ok(
        dir,
        &[
            "probe",
            "--config",
            "run.cfg",
            "--set",
            "eval.epochs=10",
            "--checkpoint",
            "pre/checkpoint.skpt",
            "--out-dir",
            "probe",
            "-q",
        ],
    );
    ok(
        dir,
        &[
            "eval",
            "--config",
            "run.cfg",
            "--checkpoint",
            "probe/classifier.skpt",
            "--out-dir",
            "eval",
            "-q",
        ],
    );
    let report = |p: &str| fs::read_to_string(dir.join(p)).unwrap();
    assert_eq!(report("probe/report.csv"), report("eval/report.csv"));
    assert!(report("probe/report.csv").contains("# top1,"));

    ok(
        dir,
        &[
            "finetune",
            "--config",
            "run.cfg",
            "--set",
            "eval.mode=semi",
            "--set",
            "eval.percent=50",
            "--set",
            "eval.epochs=2",
            "--out-dir",
            "ft",
            "-q",
        ],
    );
    ok(
        dir,
        &[
            "fuse",
            "--logits",
            "probe/logits.csv",
            "--logits",
            "probe/logits.csv",
            "--out-dir",
            "fused",
            "-q",
        ],
    );
    let preds = |p: &str| {
        report(p)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect::<Vec<_>>()[1..]
            .to_vec()
    };
    let fused: Vec<String> = preds("fused/report.csv")
        .iter()
        .map(|l| l.replace(",fused", ""))
        .collect();
    let single: Vec<String> = preds("probe/report.csv")
        .iter()
        .map(|l| l.replace(",temporal", ""))
        .collect();
    assert_eq!(fused, single);
    ok(
        dir,
        &[
            "fuse",
            "--logits",
            "probe/logits.csv",
            "ft/logits.csv",
            "--out-dir",
            "fused2",
            "-q",
        ],
    );
}

#[test]
fn mask_and_export_write_clouds() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    dataset(dir, "1");
    ok(
        dir,
        &[
            "mask",
            "--set",
            "mask.strategy=frame",
            "--set",
            "mask.param=2",
            "--in",
            "ds/train/0002.skl",
            "--out",
            "m.ply",
            "-q",
        ],
    );
    let zeros = fs::read_to_string(dir.join("m.ply"))
        .unwrap()
        .lines()
        .filter(|l| *l == "0 0 0 0 0 0")
        .count();
    assert_eq!(zeros, 2 * 15);
    ok(
        dir,
        &[
            "export-ply",
            "--in",
            "ds/train/0002.skl",
            "--out",
            "raw.ply",
            "-q",
        ],
    );
    let raw = fs::read_to_string(dir.join("raw.ply")).unwrap();
    assert!(raw.contains("comment kind Raw"));
    assert!(raw
        .split("end_header\n")
        .nth(1)
        .unwrap()
        .lines()
        .all(|l| l.ends_with(" 0 0 0")));
}

#[test]
fn gradcheck_passes_at_toy_size() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "-q"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["chamfer", "mse_align", "cross_entropy", "full_graph"] {
        assert!(
            text.lines()
                .any(|l| l.starts_with(name) && l.ends_with("ok")),
            "{text}"
        );
    }
}
