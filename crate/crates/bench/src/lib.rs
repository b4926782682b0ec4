//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use rand::Rng;
use skelcloud::cloud::{build_cloud, colorize, ColorScheme, Stream};
use skelcloud::masking::MaskStrategy;
use skelcloud::seed;
use skelcloud::skeleton::{generate_synthetic, Motion, SynthConfig};
use skelcloud::trainer::{prepare, Coarse, Prepared, TrainConfig};

/// `n` uniform random 6-channel points.
pub fn random_points(n: usize, salt: u64) -> Array2<f64> {
    let mut rng = seed::rng(salt, &[]);
    Array2::from_shape_simple_fn((n, 6), || rng.random_range(-1.0..1.0))
}

/// Temporally colored cloud of a synthetic sequence with `frames` frames of
/// 15 joints.
pub fn colored_cloud(frames: usize) -> Array2<f64> {
    let d = generate_synthetic(
        &[Motion::Circle, Motion::Raise],
        &SynthConfig {
            frames,
            samples_per_class: 5,
            ..Default::default()
        },
    )
    .expect("valid synthetic config");
    colorize(&build_cloud(&d.train.samples[0]), &ColorScheme::Temporal)
        .expect("raw cloud")
        .features()
}

/// Desk-scale coarse-fine pretraining setup on `count` synthetic samples.
pub fn pretraining_batch(count: usize) -> (TrainConfig, Vec<Prepared>) {
    let d = generate_synthetic(
        &[Motion::Circle, Motion::Raise, Motion::Lower, Motion::Unwind],
        &SynthConfig::default(),
    )
    .expect("valid synthetic config");
    let mut cfg = TrainConfig::new(Stream::Temporal, MaskStrategy::Segment { length: 8 });
    cfg.coarse = Some(Coarse::Segment(5));
    let prepared = prepare(
        &d.train.samples[..count],
        &ColorScheme::Temporal,
        Some(&ColorScheme::CoarseTemporal { segment_size: 5 }),
    )
    .expect("colorable samples");
    (cfg, prepared)
}
