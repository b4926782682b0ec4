//! Labelled synthetic motion datasets for desk-scale experiments.
//!
//! Each class is a deterministic motion applied to a rest pose, varied per
//! sample by amplitude, phase, speed and a global offset, plus optional
//! Gaussian jitter on every coordinate.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::{LabeledDataset, SkeletonSequence, Split};
use crate::seed::{self, stream, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("need at least 5 samples per class to split, got {0}")]
    TooFewSamples(usize),
    #[error("frames and joints must be positive and persons 1 or 2")]
    Shape,
    #[error("noise sigma must be finite and non-negative")]
    Noise,
}

/// A class-defining motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    /// The right hand traces a circle in the frontal plane.
    Circle,
    /// The right arm rises linearly.
    Raise,
    /// The right hand oscillates sideways.
    Wave,
    /// The whole body turns about the vertical axis.
    Twist,
    /// [`Motion::Raise`] played backwards: the arm starts high and drops.
    Lower,
    /// [`Motion::Circle`] traced in the opposite direction.
    Unwind,
}

impl Motion {
    pub const ALL: [Motion; 6] = [
        Motion::Circle,
        Motion::Raise,
        Motion::Wave,
        Motion::Twist,
        Motion::Lower,
        Motion::Unwind,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motion::Circle => "circle",
            Motion::Raise => "raise",
            Motion::Wave => "wave",
            Motion::Twist => "twist",
            Motion::Lower => "lower",
            Motion::Unwind => "unwind",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Per-sample randomization of a motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation {
    pub amplitude: f64,
    pub phase: f64,
    pub speed: f64,
    pub offset: [f64; 3],
}

impl Variation {
    pub fn sample(rng: &mut Rng) -> Self {
        Self {
            amplitude: rng.random_range(0.2..0.4),
            phase: rng.random_range(0.0..TAU),
            speed: rng.random_range(0.8..1.2),
            offset: [
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ],
        }
    }
}

/// Joint roles used by the motions (0-based).
struct Rig {
    hand: usize,
    elbow: Option<usize>,
    torso: usize,
}

fn rig(joints: usize) -> Rig {
    match joints {
        25 => Rig {
            hand: 11,
            elbow: Some(9),
            torso: 1,
        },
        20 => Rig {
            hand: 11,
            elbow: Some(9),
            torso: 1,
        },
        15 => Rig {
            hand: 8,
            elbow: Some(7),
            torso: 2,
        },
        1 => Rig {
            hand: 0,
            elbow: None,
            torso: 0,
        },
        j => Rig {
            hand: j - 1,
            elbow: Some(j - 2),
            torso: 0,
        },
    }
}

/// Rest pose in meters (y up, z away from the camera) for the built-in
/// layouts; other joint counts get a vertical chain.
pub fn rest_pose(joints: usize) -> Vec<[f64; 3]> {
    const Z: f64 = 3.0;
    match joints {
        15 => vec![
            [0.0, 0.65, Z],
            [0.0, 0.45, Z],
            [0.0, 0.15, Z],
            [-0.2, 0.42, Z],
            [-0.25, 0.15, Z],
            [-0.28, -0.1, Z],
            [0.2, 0.42, Z],
            [0.25, 0.15, Z],
            [0.28, -0.1, Z],
            [-0.1, -0.15, Z],
            [-0.11, -0.55, Z],
            [-0.12, -0.95, Z],
            [0.1, -0.15, Z],
            [0.11, -0.55, Z],
            [0.12, -0.95, Z],
        ],
        20 | 25 => {
            let mut p = vec![
                [0.0, -0.1, Z],
                [0.0, 0.15, Z],
                [0.0, 0.45, Z],
                [0.0, 0.65, Z],
                [-0.2, 0.4, Z],
                [-0.25, 0.15, Z],
                [-0.28, -0.08, Z],
                [-0.29, -0.15, Z],
                [0.2, 0.4, Z],
                [0.25, 0.15, Z],
                [0.28, -0.08, Z],
                [0.29, -0.15, Z],
                [-0.1, -0.15, Z],
                [-0.11, -0.55, Z],
                [-0.12, -0.92, Z],
                [-0.12, -0.97, Z - 0.1],
                [0.1, -0.15, Z],
                [0.11, -0.55, Z],
                [0.12, -0.92, Z],
                [0.12, -0.97, Z - 0.1],
            ];
            if joints == 25 {
                p.extend_from_slice(&[
                    [0.0, 0.38, Z],
                    [-0.3, -0.22, Z],
                    [-0.26, -0.12, Z - 0.03],
                    [0.3, -0.22, Z],
                    [0.26, -0.12, Z - 0.03],
                ]);
            }
            p
        }
        j => (0..j)
            .map(|i| [0.0, 0.8 - 1.6 * i as f64 / j.max(2) as f64, Z])
            .collect(),
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Noise-free pose of one person at normalized time `u` in `[0, 1]`.
fn pose(motion: Motion, v: &Variation, rest: &[[f64; 3]], rig: &Rig, u: f64) -> Vec<[f64; 3]> {
    let mut out: Vec<[f64; 3]> = rest.iter().map(|&p| add(p, v.offset)).collect();
    let angle = v.phase + TAU * v.speed * u;
    let mut drive = |delta: [f64; 3]| {
        out[rig.hand] = add(out[rig.hand], delta);
        if let Some(e) = rig.elbow {
            out[e] = add(out[e], [0.5 * delta[0], 0.5 * delta[1], 0.5 * delta[2]]);
        }
    };
    match motion {
        Motion::Circle => drive([v.amplitude * angle.cos(), v.amplitude * angle.sin(), 0.0]),
        Motion::Unwind => {
            let back = v.phase - TAU * v.speed * u;
            drive([v.amplitude * back.cos(), v.amplitude * back.sin(), 0.0])
        }
        Motion::Raise => drive([0.0, 2.0 * v.amplitude * v.speed * u, -0.5 * v.amplitude * u]),
        Motion::Lower => {
            let w = 1.0 - u;
            drive([0.0, 2.0 * v.amplitude * v.speed * w, -0.5 * v.amplitude * w])
        }
        Motion::Wave => drive([v.amplitude * (2.0 * angle).sin(), 0.5 * v.amplitude, 0.0]),
        Motion::Twist => {
            let theta = 0.5 * PI * v.amplitude * v.speed * u / 0.3;
            let pivot = out[rig.torso];
            let (s, c) = theta.sin_cos();
            for p in out.iter_mut() {
                let dx = p[0] - pivot[0];
                let dz = p[2] - pivot[2];
                p[0] = pivot[0] + c * dx + s * dz;
                p[2] = pivot[2] - s * dx + c * dz;
            }
        }
    }
    out
}

/// Generates one sequence. The second person (if any) stands one meter to
/// the right and performs the same motion half a cycle out of phase.
pub fn synthesize_sequence(
    motion: Motion,
    variation: &Variation,
    frames: usize,
    joints: usize,
    persons: usize,
    noise_sigma: f64,
    rng: &mut Rng,
) -> SkeletonSequence {
    let rest = rest_pose(joints);
    let rig = rig(joints);
    let partner = Variation {
        phase: variation.phase + PI,
        offset: add(variation.offset, [1.0, 0.0, 0.0]),
        ..*variation
    };
    let noise = Normal::new(0.0, noise_sigma).expect("validated sigma");
    let mut coords = Vec::with_capacity(frames * persons * joints);
    for t in 0..frames {
        let u = if frames > 1 {
            t as f64 / (frames - 1) as f64
        } else {
            0.0
        };
        for m in 0..persons {
            let v = if m == 0 { variation } else { &partner };
            for p in pose(motion, v, &rest, &rig, u) {
                coords.push(if noise_sigma > 0.0 {
                    [
                        p[0] + noise.sample(rng),
                        p[1] + noise.sample(rng),
                        p[2] + noise.sample(rng),
                    ]
                } else {
                    p
                });
            }
        }
    }
    SkeletonSequence::new(frames, persons, joints, coords, None)
        .expect("generated coordinates are finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub samples_per_class: usize,
    pub frames: usize,
    pub joints: usize,
    pub persons: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 25,
            frames: 20,
            joints: 15,
            persons: 1,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

/// Stratified 80/20 train/test split of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Generates `classes.len() * samples_per_class` labelled sequences; class
/// `c` is labelled `c`. A fifth of every class goes to the test split.
pub fn generate_synthetic(
    classes: &[Motion],
    cfg: &SynthConfig,
) -> Result<SyntheticDataset, SynthError> {
    if classes.len() < 2 {
        return Err(SynthError::TooFewClasses(classes.len()));
    }
    if cfg.samples_per_class < 5 {
        return Err(SynthError::TooFewSamples(cfg.samples_per_class));
    }
    if cfg.frames == 0 || cfg.joints == 0 || !(1..=2).contains(&cfg.persons) {
        return Err(SynthError::Shape);
    }
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return Err(SynthError::Noise);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, &motion) in classes.iter().enumerate() {
        let mut samples: Vec<SkeletonSequence> = (0..cfg.samples_per_class)
            .map(|i| {
                let mut rng = seed::rng(cfg.seed, &[stream::DATA, class as u64, i as u64]);
                let v = Variation::sample(&mut rng);
                synthesize_sequence(
                    motion,
                    &v,
                    cfg.frames,
                    cfg.joints,
                    cfg.persons,
                    cfg.noise_sigma,
                    &mut rng,
                )
                .with_label(Some(class))
            })
            .collect();
        samples.shuffle(&mut seed::rng(cfg.seed, &[stream::SPLIT, class as u64]));
        let n_test = cfg.samples_per_class / 5;
        train.extend(samples.drain(n_test..));
        test.extend(samples);
    }
    let class_count = classes.len();
    Ok(SyntheticDataset {
        train: LabeledDataset {
            samples: train,
            class_count,
            split: Split::Train,
        },
        test: LabeledDataset {
            samples: test,
            class_count,
            split: Split::Test,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg() -> SynthConfig {
        SynthConfig {
            samples_per_class: 25,
            frames: 20,
            joints: 15,
            persons: 1,
            noise_sigma: 0.01,
            seed: 11,
        }
    }

    #[test]
    fn split_sizes() {
        let d = generate_synthetic(&Motion::ALL[..4], &cfg()).unwrap();
        assert_eq!(d.train.len() + d.test.len(), 100);
        assert_eq!(d.train.len(), 80);
        assert_eq!(d.test.len(), 20);
        assert_eq!(d.train.class_counts(), vec![20; 4]);
        assert_eq!(d.test.class_counts(), vec![5; 4]);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_synthetic(&Motion::ALL[..4], &cfg()).unwrap();
        let b = generate_synthetic(&Motion::ALL[..4], &cfg()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&Motion::ALL[..4], &SynthConfig { seed: 12, ..cfg() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_small_inputs() {
        assert_eq!(
            generate_synthetic(&[Motion::Circle], &cfg()),
            Err(SynthError::TooFewClasses(1))
        );
        let small = SynthConfig {
            samples_per_class: 4,
            ..cfg()
        };
        assert_eq!(
            generate_synthetic(&Motion::ALL[..4], &small),
            Err(SynthError::TooFewSamples(4))
        );
    }

    #[test]
    fn reversed_motions_replay_backwards() {
        let mut rng = Rng::seed_from_u64(4);
        let v = Variation {
            speed: 1.0,
            ..Variation::sample(&mut rng)
        };
        for (fwd, back) in [
            (Motion::Raise, Motion::Lower),
            (Motion::Circle, Motion::Unwind),
        ] {
            let a = synthesize_sequence(fwd, &v, 21, 15, 1, 0.0, &mut rng);
            let b = synthesize_sequence(back, &v, 21, 15, 1, 0.0, &mut rng);
            for t in 0..21 {
                for j in 0..15 {
                    let (p, q) = (a.joint(t, 0, j), b.joint(20 - t, 0, j));
                    assert!(
                        p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-12),
                        "{fwd:?} t={t} j={j}"
                    );
                }
            }
        }
        assert_eq!(Motion::from_name("unwind"), Some(Motion::Unwind));
    }

    #[test]
    fn circle_hand_stays_on_its_circle() {
        for joints in [15, 20, 25] {
            let mut rng = Rng::seed_from_u64(3);
            let v = Variation::sample(&mut rng);
            let seq = synthesize_sequence(Motion::Circle, &v, 40, joints, 2, 0.0, &mut rng);
            let hand = rig(joints).hand;
            let center0 = add(rest_pose(joints)[hand], v.offset);
            let center1 = add(center0, [1.0, 0.0, 0.0]);
            for t in 0..40 {
                for (m, c) in [(0, center0), (1, center1)] {
                    let p = seq.joint(t, m, hand);
                    let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                    assert!((r - v.amplitude).abs() < 1e-9);
                    assert!((p[2] - c[2]).abs() < 1e-9);
                }
            }
        }
    }
}
