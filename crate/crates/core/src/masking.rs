//! Mask sampling strategies for masked skeleton-cloud repainting.
//!
//! Masked points have all six channels set to zero; every other point is
//! copied unchanged.

use std::ops::RangeInclusive;

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use thiserror::Error;

use crate::cloud::{CloudKind, CloudPoint, SkeletonCloud};
use crate::seed::Rng;
use crate::skeleton::BodyPartition;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask ratio {0} must lie strictly between 0 and 1")]
    Ratio(f64),
    #[error("{what} count {count} must be in 1..={max}")]
    Count {
        what: &'static str,
        count: usize,
        max: usize,
    },
    #[error("partition covers {partition} joints but the cloud has {cloud}")]
    PartitionMismatch { partition: usize, cloud: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskStrategy {
    /// `round(ratio * N)` points chosen uniformly.
    Random { ratio: f64 },
    /// Every point of `frames` distinct frames.
    FrameOnly { frames: usize },
    /// Every point of a window of `length` consecutive frames around a
    /// uniformly chosen center, clipped at the sequence ends.
    Segment { length: usize },
    /// Every point of `joints` distinct joints, across frames and persons.
    JointOnly { joints: usize },
    /// Every point of `parts` distinct body parts.
    BodyPart {
        parts: usize,
        partition: BodyPartition,
    },
}

impl MaskStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Random { .. } => "random",
            Self::FrameOnly { .. } => "frame",
            Self::Segment { .. } => "segment",
            Self::JointOnly { .. } => "joint",
            Self::BodyPart { .. } => "body_part",
        }
    }

    /// Checks the strategy parameters against a cloud of shape `(T, J, M)`.
    pub fn validate(&self, frames: usize, joints: usize) -> Result<(), MaskError> {
        let count = |what, count: usize, max: usize| {
            if count == 0 || count > max {
                Err(MaskError::Count { what, count, max })
            } else {
                Ok(())
            }
        };
        match self {
            Self::Random { ratio } => {
                if *ratio > 0.0 && *ratio < 1.0 {
                    Ok(())
                } else {
                    Err(MaskError::Ratio(*ratio))
                }
            }
            Self::FrameOnly { frames: n } => count("frame", *n, frames),
            Self::Segment { length } => count("segment length", *length, frames),
            Self::JointOnly { joints: n } => count("joint", *n, joints),
            Self::BodyPart { parts, partition } => {
                if partition.joints() != joints {
                    return Err(MaskError::PartitionMismatch {
                        partition: partition.joints(),
                        cloud: joints,
                    });
                }
                count("part", *parts, partition.part_count())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskResult {
    pub cloud: SkeletonCloud,
    /// Ascending indices of the zeroed points.
    pub masked: Vec<usize>,
}

/// Frames covered by a segment of `length` centered at `center` (0-based),
/// clipped to the sequence.
pub fn segment_window(center: usize, length: usize, frames: usize) -> RangeInclusive<usize> {
    let lo = center.saturating_sub((length - 1) / 2);
    let hi = (center + (length - 1).div_ceil(2)).min(frames - 1);
    lo..=hi
}

fn chosen(rng: &mut Rng, universe: usize, count: usize) -> Vec<bool> {
    let mut hit = vec![false; universe];
    for i in index::sample(rng, universe, count) {
        hit[i] = true;
    }
    hit
}

/// Indices selected by `spec` for `cloud`, ascending.
pub fn mask_indices(cloud: &SkeletonCloud, spec: &MaskSpec) -> Result<Vec<usize>, MaskError> {
    let (frames, joints, _) = cloud.shape();
    spec.strategy.validate(frames, joints)?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let points = cloud.points();
    let select = |pred: &dyn Fn(&CloudPoint) -> bool| -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| pred(p))
            .map(|(i, _)| i)
            .collect()
    };
    Ok(match &spec.strategy {
        MaskStrategy::Random { ratio } => {
            let count = (ratio * points.len() as f64).round_ties_even() as usize;
            let mut idx = index::sample(&mut rng, points.len(), count).into_vec();
            idx.sort_unstable();
            idx
        }
        MaskStrategy::FrameOnly { frames: n } => {
            let hit = chosen(&mut rng, frames, *n);
            select(&|p| hit[p.prov.frame])
        }
        MaskStrategy::Segment { length } => {
            let window = segment_window(rng.random_range(0..frames), *length, frames);
            select(&|p| window.contains(&p.prov.frame))
        }
        MaskStrategy::JointOnly { joints: n } => {
            let hit = chosen(&mut rng, joints, *n);
            select(&|p| hit[p.prov.joint])
        }
        MaskStrategy::BodyPart { parts, partition } => {
            let hit = chosen(&mut rng, partition.part_count(), *parts);
            select(&|p| hit[partition.part_of(p.prov.joint)])
        }
    })
}

/// Zeroes the points at `masked` (ascending) in a copy of `cloud`.
pub fn zero_points(cloud: &SkeletonCloud, masked: &[usize]) -> SkeletonCloud {
    let mut points = cloud.points().to_vec();
    for &i in masked {
        points[i].position = [0.0; 3];
        points[i].color = [0.0; 3];
    }
    SkeletonCloud::from_parts(points, CloudKind::Masked, cloud.shape())
}

pub fn apply_mask(cloud: &SkeletonCloud, spec: &MaskSpec) -> Result<MaskResult, MaskError> {
    let masked = mask_indices(cloud, spec)?;
    Ok(MaskResult {
        cloud: zero_points(cloud, &masked),
        masked,
    })
}
