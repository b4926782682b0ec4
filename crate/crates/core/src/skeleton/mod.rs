//! Skeleton sequences: validation, temporal resampling, body partitions and
//! synthetic labelled motion datasets.
//!
//! All frame, person and joint indices in the Rust API are 0-based. The SKL
//! text format and reports use 1-based indices at the file boundary.

mod layout;
mod skl;
mod synth;

pub use layout::{
    body_partition, parse_layout, BodyPartition, JointLayout, PartitionError, PartitionScale,
};
pub use skl::{load_sequence, parse_sequence, write_sequence, SklError};
pub use synth::{
    generate_synthetic, rest_pose, synthesize_sequence, Motion, SynthConfig, SynthError,
    SyntheticDataset, Variation,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("sequence must have at least one frame and one joint (got T={frames}, J={joints})")]
    Empty { frames: usize, joints: usize },
    #[error("person count must be 1 or 2, got {0}")]
    Persons(usize),
    #[error("expected {expected} coordinates, got {found}")]
    CoordCount { expected: usize, found: usize },
    #[error("non-finite coordinate at frame {frame}, person {person}, joint {joint}")]
    NonFinite {
        frame: usize,
        person: usize,
        joint: usize,
    },
}

/// An ordered sequence of per-person 3D joint positions, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: usize,
    persons: usize,
    joints: usize,
    /// Indexed by `(t * persons + m) * joints + j`.
    coords: Vec<[f64; 3]>,
    label: Option<usize>,
}

impl SkeletonSequence {
    /// Builds a sequence from coordinates laid out frame-major, then person,
    /// then joint.
    pub fn new(
        frames: usize,
        persons: usize,
        joints: usize,
        coords: Vec<[f64; 3]>,
        label: Option<usize>,
    ) -> Result<Self, SequenceError> {
        if frames == 0 || joints == 0 {
            return Err(SequenceError::Empty { frames, joints });
        }
        if !(1..=2).contains(&persons) {
            return Err(SequenceError::Persons(persons));
        }
        let expected = frames * persons * joints;
        if coords.len() != expected {
            return Err(SequenceError::CoordCount {
                expected,
                found: coords.len(),
            });
        }
        if let Some(i) = coords.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(SequenceError::NonFinite {
                frame: i / (persons * joints),
                person: (i / joints) % persons,
                joint: i % joints,
            });
        }
        Ok(Self {
            frames,
            persons,
            joints,
            coords,
            label,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Class label (0-based), if any.
    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    #[inline]
    pub fn joint(&self, t: usize, m: usize, j: usize) -> [f64; 3] {
        self.coords[(t * self.persons + m) * self.joints + j]
    }

    fn frame_slice(&self, t: usize) -> &[[f64; 3]] {
        let stride = self.persons * self.joints;
        &self.coords[t * stride..(t + 1) * stride]
    }

    /// Resamples to exactly `target` frames. Output frame `i` takes input
    /// frame `floor(i * T / target)`, which both down- and up-samples.
    pub fn uniform_sample(&self, target: usize) -> Self {
        assert!(target >= 1, "target frame count must be positive");
        let coords = sample_indices(self.frames, target)
            .flat_map(|src| self.frame_slice(src).iter().copied())
            .collect();
        Self {
            frames: target,
            coords,
            ..self.clone()
        }
    }

    /// Translates every point so that the root joint of person 0 in frame 0
    /// sits at the origin.
    pub fn centered(&self) -> Self {
        let root = self.coords[0];
        let coords = self
            .coords
            .iter()
            .map(|p| [p[0] - root[0], p[1] - root[1], p[2] - root[2]])
            .collect();
        Self {
            coords,
            ..self.clone()
        }
    }
}

/// Source frame indices selected by [`SkeletonSequence::uniform_sample`].
pub fn sample_indices(frames: usize, target: usize) -> impl Iterator<Item = usize> {
    (0..target).map(move |i| i * frames / target)
}

/// Which side of a stratified split a dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labelled sequences with `class_count` classes; every label is in
/// `0..class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<SkeletonSequence>,
    pub class_count: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels in sample order. Unlabelled samples panic; datasets are only
    /// built from labelled sequences.
    pub fn labels(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.label().expect("labelled dataset"))
            .collect()
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }

    pub fn with_samples(&self, samples: Vec<SkeletonSequence>) -> Self {
        Self {
            samples,
            class_count: self.class_count,
            split: self.split,
        }
    }
}
