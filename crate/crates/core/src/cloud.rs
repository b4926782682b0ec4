//! Skeleton clouds and their colorization schemes.
//!
//! A sequence with `T` frames, `J` joints and `M` persons stacks into a
//! cloud of `N = T * J * M` points. Points are stored in provenance order:
//! frame-major, then joint, then person.

use ndarray::Array2;
use thiserror::Error;

use crate::skeleton::{BodyPartition, SkeletonSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColorError {
    #[error("order index {k} outside 1..={count}")]
    OrderIndex { k: usize, count: usize },
    #[error("colorization expects a raw cloud, got {0:?}")]
    NotRaw(CloudKind),
    #[error("person colorization needs two-person data")]
    SinglePerson,
    #[error("segment size {size} must be in 1..={frames}")]
    SegmentSize { size: usize, frames: usize },
    #[error("partition covers {partition} joints but the cloud has {cloud}")]
    PartitionMismatch { partition: usize, cloud: usize },
}

/// Which source element a point came from (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Provenance {
    pub frame: usize,
    pub joint: usize,
    pub person: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
    pub prov: Provenance,
}

impl CloudPoint {
    pub fn features(&self) -> [f64; 6] {
        let [x, y, z] = self.position;
        let [r, g, b] = self.color;
        [x, y, z, r, g, b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CloudKind {
    Raw,
    Temporal,
    Spatial,
    Person,
    CoarseTemporal,
    CoarseSpatial,
    Masked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonCloud {
    points: Vec<CloudPoint>,
    kind: CloudKind,
    frames: usize,
    joints: usize,
    persons: usize,
}

impl SkeletonCloud {
    pub fn points(&self) -> &[CloudPoint] {
        &self.points
    }

    pub fn kind(&self) -> CloudKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(T, J, M)` of the source sequence.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.joints, self.persons)
    }

    /// Position of the point with the given provenance in `points()`.
    pub fn index_of(&self, prov: Provenance) -> usize {
        (prov.frame * self.joints + prov.joint) * self.persons + prov.person
    }

    /// `N x 6` matrix of `[x, y, z, r, g, b]` rows.
    pub fn features(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.points.len(), 6));
        for (mut row, p) in out.rows_mut().into_iter().zip(&self.points) {
            for (dst, v) in row.iter_mut().zip(p.features()) {
                *dst = v;
            }
        }
        out
    }

    pub(crate) fn from_parts(
        points: Vec<CloudPoint>,
        kind: CloudKind,
        shape: (usize, usize, usize),
    ) -> Self {
        Self {
            points,
            kind,
            frames: shape.0,
            joints: shape.1,
            persons: shape.2,
        }
    }
}

/// Stacks every joint of every frame and person into a raw (uncolored)
/// cloud.
pub fn build_cloud(seq: &SkeletonSequence) -> SkeletonCloud {
    let (frames, joints, persons) = (seq.frames(), seq.joints(), seq.persons());
    let mut points = Vec::with_capacity(frames * joints * persons);
    for frame in 0..frames {
        for joint in 0..joints {
            for person in 0..persons {
                points.push(CloudPoint {
                    position: seq.joint(frame, person, joint),
                    color: [0.0; 3],
                    prov: Provenance {
                        frame,
                        joint,
                        person,
                    },
                });
            }
        }
    }
    SkeletonCloud {
        points,
        kind: CloudKind::Raw,
        frames,
        joints,
        persons,
    }
}

/// Red to green to blue ramp for order index `k` of `count` (1-based).
pub fn order_color(k: usize, count: usize) -> Result<[f64; 3], ColorError> {
    if count == 0 || k == 0 || k > count {
        return Err(ColorError::OrderIndex { k, count });
    }
    let x = 2.0 * k as f64 / count as f64;
    let rgb = if 2 * k <= count {
        [1.0 - x, x, 0.0]
    } else {
        [0.0, 2.0 - x, x - 1.0]
    };
    Ok(rgb.map(|c| c.clamp(0.0, 1.0)))
}

/// Recovers `k` from an [`order_color`] output by nearest candidate.
pub fn decode_order(color: [f64; 3], count: usize) -> usize {
    (1..=count)
        .map(|k| {
            let c = order_color(k, count).expect("k in range");
            let d: f64 = c.iter().zip(color).map(|(a, b)| (a - b).abs()).sum();
            (k, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .expect("count >= 1")
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColorScheme {
    Temporal,
    Spatial,
    Person,
    CoarseTemporal { segment_size: usize },
    CoarseSpatial { partition: BodyPartition },
}

impl ColorScheme {
    pub fn kind(&self) -> CloudKind {
        match self {
            Self::Temporal => CloudKind::Temporal,
            Self::Spatial => CloudKind::Spatial,
            Self::Person => CloudKind::Person,
            Self::CoarseTemporal { .. } => CloudKind::CoarseTemporal,
            Self::CoarseSpatial { .. } => CloudKind::CoarseSpatial,
        }
    }
}

/// A self-supervision stream: which fine-grained coloring the encoder
/// learns to repaint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Temporal,
    Spatial,
    Person,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Temporal, Stream::Spatial, Stream::Person];

    pub fn name(self) -> &'static str {
        match self {
            Self::Temporal => "temporal",
            Self::Spatial => "spatial",
            Self::Person => "person",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn fine_scheme(self) -> ColorScheme {
        match self {
            Self::Temporal => ColorScheme::Temporal,
            Self::Spatial => ColorScheme::Spatial,
            Self::Person => ColorScheme::Person,
        }
    }
}

/// Colors a raw cloud. Positions and provenance are untouched.
pub fn colorize(cloud: &SkeletonCloud, scheme: &ColorScheme) -> Result<SkeletonCloud, ColorError> {
    if cloud.kind != CloudKind::Raw {
        return Err(ColorError::NotRaw(cloud.kind));
    }
    let (frames, joints, persons) = cloud.shape();
    match scheme {
        ColorScheme::Person if persons < 2 => return Err(ColorError::SinglePerson),
        &ColorScheme::CoarseTemporal { segment_size }
            if segment_size == 0 || segment_size > frames =>
        {
            return Err(ColorError::SegmentSize {
                size: segment_size,
                frames,
            })
        }
        ColorScheme::CoarseSpatial { partition } if partition.joints() != joints => {
            return Err(ColorError::PartitionMismatch {
                partition: partition.joints(),
                cloud: joints,
            })
        }
        _ => {}
    }
    let color_of = |p: &Provenance| -> [f64; 3] {
        let (k, count) = match scheme {
            ColorScheme::Temporal => (p.frame + 1, frames),
            ColorScheme::Spatial => (p.joint + 1, joints),
            ColorScheme::Person => {
                return if p.person == 0 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 1.0]
                }
            }
            ColorScheme::CoarseTemporal { segment_size } => {
                (p.frame / segment_size + 1, frames.div_ceil(*segment_size))
            }
            ColorScheme::CoarseSpatial { partition } => {
                (partition.part_of(p.joint) + 1, partition.part_count())
            }
        };
        order_color(k, count).expect("order index within range by construction")
    };
    let points = cloud
        .points
        .iter()
        .map(|p| CloudPoint {
            color: color_of(&p.prov),
            ..*p
        })
        .collect();
    Ok(SkeletonCloud {
        points,
        kind: scheme.kind(),
        ..*cloud
    })
}
