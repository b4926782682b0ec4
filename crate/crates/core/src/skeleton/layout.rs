//! Joint layouts and their body-part partitions.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("no built-in joint layout for J={0}; supply a layout file")]
    UnknownLayout(usize),
    #[error("layout is for J={layout} but the data has J={data}")]
    JointMismatch { layout: usize, data: usize },
    #[error("layout has no scale-{0} partition")]
    MissingScale(u8),
    #[error("scale {scale} requires {expected} parts, layout defines {found}")]
    PartCount {
        scale: u8,
        expected: usize,
        found: usize,
    },
    #[error("joint {0} (1-based) is assigned to more than one part")]
    Overlap(usize),
    #[error("joint {0} (1-based) is not covered by any part")]
    Uncovered(usize),
    #[error("joint {joint} (1-based) is outside 1..={joints}")]
    OutOfRange { joint: usize, joints: usize },
    #[error("layout line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Partition granularity: scale 1 has 10 parts, scale 2 has 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionScale {
    Fine,
    Coarse,
}

impl PartitionScale {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::Fine),
            2 => Some(Self::Coarse),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::Fine => 1,
            Self::Coarse => 2,
        }
    }

    pub fn part_count(self) -> usize {
        match self {
            Self::Fine => 10,
            Self::Coarse => 6,
        }
    }
}

/// A disjoint cover of `0..joints` by body parts, in coloring order.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyPartition {
    scale: PartitionScale,
    parts: Vec<Vec<usize>>,
    part_of: Vec<usize>,
}

impl BodyPartition {
    /// Validates that `parts` (0-based joints) partition `0..joints`.
    pub fn new(
        scale: PartitionScale,
        joints: usize,
        parts: Vec<Vec<usize>>,
    ) -> Result<Self, PartitionError> {
        if parts.len() != scale.part_count() {
            return Err(PartitionError::PartCount {
                scale: scale.number(),
                expected: scale.part_count(),
                found: parts.len(),
            });
        }
        let mut part_of = vec![usize::MAX; joints];
        for (p, part) in parts.iter().enumerate() {
            for &j in part {
                if j >= joints {
                    return Err(PartitionError::OutOfRange {
                        joint: j + 1,
                        joints,
                    });
                }
                if part_of[j] != usize::MAX {
                    return Err(PartitionError::Overlap(j + 1));
                }
                part_of[j] = p;
            }
        }
        if let Some(j) = part_of.iter().position(|&p| p == usize::MAX) {
            return Err(PartitionError::Uncovered(j + 1));
        }
        Ok(Self {
            scale,
            parts,
            part_of,
        })
    }

    pub fn scale(&self) -> PartitionScale {
        self.scale
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    pub fn joints(&self) -> usize {
        self.part_of.len()
    }

    /// 0-based part index containing joint `j`.
    pub fn part_of(&self, j: usize) -> usize {
        self.part_of[j]
    }
}

/// Named joint layout carrying 1-based part definitions for both scales.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLayout {
    pub name: String,
    pub joints: usize,
    pub fine: Option<Vec<Vec<usize>>>,
    pub coarse: Option<Vec<Vec<usize>>>,
}

fn one_based(parts: &[&[usize]]) -> Vec<Vec<usize>> {
    parts.iter().map(|p| p.to_vec()).collect()
}

impl JointLayout {
    /// Kinect v2 layout, 25 joints.
    pub fn ntu25() -> Self {
        Self {
            name: "ntu25".into(),
            joints: 25,
            // neck, trunk, right arm, right hand, left arm, left hand,
            // right leg, right foot, left leg, left foot
            fine: Some(one_based(&[
                &[3, 4],
                &[1, 2, 21],
                &[9, 10],
                &[11, 12, 24, 25],
                &[5, 6],
                &[7, 8, 22, 23],
                &[17, 18],
                &[19, 20],
                &[13, 14],
                &[15, 16],
            ])),
            // head, torso, right/left upper limb, right/left lower limb
            coarse: Some(one_based(&[
                &[3, 4],
                &[1, 2, 21],
                &[9, 10, 11, 12, 24, 25],
                &[5, 6, 7, 8, 22, 23],
                &[17, 18, 19, 20],
                &[13, 14, 15, 16],
            ])),
        }
    }

    /// Kinect v1 layout, 20 joints.
    pub fn kinect20() -> Self {
        Self {
            name: "kinect20".into(),
            joints: 20,
            fine: Some(one_based(&[
                &[3, 4],
                &[1, 2],
                &[9, 10],
                &[11, 12],
                &[5, 6],
                &[7, 8],
                &[17, 18],
                &[19, 20],
                &[13, 14],
                &[15, 16],
            ])),
            coarse: Some(one_based(&[
                &[3, 4],
                &[1, 2],
                &[9, 10, 11, 12],
                &[5, 6, 7, 8],
                &[17, 18, 19, 20],
                &[13, 14, 15, 16],
            ])),
        }
    }

    /// OpenNI layout, 15 joints: head, neck, torso, then left arm, right
    /// arm, left leg, right leg (three joints each).
    pub fn openni15() -> Self {
        Self {
            name: "openni15".into(),
            joints: 15,
            fine: Some(one_based(&[
                &[1, 2],
                &[3],
                &[7, 8],
                &[9],
                &[4, 5],
                &[6],
                &[13, 14],
                &[15],
                &[10, 11],
                &[12],
            ])),
            coarse: Some(one_based(&[
                &[1, 2],
                &[3],
                &[7, 8, 9],
                &[4, 5, 6],
                &[13, 14, 15],
                &[10, 11, 12],
            ])),
        }
    }

    /// The built-in layout for `joints`, if one exists.
    pub fn builtin(joints: usize) -> Option<Self> {
        match joints {
            25 => Some(Self::ntu25()),
            20 => Some(Self::kinect20()),
            15 => Some(Self::openni15()),
            _ => None,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        [Self::ntu25(), Self::kinect20(), Self::openni15()]
            .into_iter()
            .find(|l| l.name == name)
    }
}

/// Builds the scale-`scale` partition of `0..joints`, using the built-in
/// layout for `joints` when `layout` is `None`.
pub fn body_partition(
    joints: usize,
    scale: PartitionScale,
    layout: Option<&JointLayout>,
) -> Result<BodyPartition, PartitionError> {
    let owned;
    let layout = match layout {
        Some(l) => l,
        None => {
            owned = JointLayout::builtin(joints).ok_or(PartitionError::UnknownLayout(joints))?;
            &owned
        }
    };
    if layout.joints != joints {
        return Err(PartitionError::JointMismatch {
            layout: layout.joints,
            data: joints,
        });
    }
    let parts = match scale {
        PartitionScale::Fine => layout.fine.as_ref(),
        PartitionScale::Coarse => layout.coarse.as_ref(),
    }
    .ok_or(PartitionError::MissingScale(scale.number()))?;
    let mut zero_based = Vec::with_capacity(parts.len());
    for part in parts {
        let mut p = Vec::with_capacity(part.len());
        for &j in part {
            if j == 0 || j > joints {
                return Err(PartitionError::OutOfRange { joint: j, joints });
            }
            p.push(j - 1);
        }
        zero_based.push(p);
    }
    BodyPartition::new(scale, joints, zero_based)
}

/// Parses a layout file: one or more `PART <scale> <part_count>` blocks,
/// each followed by `part_count` lines of 1-based joint indices.
pub fn parse_layout(name: &str, joints: usize, text: &str) -> Result<JointLayout, PartitionError> {
    let mut layout = JointLayout {
        name: name.to_string(),
        joints,
        fine: None,
        coarse: None,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    while let Some((line, header)) = lines.next() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_err = |reason: &str| PartitionError::Parse {
            line,
            reason: reason.to_string(),
        };
        if fields.len() != 3 || fields[0] != "PART" {
            return Err(parse_err("expected `PART <scale> <part_count>`"));
        }
        let scale = fields[1]
            .parse::<u8>()
            .ok()
            .and_then(PartitionScale::from_number)
            .ok_or_else(|| parse_err("scale must be 1 or 2"))?;
        let count: usize = fields[2]
            .parse()
            .map_err(|_| parse_err("part count is not a number"))?;
        let mut parts = Vec::with_capacity(count);
        for _ in 0..count {
            let (pline, body) = lines.next().ok_or(PartitionError::Parse {
                line,
                reason: format!("expected {count} part lines"),
            })?;
            let part = body
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| PartitionError::Parse {
                    line: pline,
                    reason: "joint index is not a number".into(),
                })?;
            parts.push(part);
        }
        match scale {
            PartitionScale::Fine => layout.fine = Some(parts),
            PartitionScale::Coarse => layout.coarse = Some(parts),
        }
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_partition(p: &BodyPartition, joints: usize) {
        let mut seen = vec![0; joints];
        for part in p.parts() {
            assert!(!part.is_empty());
            for &j in part {
                seen[j] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "{seen:?}");
        for (idx, part) in p.parts().iter().enumerate() {
            for &j in part {
                assert_eq!(p.part_of(j), idx);
            }
        }
    }

    #[test]
    fn every_builtin_layout_partitions_its_joints() {
        for joints in [25, 20, 15] {
            for scale in [PartitionScale::Fine, PartitionScale::Coarse] {
                let p = body_partition(joints, scale, None).unwrap();
                assert_eq!(p.part_count(), scale.part_count());
                assert_eq!(p.joints(), joints);
                assert_partition(&p, joints);
            }
        }
    }

    #[test]
    fn ntu_partition_counts() {
        assert_eq!(
            body_partition(25, PartitionScale::Fine, None)
                .unwrap()
                .part_count(),
            10
        );
        assert_eq!(
            body_partition(25, PartitionScale::Coarse, None)
                .unwrap()
                .part_count(),
            6
        );
    }

    #[test]
    fn unknown_layout() {
        assert_eq!(
            body_partition(17, PartitionScale::Fine, None),
            Err(PartitionError::UnknownLayout(17))
        );
    }

    #[test]
    fn layout_file_round_trip_and_validation() {
        let text = "# six joints\nPART 2 6\n1\n2\n3\n4\n5\n6\n";
        let layout = parse_layout("custom", 6, text).unwrap();
        let p = body_partition(6, PartitionScale::Coarse, Some(&layout)).unwrap();
        assert_partition(&p, 6);
        assert_eq!(
            body_partition(6, PartitionScale::Fine, Some(&layout)),
            Err(PartitionError::MissingScale(1))
        );

        let gap = parse_layout("gap", 7, text).unwrap();
        assert_eq!(
            body_partition(7, PartitionScale::Coarse, Some(&gap)),
            Err(PartitionError::Uncovered(7))
        );

        let overlap = parse_layout("o", 6, "PART 2 6\n1 2\n2\n3\n4\n5\n6\n").unwrap();
        assert_eq!(
            body_partition(6, PartitionScale::Coarse, Some(&overlap)),
            Err(PartitionError::Overlap(2))
        );

        assert!(matches!(
            parse_layout("x", 6, "PART 3 6\n"),
            Err(PartitionError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_layout("x", 6, "PART 2 6\n1\n"),
            Err(PartitionError::Parse { .. })
        ));
    }
}
