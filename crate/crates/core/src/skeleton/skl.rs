//! The SKL line-oriented text format.
//!
//! ```text
//! SKL 1 <T> <J> <M> [label]
//! t m j x y z        # T*M*J lines, 1-based indices, ordered by (t, m, j)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::SkeletonSequence;

pub const SKL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SklError {
    #[error("empty file")]
    Empty,
    #[error("line {line}: malformed header: {reason}")]
    Header { line: usize, reason: String },
    #[error("line {line}: expected 6 fields `t m j x y z`, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: non-numeric value {token:?}")]
    NonNumeric { line: usize, token: String },
    #[error("line {line}: non-finite coordinate")]
    NonFinite { line: usize },
    #[error("line {line}: joint count mismatch: expected {expected}, file declares {found}")]
    JointCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: expected index (t={}, m={}, j={}), found (t={}, m={}, j={})",
        expected.0, expected.1, expected.2, found.0, found.1, found.2)]
    Index {
        line: usize,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("line {line}: file ends after {found} of {expected} coordinate lines")]
    Truncated {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unexpected data after the last coordinate line")]
    Trailing { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_count(token: Option<&str>, what: &str, line: usize) -> Result<usize, SklError> {
    let token = token.ok_or_else(|| SklError::Header {
        line,
        reason: format!("missing {what}"),
    })?;
    token.parse::<usize>().map_err(|_| SklError::Header {
        line,
        reason: format!("{what} is not a count: {token:?}"),
    })
}

/// Reads and validates an SKL file.
pub fn load_sequence(
    path: &Path,
    expected_joints: Option<usize>,
) -> Result<SkeletonSequence, SklError> {
    let text = std::fs::read_to_string(path)?;
    parse_sequence(&text, expected_joints)
}

pub fn parse_sequence(
    text: &str,
    expected_joints: Option<usize>,
) -> Result<SkeletonSequence, SklError> {
    if text.trim().is_empty() {
        return Err(SklError::Empty);
    }
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (hline, header) = lines.next().ok_or(SklError::Empty)?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("SKL") {
        return Err(SklError::Header {
            line: hline,
            reason: "missing SKL magic".into(),
        });
    }
    let version = parse_count(tok.next(), "version", hline)?;
    if version != SKL_VERSION as usize {
        return Err(SklError::Header {
            line: hline,
            reason: format!("unsupported version {version}"),
        });
    }
    let frames = parse_count(tok.next(), "frame count", hline)?;
    let joints = parse_count(tok.next(), "joint count", hline)?;
    let persons = parse_count(tok.next(), "person count", hline)?;
    let label = match tok.next() {
        None => None,
        Some(t) => {
            let l = parse_count(Some(t), "label", hline)?;
            if l == 0 {
                return Err(SklError::Header {
                    line: hline,
                    reason: "labels are 1-based".into(),
                });
            }
            Some(l - 1)
        }
    };
    if tok.next().is_some() {
        return Err(SklError::Header {
            line: hline,
            reason: "too many header fields".into(),
        });
    }
    if frames == 0 || joints == 0 {
        return Err(SklError::Header {
            line: hline,
            reason: "frame and joint counts must be positive".into(),
        });
    }
    if !(1..=2).contains(&persons) {
        return Err(SklError::Header {
            line: hline,
            reason: format!("person count must be 1 or 2, got {persons}"),
        });
    }
    if let Some(expected) = expected_joints {
        if expected != joints {
            return Err(SklError::JointCount {
                line: hline,
                expected,
                found: joints,
            });
        }
    }

    let total = frames * persons * joints;
    let mut coords = Vec::with_capacity(total);
    let mut last_line = hline;
    for t in 1..=frames {
        for m in 1..=persons {
            for j in 1..=joints {
                let (line, body) = lines.next().ok_or(SklError::Truncated {
                    line: last_line,
                    expected: total,
                    found: coords.len(),
                })?;
                last_line = line;
                let fields: Vec<&str> = body.split_whitespace().collect();
                if fields.len() != 6 {
                    return Err(SklError::FieldCount {
                        line,
                        found: fields.len(),
                    });
                }
                let index = |k: usize| {
                    fields[k]
                        .parse::<usize>()
                        .map_err(|_| SklError::NonNumeric {
                            line,
                            token: fields[k].to_string(),
                        })
                };
                let found = (index(0)?, index(1)?, index(2)?);
                if found.2 > joints && found.0 == t && found.1 == m {
                    return Err(SklError::JointCount {
                        line,
                        expected: joints,
                        found: found.2,
                    });
                }
                if found != (t, m, j) {
                    return Err(SklError::Index {
                        line,
                        expected: (t, m, j),
                        found,
                    });
                }
                let mut xyz = [0.0; 3];
                for (k, v) in xyz.iter_mut().enumerate() {
                    let token = fields[3 + k];
                    *v = token.parse::<f64>().map_err(|_| SklError::NonNumeric {
                        line,
                        token: token.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(SklError::NonFinite { line });
                    }
                }
                coords.push(xyz);
            }
        }
    }
    if let Some((line, _)) = lines.next() {
        return Err(SklError::Trailing { line });
    }
    Ok(
        SkeletonSequence::new(frames, persons, joints, coords, label)
            .expect("validated while parsing"),
    )
}

/// Serializes a sequence; coordinates use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_sequence(seq: &SkeletonSequence) -> String {
    let mut out = String::new();
    write!(
        out,
        "SKL {SKL_VERSION} {} {} {}",
        seq.frames(),
        seq.joints(),
        seq.persons()
    )
    .unwrap();
    if let Some(l) = seq.label() {
        write!(out, " {}", l + 1).unwrap();
    }
    out.push('\n');
    for t in 0..seq.frames() {
        for m in 0..seq.persons() {
            for j in 0..seq.joints() {
                let [x, y, z] = seq.joint(t, m, j);
                writeln!(out, "{} {} {} {x:?} {y:?} {z:?}", t + 1, m + 1, j + 1).unwrap();
            }
        }
    }
    out
}
