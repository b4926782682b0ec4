//! ASCII PLY with float positions and 8-bit colors.

use std::io::{BufRead, Write};

use skelcloud::cloud::SkeletonCloud;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A PLY vertex as stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

/// `round(255 * c)` after clamping to `[0, 1]`.
pub fn quantize(c: f64) -> u8 {
    (255.0 * c.clamp(0.0, 1.0)).round() as u8
}

/// Writes the cloud in point order, which is provenance order `(t, j, m)`.
pub fn write_ply<W: Write>(cloud: &SkeletonCloud, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "ply\nformat ascii 1.0\ncomment kind {:?}",
        cloud.kind()
    )?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}")?;
    }
    for channel in ["red", "green", "blue"] {
        writeln!(out, "property uchar {channel}")?;
    }
    writeln!(out, "end_header")?;
    for p in cloud.points() {
        let [x, y, z] = p.position.map(|v| v as f32);
        let [r, g, b] = p.color.map(quantize);
        writeln!(out, "{x} {y} {z} {r} {g} {b}")?;
    }
    Ok(())
}

const PROPERTIES: [&str; 6] = [
    "float x",
    "float y",
    "float z",
    "uchar red",
    "uchar green",
    "uchar blue",
];

/// Reads files in the layout [`write_ply`] produces.
pub fn read_ply<R: BufRead>(input: R) -> Result<Vec<Vertex>, PlyError> {
    let fail = |line: usize, reason: &str| PlyError::Format {
        line,
        reason: reason.to_string(),
    };
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = || -> Result<(usize, String), PlyError> {
        let (n, l) = lines
            .next()
            .ok_or_else(|| fail(0, "unexpected end of file"))?;
        Ok((n, l?))
    };
    let (n, magic) = next()?;
    if magic.trim() != "ply" {
        return Err(fail(n, "missing `ply` magic"));
    }
    let (n, format) = next()?;
    if format.trim() != "format ascii 1.0" {
        return Err(fail(n, "only ascii 1.0 is supported"));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let (n, l) = next()?;
        let l = l.trim();
        if l == "end_header" {
            break;
        } else if let Some(rest) = l.strip_prefix("element vertex ") {
            count = Some(
                rest.trim()
                    .parse::<usize>()
                    .map_err(|_| fail(n, "bad vertex count"))?,
            );
        } else if let Some(rest) = l.strip_prefix("property ") {
            props.push(rest.to_string());
        } else if !l.starts_with("comment") && !l.is_empty() {
            return Err(fail(n, "unsupported header line"));
        }
    }
    if props != PROPERTIES {
        return Err(fail(0, "expected properties x y z red green blue"));
    }
    let count = count.ok_or_else(|| fail(0, "missing vertex element"))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = next()?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(fail(n, "expected 6 values"));
        }
        let mut position = [0f32; 3];
        for (p, f) in position.iter_mut().zip(&fields[..3]) {
            *p = f.parse().map_err(|_| fail(n, "bad coordinate"))?;
        }
        let mut color = [0u8; 3];
        for (c, f) in color.iter_mut().zip(&fields[3..]) {
            *c = f.parse().map_err(|_| fail(n, "bad color"))?;
        }
        out.push(Vertex { position, color });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use skelcloud::cloud::{build_cloud, colorize, ColorScheme};
    use skelcloud::skeleton::SkeletonSequence;

    #[test]
    fn single_green_point() {
        let seq =
            SkeletonSequence::new(2, 1, 1, vec![[0.5, -1.25, 3.0], [1.0, 2.0, 3.0]], None).unwrap();
        let cloud = colorize(&build_cloud(&seq), &ColorScheme::Temporal).unwrap();
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("element vertex 2\n"));
        assert!(
            text.lines().nth(11).unwrap().ends_with(" 0 255 0"),
            "{text}"
        );
        let back = read_ply(buf.as_slice()).unwrap();
        assert_eq!(
            back[0],
            Vertex {
                position: [0.5, -1.25, 3.0],
                color: [0, 255, 0]
            }
        );
        assert_eq!(back[1].color, [0, 0, 255]);
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.5), 255);
    }

    #[test]
    fn malformed_files() {
        assert!(read_ply("plx\n".as_bytes()).is_err());
        let header = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
        assert!(read_ply(format!("{header}1 2 3 0 0 0\n").as_bytes()).is_err());
        assert!(read_ply(format!("{header}1 2 3 0 0 0\n1 2 3 0 0 256\n").as_bytes()).is_err());
        assert_eq!(
            read_ply(format!("{header}1 2 3 0 0 0\n1 2 3 0 0 9\n").as_bytes())
                .unwrap()
                .len(),
            2
        );
    }
}
