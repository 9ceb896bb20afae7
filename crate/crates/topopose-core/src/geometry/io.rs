//! Point-cloud and pose file formats: ASCII XYZ, binary little-endian PLY
//! with float x/y/z properties, and pose JSON `{"R": .., "t": .., "s": ..}`.

use super::{PointCloud, Pose, Vec3};
use crate::tensor::Real;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

/// Whitespace-separated ASCII, one point per line; extra columns ignored.
pub fn read_xyz(path: &Path) -> Result<PointCloud, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut coords = [0.0 as Real; 3];
        let mut fields = trimmed.split_whitespace();
        for (i, c) in coords.iter_mut().enumerate() {
            let field = fields.next().ok_or_else(|| IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 3 coordinates, got {i}"),
            })?;
            *c = field.parse().map_err(|_| IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("not a number: `{field}`"),
            })?;
        }
        points.push(coords);
    }
    PointCloud::new(points).map_err(|e| IoError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let mut out = String::new();
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Binary little-endian PLY restricted to a vertex element with float or
/// double x/y/z properties (extra properties are skipped).
pub fn read_ply(path: &Path) -> Result<PointCloud, IoError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header_end = find_header_end(&bytes).ok_or_else(|| IoError::Format {
        path: path.display().to_string(),
        msg: "missing end_header".into(),
    })?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| IoError::Format {
        path: path.display().to_string(),
        msg: "header is not UTF-8".into(),
    })?;

    let fail = |msg: String| IoError::Format { path: path.display().to_string(), msg };
    let mut vertex_count = None;
    // (name, byte width) per property, in declared order.
    let mut props: Vec<(String, usize)> = Vec::new();
    let mut in_vertex = false;
    let mut saw_format = false;
    for line in header.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["ply"] | ["comment", ..] | ["end_header"] => {}
            ["format", "binary_little_endian", "1.0"] => saw_format = true,
            ["format", other, ..] => {
                return Err(fail(format!("unsupported PLY format `{other}`")));
            }
            ["element", "vertex", count] => {
                vertex_count = Some(count.parse::<usize>().map_err(|_| {
                    fail(format!("bad vertex count `{count}`"))
                })?);
                in_vertex = true;
            }
            ["element", name, _] => {
                if in_vertex {
                    in_vertex = false;
                }
                let _ = name;
            }
            ["property", ty, name] if in_vertex => {
                let width = match *ty {
                    "float" | "float32" | "int" | "int32" | "uint" | "uint32" => 4,
                    "double" | "float64" => 8,
                    "uchar" | "uint8" | "char" | "int8" => 1,
                    "short" | "ushort" | "int16" | "uint16" => 2,
                    other => return Err(fail(format!("unsupported property type `{other}`"))),
                };
                props.push((name.to_string(), width));
                if (*name == "x" || *name == "y" || *name == "z") && width != 4 && width != 8 {
                    return Err(fail(format!("coordinate `{name}` must be float or double")));
                }
            }
            ["property", "list", ..] => {
                return Err(fail("list properties are not supported".into()));
            }
            _ => {}
        }
    }
    if !saw_format {
        return Err(fail("expected `format binary_little_endian 1.0`".into()));
    }
    let count = vertex_count.ok_or_else(|| fail("missing vertex element".into()))?;
    let stride: usize = props.iter().map(|(_, w)| w).sum();
    let mut offsets = [None; 3];
    let mut widths = [4usize; 3];
    let mut acc = 0usize;
    for (name, w) in &props {
        for (axis, coord) in ["x", "y", "z"].iter().enumerate() {
            if name == coord {
                offsets[axis] = Some(acc);
                widths[axis] = *w;
            }
        }
        acc += w;
    }
    let [Some(ox), Some(oy), Some(oz)] = offsets else {
        return Err(fail("vertex element lacks x/y/z properties".into()));
    };

    let body = &bytes[header_end..];
    if body.len() < count * stride {
        return Err(fail(format!(
            "truncated body: {} bytes for {count} vertices of {stride} bytes",
            body.len()
        )));
    }
    let read_at = |base: usize, off: usize, width: usize| -> Real {
        if width == 8 {
            let mut b = [0u8; 8];
            b.copy_from_slice(&body[base + off..base + off + 8]);
            f64::from_le_bytes(b) as Real
        } else {
            let mut b = [0u8; 4];
            b.copy_from_slice(&body[base + off..base + off + 4]);
            f32::from_le_bytes(b) as Real
        }
    };
    let mut points: Vec<Vec3> = Vec::with_capacity(count);
    for i in 0..count {
        let base = i * stride;
        points.push([
            read_at(base, ox, widths[0]),
            read_at(base, oy, widths[1]),
            read_at(base, oz, widths[2]),
        ]);
    }
    PointCloud::new(points).map_err(|e| fail(e.to_string()))
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header\n";
    bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let mut out = Vec::new();
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    out.extend_from_slice(header.as_bytes());
    for p in cloud.points() {
        for c in p {
            out.write_all(&(*c as f32).to_le_bytes()).expect("vec write");
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Read either format, dispatching on the extension (`.ply` vs anything else).
pub fn read_cloud(path: &Path) -> Result<PointCloud, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

pub fn read_pose(path: &Path) -> Result<Pose, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(pose).expect("pose serialization");
    fs::write(path, text).map_err(|e| io_err(path, e))
}
