//! Raw frame (`.bin`) and label (`.txt`) codecs.

use std::fs;
use std::path::Path;

use super::{Box3D, GtObject, Point, PointCloud};
use crate::error::{Error, Result};

const RECORD_BYTES: usize = 16;

/// Frame id from a file stem such as `000042.bin`.
pub fn frame_id_from_path(path: &Path) -> Result<u64> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format(format!("{}: no file stem", path.display())))?;
    stem.parse::<u64>().map_err(|_| {
        Error::Format(format!(
            "{}: file stem `{stem}` is not a frame number",
            path.display()
        ))
    })
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame_id = frame_id_from_path(path)?;
    let cloud = decode_frame(frame_id, &bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(cloud)
}

pub(crate) fn decode_frame(frame_id: u64, bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Format(format!(
            "truncated record: {} bytes is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.r.is_finite()) {
            return Err(Error::Format(format!("point {i} has a non-finite value")));
        }
        points.push(p);
    }
    Ok(PointCloud { points, frame_id })
}

pub(crate) fn encode_frame(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.points.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_frame(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_frame(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<GtObject>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Parses `class cx cy cz dx dy dz theta` lines; `#` lines and blank lines are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<GtObject>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "line {}: expected 8 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 7];
        for (v, s) in vals.iter_mut().zip(&fields[1..]) {
            *v = s.parse::<f64>().map_err(|_| {
                Error::Format(format!("line {}: non-numeric field `{s}`", lineno + 1))
            })?;
        }
        let bbox = Box3D::from_array(vals);
        if !(bbox.dx > 0.0 && bbox.dy > 0.0 && bbox.dz > 0.0) {
            return Err(Error::Format(format!(
                "line {}: non-positive box size",
                lineno + 1
            )));
        }
        bbox.validate()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(GtObject {
            class_name: fields[0].to_string(),
            bbox,
        });
    }
    Ok(out)
}

/// Renders labels with shortest round-trip float formatting.
pub fn format_labels(labels: &[GtObject]) -> String {
    let mut s = String::new();
    for obj in labels {
        let b = &obj.bbox;
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            obj.class_name, b.cx, b.cy, b.cz, b.dx, b.dy, b.dz, b.theta
        ));
    }
    s
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[GtObject]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_labels(labels)).map_err(|e| Error::io(path, e))
}
