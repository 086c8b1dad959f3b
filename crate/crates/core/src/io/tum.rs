//! TUM trajectory text files.
//!
//! One pose per line, `timestamp tx ty tz qx qy qz qw`, `#` starts a
//! comment. Floats are written with Rust's shortest round-trip formatting,
//! so `read(write(t))` reproduces the exact bit patterns. Quaternions are
//! checked on read: norm must be within `1e-6` of one (then normalized;
//! already-unit quaternions are left untouched).

use std::path::Path;

use nalgebra::Vector3;

use super::IoFormatError;
use crate::geometry::{SE3Pose, Trajectory};

pub fn write_tum_string(t: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (stamp, pose) in t.stamps.iter().zip(&t.poses) {
        let q = pose.rotation_quaternion();
        let tr = pose.translation;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            stamp, tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]
        ));
    }
    out
}

pub fn read_tum_str(text: &str) -> Result<Trajectory, IoFormatError> {
    let mut stamps = Vec::new();
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(IoFormatError::BadLine {
                line,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 8];
        for (k, f) in fields.iter().enumerate() {
            values[k] = f.parse().map_err(|_| IoFormatError::BadLine {
                line,
                msg: format!("cannot parse float from {f:?}"),
            })?;
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IoFormatError::BadLine {
                line,
                msg: "non-finite value".into(),
            });
        }
        let mut q = [values[4], values[5], values[6], values[7]];
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(IoFormatError::BadQuaternion { line, norm });
        }
        // Preserve already-unit quaternions bit-exactly; only rescale real drift.
        if (norm - 1.0).abs() > 1e-12 {
            for c in q.iter_mut() {
                *c /= norm;
            }
        }
        stamps.push(values[0]);
        poses.push(SE3Pose::from_quaternion(
            q,
            Vector3::new(values[1], values[2], values[3]),
        ));
    }
    Ok(Trajectory::new(stamps, poses))
}

pub fn write_tum(path: &Path, t: &Trajectory) -> Result<(), IoFormatError> {
    std::fs::write(path, write_tum_string(t)).map_err(|e| IoFormatError::io(path, e))
}

pub fn read_tum(path: &Path) -> Result<Trajectory, IoFormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoFormatError::io(path, e))?;
    read_tum_str(&text)
}
