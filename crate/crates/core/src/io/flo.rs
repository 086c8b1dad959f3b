//! Middlebury `.flo` optical-flow files.
//!
//! Layout: little-endian `f32` magic `202021.25`, `i32` width, `i32` height,
//! then `height * width` interleaved `(u, v)` pairs of little-endian `f32`.
//! Components with magnitude above `1e9` mark unknown flow.

use std::path::Path;

use super::{IoFormatError, MAX_DIM};
use crate::sceneflow::FlowField;

const MAGIC: f32 = 202021.25;
const UNKNOWN: f32 = 1e10;
const UNKNOWN_THRESH: f64 = 1e9;
const FORMAT: &str = "flo";

pub fn write_flo_bytes(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.uv.len() * 4);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for y in 0..flow.height {
        for x in 0..flow.width {
            let (u, v) = flow.at(x, y);
            let (u, v) = if flow.is_valid(x, y) {
                (u as f32, v as f32)
            } else {
                (UNKNOWN, UNKNOWN)
            };
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_flo_bytes(bytes: &[u8]) -> Result<FlowField, IoFormatError> {
    let mut cursor = Cursor { bytes, offset: 0 };
    let magic = cursor.f32()?;
    if magic != MAGIC {
        return Err(IoFormatError::BadMagic {
            format: FORMAT,
            offset: 0,
            expected: format!("{MAGIC}"),
            found: format!("{magic}"),
        });
    }
    let dims_offset = cursor.offset;
    let width = cursor.i32()?;
    let height = cursor.i32()?;
    if width <= 0 || height <= 0 || width as usize > MAX_DIM || height as usize > MAX_DIM {
        return Err(IoFormatError::BadDimensions {
            format: FORMAT,
            offset: dims_offset,
            width: width as i64,
            height: height as i64,
        });
    }
    let (w, h) = (width as usize, height as usize);
    let mut flow = FlowField::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let u = cursor.f32()? as f64;
            let v = cursor.f32()? as f64;
            let valid =
                u.is_finite() && v.is_finite() && u.abs() < UNKNOWN_THRESH && v.abs() < UNKNOWN_THRESH;
            flow.set(x, y, u, v);
            flow.set_valid(x, y, valid);
        }
    }
    Ok(flow)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), IoFormatError> {
    std::fs::write(path, write_flo_bytes(flow)).map_err(|e| IoFormatError::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField, IoFormatError> {
    let bytes = std::fs::read(path).map_err(|e| IoFormatError::io(path, e))?;
    read_flo_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn take4(&mut self) -> Result<[u8; 4], IoFormatError> {
        if self.offset + 4 > self.bytes.len() {
            return Err(IoFormatError::Truncated {
                format: FORMAT,
                offset: self.bytes.len(),
                needed: self.offset + 4 - self.bytes.len(),
            });
        }
        let b = [
            self.bytes[self.offset],
            self.bytes[self.offset + 1],
            self.bytes[self.offset + 2],
            self.bytes[self.offset + 3],
        ];
        self.offset += 4;
        Ok(b)
    }

    fn f32(&mut self) -> Result<f32, IoFormatError> {
        Ok(f32::from_le_bytes(self.take4()?))
    }

    fn i32(&mut self) -> Result<i32, IoFormatError> {
        Ok(i32::from_le_bytes(self.take4()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut flow = FlowField::new(13, 7);
        for y in 0..7 {
            for x in 0..13 {
                // f32-representable values so the f64 storage is exact
                flow.set(x, y, rng.gen::<f32>() as f64 * 20.0 - 10.0, rng.gen::<f32>() as f64);
                if rng.gen::<f64>() < 0.1 {
                    flow.set_valid(x, y, false);
                }
            }
        }
        // clamp stored f64s to f32 grid as the writer would
        for v in flow.uv.iter_mut() {
            *v = *v as f32 as f64;
        }
        let bytes = write_flo_bytes(&flow);
        let back = read_flo_bytes(&bytes).unwrap();
        assert_eq!(back.width, 13);
        assert_eq!(back.height, 7);
        assert_eq!(back.valid, flow.valid);
        for (i, (&a, &b)) in flow.uv.iter().zip(&back.uv).enumerate() {
            if flow.valid[i / 2] {
                assert_eq!(a.to_bits(), b.to_bits(), "component {i}");
            }
        }
        let again = write_flo_bytes(&back);
        assert_eq!(bytes, again, "writer must reproduce the byte stream");
    }

    #[test]
    fn bad_magic_names_expected_value() {
        let mut bytes = write_flo_bytes(&FlowField::new(2, 2));
        bytes[0] ^= 0xff;
        let err = read_flo_bytes(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("202021.25"), "{msg}");
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = write_flo_bytes(&FlowField::new(4, 4));
        let err = read_flo_bytes(&bytes[..20]).unwrap_err();
        match err {
            IoFormatError::Truncated { offset, .. } => assert_eq!(offset, 20),
            other => panic!("expected truncation, got {other}"),
        }
    }

    #[test]
    fn hostile_dimensions_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC.to_le_bytes());
        bytes.extend_from_slice(&(i32::MAX).to_le_bytes());
        bytes.extend_from_slice(&4i32.to_le_bytes());
        assert!(matches!(
            read_flo_bytes(&bytes),
            Err(IoFormatError::BadDimensions { .. })
        ));
    }
}
