//! PFM float images (`Pf` grayscale, `PF` 3-channel).
//!
//! Header: magic, `width height`, and a scale whose sign encodes endianness
//! (negative = little-endian, the only byte order we write). Pixel rows are
//! stored bottom-to-top per the format convention; the in-memory image is
//! top-down.

use std::path::Path;

use super::{IoFormatError, MAX_DIM};

const FORMAT: &str = "pfm";

/// Float image, top-down row-major, `channels` interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize, // 1 or 3
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn new(width: usize, height: usize, channels: usize) -> PfmImage {
        assert!(channels == 1 || channels == 3, "PFM supports 1 or 3 channels");
        PfmImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

pub fn write_pfm_bytes(img: &PfmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row_len = img.width * img.channels;
    for y in (0..img.height).rev() {
        let row = &img.data[y * row_len..(y + 1) * row_len];
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm_bytes(bytes: &[u8]) -> Result<PfmImage, IoFormatError> {
    let mut cursor = 0usize;
    let magic = header_token(bytes, &mut cursor)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(IoFormatError::BadMagic {
                format: FORMAT,
                offset: 0,
                expected: "PF or Pf".into(),
                found: other.chars().take(8).collect(),
            })
        }
    };
    let dims_offset = cursor;
    let width: i64 = parse_token(bytes, &mut cursor, "width")?;
    let height: i64 = parse_token(bytes, &mut cursor, "height")?;
    if width <= 0 || height <= 0 || width as usize > MAX_DIM || height as usize > MAX_DIM {
        return Err(IoFormatError::BadDimensions {
            format: FORMAT,
            offset: dims_offset,
            width,
            height,
        });
    }
    let scale_offset = cursor;
    let scale: f64 = parse_token(bytes, &mut cursor, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(IoFormatError::Malformed {
            format: FORMAT,
            offset: scale_offset,
            msg: format!("invalid scale {scale}"),
        });
    }
    let little_endian = scale < 0.0;

    let (w, h) = (width as usize, height as usize);
    let count = w * h * channels;
    let need = count * 4;
    if bytes.len() < cursor + need {
        return Err(IoFormatError::Truncated {
            format: FORMAT,
            offset: bytes.len(),
            needed: cursor + need - bytes.len(),
        });
    }
    let mut img = PfmImage::new(w, h, channels);
    let row_len = w * channels;
    let mut read = cursor;
    for y in (0..h).rev() {
        for i in 0..row_len {
            let b = [bytes[read], bytes[read + 1], bytes[read + 2], bytes[read + 3]];
            read += 4;
            img.data[y * row_len + i] = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(img)
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<(), IoFormatError> {
    std::fs::write(path, write_pfm_bytes(img)).map_err(|e| IoFormatError::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, IoFormatError> {
    let bytes = std::fs::read(path).map_err(|e| IoFormatError::io(path, e))?;
    read_pfm_bytes(&bytes)
}

/// Read one whitespace-delimited header token, consuming exactly one
/// trailing whitespace byte (the separator before binary data).
fn header_token(bytes: &[u8], cursor: &mut usize) -> Result<String, IoFormatError> {
    while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
        if *cursor - start > 32 {
            return Err(IoFormatError::Malformed {
                format: FORMAT,
                offset: start,
                msg: "header token too long".into(),
            });
        }
    }
    if start == *cursor {
        return Err(IoFormatError::Truncated {
            format: FORMAT,
            offset: *cursor,
            needed: 1,
        });
    }
    let token = String::from_utf8_lossy(&bytes[start..*cursor]).into_owned();
    if *cursor < bytes.len() {
        *cursor += 1; // single separator
    }
    Ok(token)
}

fn parse_token<T: std::str::FromStr>(
    bytes: &[u8],
    cursor: &mut usize,
    what: &str,
) -> Result<T, IoFormatError> {
    let offset = *cursor;
    let token = header_token(bytes, cursor)?;
    token.parse().map_err(|_| IoFormatError::Malformed {
        format: FORMAT,
        offset,
        msg: format!("cannot parse {what} from {token:?}"),
    })
}
