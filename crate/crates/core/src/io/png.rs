//! 8-bit PNG I/O for rendered frames and masks.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use super::IoFormatError;

/// Save a `[h, w, 3]` row-major buffer of `[0, 1]` floats as 8-bit RGB.
/// Values are clamped, then rounded to the nearest of the 256 levels.
pub fn save_rgb8(path: &Path, data: &[f64], width: usize, height: usize) -> Result<(), IoFormatError> {
    assert_eq!(data.len(), width * height * 3);
    let mut img = RgbImage::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let base = (y * width + x) * 3;
            let px = image::Rgb([
                quantize(data[base]),
                quantize(data[base + 1]),
                quantize(data[base + 2]),
            ]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path).map_err(|e| IoFormatError::Malformed {
        format: "png",
        offset: 0,
        msg: format!("{}: {e}", path.display()),
    })
}

/// Load an 8-bit RGB PNG into `[h, w, 3]` floats in `[0, 1]`.
pub fn load_rgb8(path: &Path) -> Result<(Vec<f64>, usize, usize), IoFormatError> {
    let img = ImageReader::open(path)
        .map_err(|e| IoFormatError::io(path, e))?
        .decode()
        .map_err(|e| IoFormatError::Malformed {
            format: "png",
            offset: 0,
            msg: format!("{}: {e}", path.display()),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                data.push(px[c] as f64 / 255.0);
            }
        }
    }
    Ok((data, w, h))
}

/// Save a `[h, w]` buffer of `[0, 1]` floats as 8-bit grayscale.
pub fn save_gray8(path: &Path, data: &[f64], width: usize, height: usize) -> Result<(), IoFormatError> {
    assert_eq!(data.len(), width * height);
    let mut img = GrayImage::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            img.put_pixel(x as u32, y as u32, image::Luma([quantize(data[y * width + x])]));
        }
    }
    img.save(path).map_err(|e| IoFormatError::Malformed {
        format: "png",
        offset: 0,
        msg: format!("{}: {e}", path.display()),
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_roundtrip_within_quantization() {
        let dir = std::env::temp_dir().join("parallax_png_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i as f64 * 0.037) % 1.0).collect();
        save_rgb8(&path, &data, 3, 4).unwrap();
        let (back, w, h) = load_rgb8(&path).unwrap();
        assert_eq!((w, h), (3, 4));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9, "{a} vs {b}");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn identical_input_gives_identical_bytes() {
        let dir = std::env::temp_dir().join("parallax_png_test");
        std::fs::create_dir_all(&dir).unwrap();
        let (p1, p2) = (dir.join("a.png"), dir.join("b.png"));
        let data: Vec<f64> = (0..5 * 5 * 3).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        save_rgb8(&p1, &data, 5, 5).unwrap();
        save_rgb8(&p2, &data, 5, 5).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_file(&p1).ok();
        std::fs::remove_file(&p2).ok();
    }
}
