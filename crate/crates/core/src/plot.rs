//! Static PNG plots: loss curves and top-down trajectory views.
//!
//! Everything is rasterized directly onto an RGB canvas — polylines, a
//! framed plot area, numeric extent labels in a tiny built-in digit font —
//! and written through the crate's own PNG writer, so plots stay
//! deterministic byte-for-byte.

use std::path::Path;

use thiserror::Error;

use crate::io::{save_rgb8, IoFormatError};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] IoFormatError),
}

pub type Color = [f64; 3];

pub const INK: Color = [0.15, 0.17, 0.20];
pub const GRID: Color = [0.85, 0.86, 0.88];
pub const SERIES_A: Color = [0.12, 0.35, 0.80];
pub const SERIES_B: Color = [0.85, 0.45, 0.10];

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Canvas {
        Canvas {
            w,
            h,
            px: vec![1.0; w * h * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: Color) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = 3 * (y as usize * self.w + x as usize);
        self.px[i..i + 3].copy_from_slice(&c);
    }

    /// Solid line from `(x0, y0)` to `(x1, y1)` in plot coordinates,
    /// clipped per pixel.
    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: Color) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = x0 + t * (x1 - x0);
            let y = y0 + t * (y1 - y0);
            self.set(x.round() as i64, y.round() as i64, c);
        }
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: Color) {
        self.line(x0, y0, x1, y0, c);
        self.line(x1, y0, x1, y1, c);
        self.line(x1, y1, x0, y1, c);
        self.line(x0, y1, x0, y0, c);
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, c: Color) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, c);
            }
        }
    }

    /// 3x5 digit font, 1-pixel advance gap; enough for numeric labels.
    fn glyph(ch: char) -> Option<[u8; 5]> {
        // Each row is a 3-bit mask, most significant bit on the left.
        Some(match ch {
            '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
            '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
            '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
            '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
            '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
            '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
            '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
            '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
            '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
            '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
            '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
            '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
            '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
            'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
            'x' => [0b000, 0b101, 0b010, 0b101, 0b000],
            'z' => [0b000, 0b111, 0b010, 0b100, 0b111],
            's' => [0b011, 0b100, 0b010, 0b001, 0b110],
            't' => [0b010, 0b111, 0b010, 0b010, 0b011],
            'p' => [0b110, 0b101, 0b110, 0b100, 0b100],
            'l' => [0b100, 0b100, 0b100, 0b100, 0b011],
            'o' => [0b000, 0b111, 0b101, 0b101, 0b111],
            ' ' => [0, 0, 0, 0, 0],
            _ => return None,
        })
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: Color) {
        let mut cx = x;
        for ch in s.chars() {
            if let Some(rows) = Canvas::glyph(ch) {
                for (dy, row) in rows.iter().enumerate() {
                    for dx in 0..3 {
                        if row & (0b100 >> dx) != 0 {
                            self.set(cx + dx as i64, y + dy as i64, c);
                        }
                    }
                }
            }
            cx += 4;
        }
    }

    fn save(&self, path: &Path) -> Result<(), IoFormatError> {
        save_rgb8(path, &self.px, self.w, self.h)
    }
}

/// Compact numeric label: plain decimal in a friendly range, scientific
/// notation outside it.
fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    let pad = (hi - lo).abs().max(1e-12) * 0.05;
    (lo - pad, hi + pad)
}

/// Render `series` as a line chart of value against index (one point per
/// step) and write it as a PNG.
pub fn loss_curve_png(path: &Path, series: &[f64]) -> Result<(), PlotError> {
    if series.is_empty() {
        return Err(PlotError::Empty("loss curve has no points"));
    }
    let (w, h) = (640usize, 400usize);
    let (ml, mr, mt, mb) = (56.0, 16.0, 16.0, 28.0);
    let mut cv = Canvas::new(w, h);

    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = span(lo, hi);
    let x_of = |i: usize| {
        ml + (w as f64 - ml - mr) * if series.len() == 1 {
            0.5
        } else {
            i as f64 / (series.len() - 1) as f64
        }
    };
    let y_of = |v: f64| (h as f64 - mb) - (h as f64 - mt - mb) * (v - lo) / (hi - lo);

    // Horizontal gridlines at quarter heights, with value labels.
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        cv.line(ml, y, w as f64 - mr, y, GRID);
        cv.text(4, y as i64 - 2, &label(v), INK);
    }
    cv.rect(ml, mt, w as f64 - mr, h as f64 - mb, INK);

    for i in 1..series.len() {
        cv.line(x_of(i - 1), y_of(series[i - 1]), x_of(i), y_of(series[i]), SERIES_A);
    }
    cv.text(ml as i64, h as i64 - 8, "step", INK);
    cv.text(
        w as i64 - mr as i64 - 4 * label(series.len() as f64 - 1.0).len() as i64,
        h as i64 - 8,
        &label(series.len() as f64 - 1.0),
        INK,
    );
    cv.text(ml as i64 + 8, mt as i64 + 4, "loss", INK);
    cv.save(path)?;
    Ok(())
}

/// Top-down (x against z) view of one or two camera paths — typically the
/// estimate and the ground truth — drawn with a shared equal-aspect scale.
/// Each path is a polyline with a filled square at its starting position.
pub fn trajectory_topdown_png(
    path: &Path,
    estimate: &[[f64; 3]],
    reference: Option<&[[f64; 3]]>,
) -> Result<(), PlotError> {
    if estimate.is_empty() {
        return Err(PlotError::Empty("trajectory has no poses"));
    }
    let (w, h) = (480usize, 480usize);
    let (ml, mr, mt, mb) = (56.0, 16.0, 16.0, 28.0);
    let mut cv = Canvas::new(w, h);

    let all = estimate.iter().chain(reference.into_iter().flatten());
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut z_lo = f64::INFINITY;
    let mut z_hi = f64::NEG_INFINITY;
    for p in all {
        x_lo = x_lo.min(p[0]);
        x_hi = x_hi.max(p[0]);
        z_lo = z_lo.min(p[2]);
        z_hi = z_hi.max(p[2]);
    }
    let (x_lo, x_hi) = span(x_lo, x_hi);
    let (z_lo, z_hi) = span(z_lo, z_hi);

    // One scale for both axes, centered.
    let avail_x = w as f64 - ml - mr;
    let avail_z = h as f64 - mt - mb;
    let scale = (avail_x / (x_hi - x_lo)).min(avail_z / (z_hi - z_lo));
    let cx = ml + avail_x / 2.0;
    let cz = mt + avail_z / 2.0;
    let x_of = |x: f64| cx + (x - (x_lo + x_hi) / 2.0) * scale;
    // +z up the image.
    let y_of = |z: f64| cz - (z - (z_lo + z_hi) / 2.0) * scale;

    cv.rect(ml, mt, w as f64 - mr, h as f64 - mb, INK);
    for k in 0..=4 {
        let v = z_lo + (z_hi - z_lo) * k as f64 / 4.0;
        cv.text(4, y_of(v) as i64 - 2, &label(v), INK);
    }
    cv.text(ml as i64, h as i64 - 8, &label(x_lo), INK);
    cv.text(
        w as i64 - mr as i64 - 4 * label(x_hi).len() as i64,
        h as i64 - 8,
        &label(x_hi),
        INK,
    );
    cv.text(4, mt as i64, "z", INK);
    cv.text(w as i64 / 2, h as i64 - 8, "x", INK);

    let mut draw = |pts: &[[f64; 3]], c: Color| {
        for i in 1..pts.len() {
            cv.line(
                x_of(pts[i - 1][0]),
                y_of(pts[i - 1][2]),
                x_of(pts[i][0]),
                y_of(pts[i][2]),
                c,
            );
        }
        let sx = x_of(pts[0][0]) as i64;
        let sy = y_of(pts[0][2]) as i64;
        cv.fill_rect(sx - 2, sy - 2, 5, 5, c);
    };
    if let Some(r) = reference {
        draw(r, SERIES_B);
    }
    draw(estimate, SERIES_A);
    cv.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::load_rgb8;

    #[test]
    fn plots_are_written_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let curve = dir.path().join("curve.png");
        let series: Vec<f64> = (0..200).map(|i| (-(i as f64) / 60.0).exp() + 0.1).collect();
        loss_curve_png(&curve, &series).unwrap();
        let (px, w, h) = load_rgb8(&curve).unwrap();
        assert_eq!((w, h), (640, 400));
        // Something was actually drawn.
        assert!(px.iter().any(|&v| v < 0.99));

        let again = dir.path().join("curve2.png");
        loss_curve_png(&again, &series).unwrap();
        assert_eq!(
            std::fs::read(&curve).unwrap(),
            std::fs::read(&again).unwrap(),
            "identical inputs must produce byte-identical plots"
        );

        let traj = dir.path().join("traj.png");
        let est: Vec<[f64; 3]> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.1;
                [t.sin(), 0.0, t.cos()]
            })
            .collect();
        let gt: Vec<[f64; 3]> = est.iter().map(|p| [p[0] + 0.02, p[1], p[2]]).collect();
        trajectory_topdown_png(&traj, &est, Some(&gt)).unwrap();
        assert!(traj.exists());
    }

    #[test]
    fn empty_series_is_an_error_not_a_panic() {
        let dir = tempfile::tempdir().unwrap();
        assert!(loss_curve_png(&dir.path().join("x.png"), &[]).is_err());
        assert!(trajectory_topdown_png(&dir.path().join("y.png"), &[], None).is_err());
    }
}
