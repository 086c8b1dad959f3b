//! Dense 2-D flow fields with per-pixel validity.

/// Backward optical flow: `uv[(y, x)]` displaces pixel `(x, y)` of the later
/// frame to its position in the earlier frame, `p' = p + V(p)`.
///
/// Values follow the Middlebury convention on disk: components with
/// magnitude above `1e9` mark unknown flow; in memory those pixels carry
/// `valid = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// `[h, w, 2]` row-major `(u, v)` pairs.
    pub uv: Vec<f64>,
    /// `[h, w]` row-major.
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> FlowField {
        FlowField {
            width,
            height,
            uv: vec![0.0; width * height * 2],
            valid: vec![true; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.uv[i], self.uv[i + 1])
    }

    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = (y * self.width + x) * 2;
        self.uv[i] = u;
        self.uv[i + 1] = v;
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set_valid(&mut self, x: usize, y: usize, valid: bool) {
        self.valid[y * self.width + x] = valid;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// The same flow at `1/factor` resolution: nearest-neighbour lookup at
    /// the pixel-center-aligned source position, displacement vectors scaled
    /// by `1/factor`, validity carried over.
    pub fn downsampled(&self, factor: usize) -> FlowField {
        if factor <= 1 {
            return self.clone();
        }
        let f = factor as f64;
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = FlowField::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let sx = ((((x as f64 + 0.5) * f - 0.5).round() as usize).max(0)).min(self.width - 1);
                let sy = ((((y as f64 + 0.5) * f - 0.5).round() as usize).max(0)).min(self.height - 1);
                let (u, v) = self.at(sx, sy);
                out.set(x, y, u / f, v / f);
                out.set_valid(x, y, self.is_valid(sx, sy));
            }
        }
        out
    }
}
