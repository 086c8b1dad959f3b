//! Lifting 2-D flow correspondences to paired 3-D points.
//!
//! A flow field maps pixel `p` of frame A to `p' = p + V(p)` in frame B.
//! Both frames carry rendered expected-termination maps (3-D points in each
//! camera's own frame) and opacity maps. A correspondence survives when its
//! flow is valid, `p'` lands inside the image, and both endpoints are
//! opaque enough to trust the termination point. Frame-A points are read at
//! pixel centres; frame-B points are sampled bilinearly at `p'`, so
//! gradients flow back into both surface maps (and from there into poses
//! and field parameters).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::flow::FlowField;
use crate::autodiff::{Tensor, TensorError};

/// Paired camera-frame points and the pixels they came from.
#[derive(Debug, Clone)]
pub struct Correspondences {
    /// `[n, 3]` frame-A points at pixel centres.
    pub x: Tensor,
    /// `[n, 3]` frame-B points bilinearly sampled at `p'`.
    pub xp: Tensor,
    /// `[n, 1]` frame-A opacity at the source pixel.
    pub opacity_a: Tensor,
    /// `[n, 1]` frame-B opacity sampled at `p'`.
    pub opacity_b: Tensor,
    /// Integer source pixels `(x, y)` in frame A.
    pub pix_a: Vec<(usize, usize)>,
    /// Subpixel targets `(x, y)` in frame B.
    pub pix_b: Vec<(f64, f64)>,
    pub width: usize,
    pub height: usize,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pix_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pix_a.is_empty()
    }

    /// `[n, 2]` constant tensor of the observed targets `p'`.
    pub fn pix_b_tensor(&self) -> Tensor {
        let mut v = Vec::with_capacity(self.pix_b.len() * 2);
        for &(x, y) in &self.pix_b {
            v.push(x);
            v.push(y);
        }
        Tensor::constant(v, &[self.pix_b.len(), 2])
    }

    /// `[n, 2]` constant tensor of the integer source pixels.
    pub fn pix_a_tensor(&self) -> Tensor {
        let mut v = Vec::with_capacity(self.pix_a.len() * 2);
        for &(x, y) in &self.pix_a {
            v.push(x as f64);
            v.push(y as f64);
        }
        Tensor::constant(v, &[self.pix_a.len(), 2])
    }
}

/// Plain bilinear read of channel `ch` from a `[h, w, c]` value slice,
/// clamped to the border (used for untracked gating decisions only).
fn bilin_value(map: &[f64], w: usize, h: usize, c: usize, ch: usize, x: f64, y: f64) -> f64 {
    let look = |xi: usize, yi: usize| map[(yi * w + xi) * c + ch];
    let clamp = |v: f64, hi: usize| -> (usize, usize, f64) {
        if v <= 0.0 {
            (0, 0, 0.0)
        } else if v >= (hi - 1) as f64 {
            (hi - 1, hi - 1, 0.0)
        } else {
            let i = v.floor() as usize;
            (i, i + 1, v - i as f64)
        }
    };
    let (x0, x1, fx) = clamp(x, w);
    let (y0, y1, fy) = clamp(y, h);
    let top = look(x0, y0) * (1.0 - fx) + look(x1, y0) * fx;
    let bot = look(x0, y1) * (1.0 - fx) + look(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Build correspondences from per-frame renders and a flow field.
///
/// `surface_*` are `[h*w, 3]`, `opacity_*` are `[h*w, 1]`, row-major pixel
/// order matching `flow` (which has the same `h` x `w`). Pixels whose flow
/// is invalid, whose target leaves the image, or whose endpoint opacity
/// falls below `min_opacity` are dropped. If more than `max_count` survive,
/// a seeded uniform subsample keeps exactly `max_count` (in stable pixel
/// order). Errors if fewer than 3 survive.
pub fn lift_correspondences(
    surface_a: &Tensor,
    opacity_a: &Tensor,
    surface_b: &Tensor,
    opacity_b: &Tensor,
    flow: &FlowField,
    min_opacity: f64,
    max_count: usize,
    seed: u64,
) -> Result<Correspondences, TensorError> {
    let (w, h) = (flow.width, flow.height);
    let hw = w * h;
    for (name, t, cols) in [
        ("surface_a", surface_a, 3),
        ("opacity_a", opacity_a, 1),
        ("surface_b", surface_b, 3),
        ("opacity_b", opacity_b, 1),
    ] {
        if t.shape() != [hw, cols] {
            return Err(TensorError::InvalidArgument {
                op: "lift_correspondences",
                msg: format!(
                    "{name} has shape {:?}, expected [{hw}, {cols}] for a {w}x{h} flow",
                    t.shape()
                ),
            });
        }
    }

    let oa = opacity_a.values();
    let ob = opacity_b.values();
    let mut rows: Vec<usize> = Vec::new();
    let mut targets: Vec<(f64, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !flow.is_valid(x, y) {
                continue;
            }
            let (u, v) = flow.at(x, y);
            let px = x as f64 + u;
            let py = y as f64 + v;
            if !(px >= 0.0 && px <= (w - 1) as f64 && py >= 0.0 && py <= (h - 1) as f64) {
                continue;
            }
            let idx = y * w + x;
            if oa[idx] < min_opacity {
                continue;
            }
            if bilin_value(ob, w, h, 1, 0, px, py) < min_opacity {
                continue;
            }
            rows.push(idx);
            targets.push((px, py));
        }
    }

    if rows.len() > max_count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, rows.len(), max_count).into_vec();
        keep.sort_unstable();
        rows = keep.iter().map(|&k| rows[k]).collect();
        targets = keep.iter().map(|&k| targets[k]).collect();
    }
    let n = rows.len();
    if n < 3 {
        return Err(TensorError::InvalidArgument {
            op: "lift_correspondences",
            msg: format!(
                "only {n} confident correspondences survive (need at least 3); \
                 check flow validity and opacity"
            ),
        });
    }

    let x = surface_a.gather_rows(&rows)?;
    let opa = opacity_a.gather_rows(&rows)?;
    let mut coord_v = Vec::with_capacity(n * 2);
    for &(px, py) in &targets {
        coord_v.push(px);
        coord_v.push(py);
    }
    let coords = Tensor::constant(coord_v, &[n, 2]);
    let xp = surface_b.reshape(&[h, w, 3])?.bilinear_sample(&coords)?;
    let opb = opacity_b.reshape(&[h, w, 1])?.bilinear_sample(&coords)?;
    let pix_a = rows.iter().map(|&i| (i % w, i / w)).collect();

    Ok(Correspondences {
        x,
        xp,
        opacity_a: opa,
        opacity_b: opb,
        pix_a,
        pix_b: targets,
        width: w,
        height: h,
    })
}
