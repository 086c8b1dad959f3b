//! Differentiable volume rendering.
//!
//! Rays are integrated with the standard emission-absorption model on a
//! stratified midpoint grid: sample distances `t_j = near + (j + u_j) * dt`
//! with `dt = (far - near) / n_samples` and `u_j = 0.5` (or uniform jitter),
//! per-sample optical thickness `a_j = sigma_j * dt`, transmittance
//! `T_j = exp(-sum of a before j)`, and weights `w_j = T_j (1 - exp(-a_j))`.
//! Outputs per ray: accumulated colour, the expected termination point
//! `sum_j w_j x_j` (in the ray's own frame), the expected termination
//! distance `sum_j w_j t_j`, and opacity `sum_j w_j`.
//!
//! Rays may be given in a camera frame together with a camera-to-world
//! pose; field queries then run on transformed points, and because the
//! transform is graph-tracked, gradients reach the pose as well as the
//! field parameters.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, TensorError};
use crate::fields::Field;
use crate::geometry::{Intrinsics, PoseTensor, Ray};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    /// Jitter sample positions inside their strata (seeded per ray).
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_samples: 32,
            near: 0.3,
            far: 6.0,
            jitter: false,
            seed: 0,
        }
    }
}

/// Per-ray render outputs, flattened over the ray batch.
pub struct Rendered {
    /// `[n, 3]` accumulated colour.
    pub color: Tensor,
    /// `[n, 3]` expected termination point in the ray frame.
    pub surface: Tensor,
    /// `[n, 1]` expected termination distance along the (unit) direction.
    pub depth: Tensor,
    /// `[n, 1]` accumulated opacity in `[0, 1]`.
    pub opacity: Tensor,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn unit_float(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Integrate `rays` through `field`. `to_world` maps the ray frame into the
/// field's frame (identity if `None`); `ray_id_offset + i` seeds ray `i`'s
/// jitter so a ray's samples do not depend on how the batch is split.
pub fn render_rays(
    field: &dyn Field,
    rays: &[Ray],
    to_world: Option<&PoseTensor>,
    cfg: &RenderConfig,
    ray_id_offset: u64,
) -> Result<Rendered, TensorError> {
    let n = rays.len();
    let s = cfg.n_samples;
    if n == 0 || s == 0 {
        return Err(TensorError::InvalidArgument {
            op: "render_rays",
            msg: format!("need at least one ray and one sample, got {n} rays, {s} samples"),
        });
    }
    if !(cfg.far > cfg.near) {
        return Err(TensorError::InvalidArgument {
            op: "render_rays",
            msg: format!("far ({}) must exceed near ({})", cfg.far, cfg.near),
        });
    }
    let dt = (cfg.far - cfg.near) / s as f64;

    let mut ts = Vec::with_capacity(n * s);
    let mut pts = Vec::with_capacity(n * s * 3);
    for (i, ray) in rays.iter().enumerate() {
        let mut state = cfg.seed ^ splitmix64(ray_id_offset + i as u64);
        for j in 0..s {
            let u = if cfg.jitter {
                state = splitmix64(state);
                unit_float(state)
            } else {
                0.5
            };
            let t = cfg.near + (j as f64 + u) * dt;
            ts.push(t);
            let p = ray.origin + ray.dir * t;
            pts.push(p.x);
            pts.push(p.y);
            pts.push(p.z);
        }
    }
    let ray_points = Tensor::constant(pts, &[n * s, 3]);
    let query_points = match to_world {
        Some(pose) => pose.transform_points(&ray_points)?,
        None => ray_points.clone(),
    };
    let (sigma, rgb) = field.query(&query_points)?;
    if sigma.shape() != [n * s, 1] || rgb.shape() != [n * s, 3] {
        return Err(TensorError::InvalidArgument {
            op: "render_rays",
            msg: format!(
                "field returned sigma {:?}, rgb {:?} for {} points",
                sigma.shape(),
                rgb.shape(),
                n * s
            ),
        });
    }

    // a_j = sigma_j * dt; T = exp(-exclusive cumsum a); w = T (1 - exp(-a)).
    let a = sigma.reshape(&[n, s])?.scale(dt);
    let trans = a.cumsum_exclusive(1)?.neg().exp();
    let alpha = a.neg().exp().neg().add_scalar(1.0);
    let w = trans.mul(&alpha)?;

    let opacity = w.sum_axis(1)?;
    let t_tensor = Tensor::constant(ts, &[n, s]);
    let depth = w.mul(&t_tensor)?.sum_axis(1)?;
    let w_col = w.reshape(&[n * s, 1])?;
    let color = rgb
        .mul(&w_col)?
        .reshape(&[n, s, 3])?
        .sum_axis(1)?
        .reshape(&[n, 3])?;
    let surface = ray_points
        .mul(&w_col)?
        .reshape(&[n, s, 3])?
        .sum_axis(1)?
        .reshape(&[n, 3])?;

    Ok(Rendered {
        color,
        surface,
        depth,
        opacity,
    })
}

/// Render a full image through the camera: one ray per pixel centre, in
/// row-major pixel order, jitter-seeded by pixel index. `pose` is the
/// camera-to-world transform (identity if `None`); outputs stay `[h*w, _]`.
pub fn render_image(
    field: &dyn Field,
    intrinsics: &Intrinsics,
    pose: Option<&PoseTensor>,
    cfg: &RenderConfig,
) -> Result<Rendered, TensorError> {
    let mut rays = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for y in 0..intrinsics.height {
        for x in 0..intrinsics.width {
            rays.push(Ray {
                origin: nalgebra::Vector3::zeros(),
                dir: intrinsics.pixel_dir(x as f64, y as f64),
            });
        }
    }
    render_rays(field, &rays, pose, cfg, 0)
}
