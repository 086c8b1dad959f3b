//! Analytic oracle scenes: closed-form density, color, and ray
//! intersections for a handful of primitive shapes. Everything here has an
//! exact answer, which is what makes the renderer and the synthetic data
//! generator testable.

use nalgebra::Vector3;

use super::texture::Texture;
use super::Field;
use crate::autodiff::{Tensor, TensorError};
use crate::geometry::Ray;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Axis-aligned solid box.
    Box {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
    /// Finite textured plane: a disk of `radius` around `center` with unit
    /// `normal`, thickened to `thickness` so it has volume to render.
    Plane {
        center: Vector3<f64>,
        normal: Vector3<f64>,
        radius: f64,
        thickness: f64,
    },
    /// Constant participating medium filling an axis-aligned box; no
    /// surface, density exactly `amplitude` inside.
    Medium {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Peak density inside the shape.
    pub amplitude: f64,
    /// Width of the smooth density ramp just inside the boundary of solid
    /// shapes. Ignored by `Medium` (sharp by definition).
    pub softness: f64,
    pub texture: Texture,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    /// Distance along the (unit) ray direction.
    pub s: f64,
    pub point: Vector3<f64>,
    pub primitive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl Shape {
    /// Signed distance (negative inside). `Medium` uses the box distance.
    fn sdf(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (x - center).norm() - radius,
            Shape::Box { min, max } | Shape::Medium { min, max } => {
                let c = (min + max) * 0.5;
                let h = (max - min) * 0.5;
                let q = (x - c).abs() - h;
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Plane { center, normal, radius, thickness } => {
                let d = x - center;
                let dn = d.dot(normal).abs() - 0.5 * thickness;
                let dr = (d - d.dot(normal) * normal).norm() - radius;
                dn.max(dr)
            }
        }
    }

    /// Smallest positive ray parameter entering the solid region.
    fn entry(&self, ray: &Ray) -> Option<f64> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(&ray.dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let s0 = -b - sq;
                let s1 = -b + sq;
                if s0 > 0.0 {
                    Some(s0)
                } else if s1 > 0.0 {
                    Some(s1) // origin inside: exit point
                } else {
                    None
                }
            }
            Shape::Box { min, max } | Shape::Medium { min, max } => {
                slab_entry(ray, min, max).map(|(s0, _)| s0)
            }
            Shape::Plane { center, normal, radius, thickness } => {
                // Intersect both slab faces; accept the nearest in-extent hit.
                let mut best: Option<f64> = None;
                for side in [-0.5, 0.5] {
                    let plane_point = center + normal * (side * thickness);
                    let denom = ray.dir.dot(normal);
                    if denom.abs() < 1e-12 {
                        continue;
                    }
                    let s = (plane_point - ray.origin).dot(normal) / denom;
                    if s <= 0.0 {
                        continue;
                    }
                    let p = ray.origin + ray.dir * s;
                    let rad = (p - center - (p - center).dot(normal) * normal).norm();
                    if rad <= *radius && best.map_or(true, |b| s < b) {
                        best = Some(s);
                    }
                }
                best
            }
        }
    }

    fn has_surface(&self) -> bool {
        !matches!(self, Shape::Medium { .. })
    }
}

fn slab_entry(ray: &Ray, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let inv = 1.0 / ray.dir[a];
        let (mut near, mut far) = ((min[a] - ray.origin[a]) * inv, (max[a] - ray.origin[a]) * inv);
        if inv < 0.0 {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    if t1 <= 0.0 {
        None
    } else {
        Some((t0.max(0.0), t1))
    }
}

impl Primitive {
    /// Density at a point: `amplitude` deep inside, a smoothstep ramp of
    /// width `softness` just inside the boundary, exactly zero outside.
    pub fn density(&self, x: &Vector3<f64>) -> f64 {
        match &self.shape {
            Shape::Medium { .. } => {
                if self.shape.sdf(x) <= 0.0 {
                    self.amplitude
                } else {
                    0.0
                }
            }
            shape => {
                let depth = -shape.sdf(x);
                if depth <= 0.0 {
                    0.0
                } else if depth >= self.softness {
                    self.amplitude
                } else {
                    let t = depth / self.softness;
                    self.amplitude * t * t * (3.0 - 2.0 * t)
                }
            }
        }
    }
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>) -> AnalyticScene {
        AnalyticScene {
            primitives,
            background: [0.0, 0.0, 0.0],
        }
    }

    /// Density and density-weighted albedo at a point.
    pub fn sigma_albedo(&self, x: &Vector3<f64>) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut color = [0.0; 3];
        for p in &self.primitives {
            let s = p.density(x);
            if s > 0.0 {
                let a = p.texture.albedo(x);
                sigma += s;
                for c in 0..3 {
                    color[c] += s * a[c];
                }
            }
        }
        if sigma > 0.0 {
            for c in color.iter_mut() {
                *c /= sigma;
            }
            (sigma, color)
        } else {
            (0.0, self.background)
        }
    }

    /// Closed-form first surface hit along a ray (media have no surface).
    pub fn first_hit(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if !p.shape.has_surface() {
                continue;
            }
            if let Some(s) = p.shape.entry(ray) {
                if best.as_ref().map_or(true, |b| s < b.s) {
                    best = Some(Hit {
                        s,
                        point: ray.origin + ray.dir * s,
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    /// True when the point is inside any solid (surface-bearing) primitive.
    pub fn inside_solid(&self, x: &Vector3<f64>) -> bool {
        self.primitives
            .iter()
            .any(|p| p.shape.has_surface() && p.shape.sdf(x) < 0.0)
    }

    /// Shaded color of the closest surface: albedo at the hit point; the
    /// exact image the volume renderer approaches as surfaces harden.
    pub fn shade_hit(&self, hit: &Hit) -> [f64; 3] {
        self.primitives[hit.primitive].texture.albedo(&hit.point)
    }

    /// Query with density amplitudes taken from `amps` (one per primitive),
    /// so gradients can flow into the amplitudes; shape profiles and albedo
    /// stay constants. `xs` positions are read as plain values.
    pub fn query_with_amplitudes(
        &self,
        xs: &Tensor,
        amps: &Tensor,
    ) -> Result<(Tensor, Tensor), TensorError> {
        let n = xs.shape()[0];
        let np = self.primitives.len();
        assert_eq!(xs.shape(), &[n, 3], "query: expected [n,3] points");
        assert_eq!(amps.numel(), np, "one amplitude per primitive");
        let xv = xs.values();
        // Unit-amplitude density profile and albedo per (point, primitive).
        let mut prof = vec![0.0; n * np];
        let mut weighted_albedo = vec![0.0; n * np * 3];
        for i in 0..n {
            let x = Vector3::new(xv[i * 3], xv[i * 3 + 1], xv[i * 3 + 2]);
            for (j, p) in self.primitives.iter().enumerate() {
                let unit = Primitive {
                    amplitude: 1.0,
                    ..p.clone()
                };
                let d = unit.density(&x);
                prof[i * np + j] = d;
                if d > 0.0 {
                    let a = p.texture.albedo(&x);
                    for c in 0..3 {
                        weighted_albedo[(i * np + j) * 3 + c] = d * a[c];
                    }
                }
            }
        }
        let prof_t = Tensor::constant(prof, &[n, np]);
        let amps_col = amps.reshape(&[np, 1])?;
        let sigma = prof_t.matmul(&amps_col)?; // [n,1]
        // rgb = sum_j amp_j * prof_j * albedo_j / (sigma + eps)
        let wa = Tensor::constant(weighted_albedo, &[n, np, 3]);
        let amp_b = amps.reshape(&[1, np, 1])?;
        let num = wa.mul(&amp_b)?.sum_axis(1)?.reshape(&[n, 3])?; // [n,3]
        let rgb = num.div(&sigma.add_scalar(1e-12))?;
        Ok((sigma, rgb))
    }
}

impl Field for AnalyticScene {
    fn query(&self, xs: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
        let amps: Vec<f64> = self.primitives.iter().map(|p| p.amplitude).collect();
        let n = amps.len();
        self.query_with_amplitudes(xs, &Tensor::constant(amps, &[n]))
    }
}
