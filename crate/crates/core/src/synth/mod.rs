//! Synthetic-world generation: seeded camera trajectories over analytic
//! scenes with exact ground truth — shaded frames from closed-form ray
//! hits, closed-form z-depth, backward optical flow, occlusion masks —
//! plus controlled flow corruption. Everything downstream (pose solving,
//! odometry, training) is verified against data produced here: flow,
//! depth, and poses are consistent by construction, and that consistency
//! is re-checked by reprojection.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{load_scene, save_scene_string, AnalyticScene, SceneFileError};
use crate::geometry::{rotation_exp, rotation_geodesic, Intrinsics, Ray, SE3Pose, Trajectory};
use crate::io::{
    load_rgb8, read_flo, read_pfm, read_tum, save_gray8, save_rgb8, write_flo, write_pfm,
    write_tum, IoFormatError, PfmImage,
};
use crate::sceneflow::FlowField;

/// Relative z-depth disagreement beyond which a reprojected pixel is
/// declared occluded.
pub const OCCLUSION_REL_TOL: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("trajectory needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {frame}: camera at ({x:.3}, {y:.3}, {z:.3}) is inside solid geometry")]
    CameraInsideGeometry { frame: usize, x: f64, y: f64, z: f64 },
    #[error("frame {frame}: step rotation {angle:.5} rad exceeds the configured bound {bound:.5}")]
    RotationBound { frame: usize, angle: f64, bound: f64 },
    #[error("trajectory target must not coincide with the camera start position")]
    DegenerateTarget,
    #[error("bundle at {0}: {1}")]
    BadBundle(String, String),
    #[error(transparent)]
    Format(#[from] IoFormatError),
    #[error(transparent)]
    Scene(#[from] SceneFileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Arc around the target point at constant distance, always looking at it.
    Orbit,
    /// Pure forward translation toward the target; constant orientation.
    Dolly,
    /// Mostly panning, with a small lateral translation.
    RotationDominant,
    /// Seeded smooth random walk in body-frame velocity space.
    SmoothRandom,
}

impl FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orbit" => Ok(TrajectoryKind::Orbit),
            "dolly" | "forward-dolly" => Ok(TrajectoryKind::Dolly),
            "rotation" | "rotation-dominant" => Ok(TrajectoryKind::RotationDominant),
            "smooth" | "smooth-random" | "random-smooth" => Ok(TrajectoryKind::SmoothRandom),
            other => Err(format!(
                "unknown trajectory kind `{other}` (expected orbit, dolly, rotation, or smooth)"
            )),
        }
    }
}

/// Seeded recipe for a camera path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    /// Translation per step in world units (for orbit: arc length).
    pub step: f64,
    /// Hard upper bound on the rotation between consecutive frames, radians.
    pub max_step_rotation: f64,
    /// Point the motion is organized around: orbit centre, dolly
    /// destination, initial look-at. The camera starts at the origin.
    pub target: [f64; 3],
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::Orbit,
            frames: 15,
            step: 0.05,
            max_step_rotation: 0.15,
            target: [0.0, 0.0, 2.5],
            seed: 0,
        }
    }
}

/// Camera-to-world rotation looking from `eye` toward `target`: camera x
/// right, y down, z forward, with y kept as close to world +y as the view
/// direction allows.
fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let mut hint = Vector3::new(0.0, 1.0, 0.0);
    if hint.cross(&z).norm() < 1e-9 {
        hint = Vector3::new(0.0, 0.0, 1.0);
    }
    let x = hint.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Generate the camera-to-world pose sequence described by `spec`. The
/// camera starts at the origin; every consecutive pair is checked against
/// the rotation bound.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<SE3Pose>, SynthError> {
    if spec.frames < 2 {
        return Err(SynthError::TooFewFrames(spec.frames));
    }
    let target = Vector3::new(spec.target[0], spec.target[1], spec.target[2]);
    let poses: Vec<SE3Pose> = match spec.kind {
        TrajectoryKind::Orbit => {
            let radius = target.norm();
            if radius < 1e-9 {
                return Err(SynthError::DegenerateTarget);
            }
            let theta_step = spec.step / radius;
            (0..spec.frames)
                .map(|i| {
                    let spin = rotation_exp(Vector3::new(0.0, theta_step * i as f64, 0.0));
                    let eye = target + spin * (-target);
                    SE3Pose::new(look_at(&eye, &target), eye)
                })
                .collect()
        }
        TrajectoryKind::Dolly => {
            let dist = target.norm();
            if dist < 1e-9 {
                return Err(SynthError::DegenerateTarget);
            }
            let dir = target / dist;
            let rot = look_at(&Vector3::zeros(), &target);
            (0..spec.frames)
                .map(|i| SE3Pose::new(rot, dir * (spec.step * i as f64)))
                .collect()
        }
        TrajectoryKind::RotationDominant => {
            let phi = 0.8 * spec.max_step_rotation;
            (0..spec.frames)
                .map(|i| {
                    let t = i as f64;
                    SE3Pose::new(
                        rotation_exp(Vector3::new(0.0, phi * t, 0.0)),
                        Vector3::new(0.25 * spec.step * t, 0.0, 0.0),
                    )
                })
                .collect()
        }
        TrajectoryKind::SmoothRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let rot0 = if target.norm() < 1e-9 {
                Matrix3::identity()
            } else {
                look_at(&Vector3::zeros(), &target)
            };
            let mut poses = vec![SE3Pose::new(rot0, Vector3::zeros())];
            let mut vel = Vector3::zeros();
            let mut omega = Vector3::zeros();
            let draw = |rng: &mut ChaCha8Rng| {
                Vector3::new(
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                )
            };
            for i in 1..spec.frames {
                vel = vel * 0.7 + draw(&mut rng) * 0.3;
                omega = omega * 0.7 + draw(&mut rng) * 0.3;
                // body-frame step, clamped so per-step magnitudes stay bounded
                let t_step = vel / vel.norm().max(1.0) * spec.step;
                let w_step = omega / omega.norm().max(1.0) * (0.7 * spec.max_step_rotation);
                let delta = SE3Pose::new(rotation_exp(w_step), t_step);
                poses.push(poses[i - 1].compose(&delta).renormalized());
            }
            poses
        }
    };
    for i in 1..poses.len() {
        let rel = poses[i - 1].inverse().compose(&poses[i]);
        let angle = rotation_geodesic(&rel.rotation, &Matrix3::identity());
        if angle > spec.max_step_rotation + 1e-9 {
            return Err(SynthError::RotationBound {
                frame: i,
                angle,
                bound: spec.max_step_rotation,
            });
        }
    }
    Ok(poses)
}

/// Complete synthetic ground truth for one camera sweep over a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub intrinsics: Intrinsics,
    pub scene: AnalyticScene,
    /// Camera-to-world pose per frame, stamped by frame index.
    pub trajectory: Trajectory,
    /// `[h, w, 3]` exact shaded colour per frame, values in `[0, 1]`:
    /// albedo of the first surface through each pixel centre, scene
    /// background where the ray escapes. This is the image the volume
    /// renderer converges to as surfaces harden and sampling refines, free
    /// of quadrature noise, so it is multi-view consistent to
    /// floating-point accuracy.
    pub frames: Vec<Vec<f64>>,
    /// `[h, w]` z-depth of the first surface along each pixel ray; `+inf`
    /// where the ray escapes to the background.
    pub depths: Vec<Vec<f64>>,
    /// `flows[i]` is the backward flow of frame `i + 1` into frame `i`.
    pub flows: Vec<FlowField>,
    /// `occlusion[i][p]`: pixel `p` of frame `i + 1` has no usable
    /// correspondence in frame `i` (occluded, out of view, or background).
    /// Always the complement of `flows[i].valid`.
    pub occlusion: Vec<Vec<bool>>,
    /// The recipe that produced the trajectory, when one was used.
    pub spec: Option<TrajectorySpec>,
}

/// Camera-frame point of pixel `(px, py)` at z-depth `z`.
pub fn backproject_pixel(intrinsics: &Intrinsics, px: f64, py: f64, z: f64) -> Vector3<f64> {
    Vector3::new(
        (px - intrinsics.cx) / intrinsics.fx * z,
        (py - intrinsics.cy) / intrinsics.fy * z,
        z,
    )
}

/// Closed-form z-depth of the first surface through every pixel centre.
pub fn depth_map(scene: &AnalyticScene, intrinsics: &Intrinsics, pose: &SE3Pose) -> Vec<f64> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut out = vec![f64::INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            let dir_cam = intrinsics.pixel_dir(x as f64, y as f64);
            let ray = Ray {
                origin: pose.translation,
                dir: pose.rotation * dir_cam,
            };
            if let Some(hit) = scene.first_hit(&ray) {
                out[y * w + x] = hit.s * dir_cam.z;
            }
        }
    }
    out
}

/// Exact image of the scene under hard-surface shading: per-pixel albedo of
/// the closed-form first hit through the pixel centre, scene background
/// where the ray escapes. Row-major `[h, w, 3]` in `[0, 1]`.
pub fn shaded_image(scene: &AnalyticScene, intrinsics: &Intrinsics, pose: &SE3Pose) -> Vec<f64> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let dir_cam = intrinsics.pixel_dir(x as f64, y as f64);
            let ray = Ray {
                origin: pose.translation,
                dir: pose.rotation * dir_cam,
            };
            let rgb = match scene.first_hit(&ray) {
                Some(hit) => scene.shade_hit(&hit),
                None => scene.background,
            };
            let i = (y * w + x) * 3;
            out[i] = rgb[0];
            out[i + 1] = rgb[1];
            out[i + 2] = rgb[2];
        }
    }
    out
}

/// Surface map and opacity implied by a z-depth map: per-pixel camera-frame
/// surface points (`[h*w, 3]`, zeros where there is no surface) and a
/// binary opacity channel (`[h*w]`, 1 = surface, 0 = background).
pub fn surface_from_depth(depth: &[f64], intrinsics: &Intrinsics) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (intrinsics.width, intrinsics.height);
    assert_eq!(depth.len(), w * h, "depth map size mismatch");
    let mut surface = vec![0.0; w * h * 3];
    let mut opacity = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let z = depth[i];
            if z.is_finite() {
                let p = backproject_pixel(intrinsics, x as f64, y as f64, z);
                surface[i * 3] = p.x;
                surface[i * 3 + 1] = p.y;
                surface[i * 3 + 2] = p.z;
                opacity[i] = 1.0;
            }
        }
    }
    (surface, opacity)
}

/// Backward flow of frame `a` into the earlier frame `b`, by reprojecting
/// the closed-form surface of `a`, together with the occlusion mask
/// (true = no usable correspondence). A pixel survives when its surface
/// point lands in front of camera `b`, inside the image, the first surface
/// along the `b` ray at the reprojected subpixel agrees with the
/// transported depth within [`OCCLUSION_REL_TOL`] (relative), and the four
/// pixel centres around the subpixel agree too. The last condition keeps
/// the mask conservative for consumers that sample frame `b` bilinearly:
/// a footprint straddling a depth discontinuity would blend values from
/// two different surfaces.
pub fn flow_between(
    scene: &AnalyticScene,
    intrinsics: &Intrinsics,
    pose_a: &SE3Pose,
    pose_b: &SE3Pose,
    depth_a: &[f64],
    depth_b: &[f64],
) -> (FlowField, Vec<bool>) {
    let (w, h) = (intrinsics.width, intrinsics.height);
    assert_eq!(depth_a.len(), w * h, "depth map size mismatch");
    assert_eq!(depth_b.len(), w * h, "depth map size mismatch");
    let mut flow = FlowField::new(w, h);
    let mut occluded = vec![true; w * h];
    let b_inv = pose_b.inverse();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            flow.set_valid(x, y, false);
            let za = depth_a[idx];
            if !za.is_finite() {
                continue;
            }
            let xa = backproject_pixel(intrinsics, x as f64, y as f64, za);
            let world = pose_a.transform_point(&xa);
            let xb = b_inv.transform_point(&world);
            let Some((qx, qy)) = intrinsics.project(&xb) else {
                continue;
            };
            if !intrinsics.contains(qx, qy) {
                continue;
            }
            let dir_cam = intrinsics.pixel_dir(qx, qy);
            let ray = Ray {
                origin: pose_b.translation,
                dir: pose_b.rotation * dir_cam,
            };
            let Some(hit) = scene.first_hit(&ray) else {
                continue;
            };
            let zb = hit.s * dir_cam.z;
            if (zb - xb.z).abs() > OCCLUSION_REL_TOL * xb.z {
                continue;
            }
            let x0 = (qx.floor() as usize).min(w - 1);
            let y0 = (qy.floor() as usize).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let footprint_ok = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
                .iter()
                .all(|&(nx, ny)| {
                    let zn = depth_b[ny * w + nx];
                    zn.is_finite() && (zn - xb.z).abs() <= OCCLUSION_REL_TOL * xb.z
                });
            if !footprint_ok {
                continue;
            }
            flow.set(x, y, qx - x as f64, qy - y as f64);
            flow.set_valid(x, y, true);
            occluded[idx] = false;
        }
    }
    (flow, occluded)
}

/// Generate a full ground-truth bundle for the trajectory described by
/// `spec`.
pub fn generate_bundle(
    scene: &AnalyticScene,
    spec: &TrajectorySpec,
    intrinsics: &Intrinsics,
) -> Result<SyntheticBundle, SynthError> {
    let poses = generate_trajectory(spec)?;
    let mut bundle = generate_bundle_from_poses(scene, &poses, intrinsics)?;
    bundle.spec = Some(spec.clone());
    Ok(bundle)
}

/// Generate a bundle for an explicit pose sequence (camera-to-world).
pub fn generate_bundle_from_poses(
    scene: &AnalyticScene,
    poses: &[SE3Pose],
    intrinsics: &Intrinsics,
) -> Result<SyntheticBundle, SynthError> {
    if poses.len() < 2 {
        return Err(SynthError::TooFewFrames(poses.len()));
    }
    for (frame, p) in poses.iter().enumerate() {
        if scene.inside_solid(&p.translation) {
            return Err(SynthError::CameraInsideGeometry {
                frame,
                x: p.translation.x,
                y: p.translation.y,
                z: p.translation.z,
            });
        }
    }
    let frames: Vec<Vec<f64>> = poses
        .par_iter()
        .map(|p| shaded_image(scene, intrinsics, p))
        .collect();
    let depths: Vec<Vec<f64>> = poses
        .par_iter()
        .map(|p| depth_map(scene, intrinsics, p))
        .collect();
    let pairs: Vec<(FlowField, Vec<bool>)> = (1..poses.len())
        .into_par_iter()
        .map(|t| {
            flow_between(scene, intrinsics, &poses[t], &poses[t - 1], &depths[t], &depths[t - 1])
        })
        .collect();
    let (flows, occlusion) = pairs.into_iter().unzip();
    Ok(SyntheticBundle {
        intrinsics: *intrinsics,
        scene: scene.clone(),
        trajectory: Trajectory::new((0..poses.len()).map(|i| i as f64).collect(), poses.to_vec()),
        frames,
        depths,
        flows,
        occlusion,
        spec: None,
    })
}

/// Interpolation-free ground-truth correspondences between two frames:
/// camera-frame surface points of frame `a` paired with the re-intersected
/// surface points of frame `b` at the exact reprojected subpixel.
#[derive(Debug, Clone)]
pub struct ExactMatches {
    /// `[n, 3]` row-major camera-frame points in frame `a`.
    pub x_a: Vec<f64>,
    /// `[n, 3]` matching camera-frame points in frame `b`.
    pub x_b: Vec<f64>,
    /// Source pixel of each pair in frame `a`.
    pub pixels: Vec<(usize, usize)>,
}

impl ExactMatches {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Build exact correspondences from frame `frame_a` into frame `frame_b`,
/// visiting every `stride`-th pixel. Pairs are kept only when the `b` ray
/// through the reprojected subpixel demonstrably hits the same world point
/// (relative disagreement below 1e-9), so the surviving pair sets are
/// related by the ground-truth relative pose to floating-point accuracy.
pub fn exact_correspondences(
    bundle: &SyntheticBundle,
    frame_a: usize,
    frame_b: usize,
    stride: usize,
) -> ExactMatches {
    let n = bundle.trajectory.len();
    assert!(frame_a < n && frame_b < n && frame_a != frame_b, "bad frame pair");
    assert!(stride >= 1, "stride must be positive");
    let intr = &bundle.intrinsics;
    let pose_a = &bundle.trajectory.poses[frame_a];
    let pose_b = &bundle.trajectory.poses[frame_b];
    let b_inv = pose_b.inverse();
    let depth_a = &bundle.depths[frame_a];
    let mut out = ExactMatches {
        x_a: Vec::new(),
        x_b: Vec::new(),
        pixels: Vec::new(),
    };
    let mut y = 0;
    while y < intr.height {
        let mut x = 0;
        while x < intr.width {
            let za = depth_a[y * intr.width + x];
            x += stride;
            if !za.is_finite() {
                continue;
            }
            let px = (x - stride) as f64;
            let py = y as f64;
            let xa = backproject_pixel(intr, px, py, za);
            let world = pose_a.transform_point(&xa);
            let xb = b_inv.transform_point(&world);
            let Some((qx, qy)) = intr.project(&xb) else {
                continue;
            };
            if !intr.contains(qx, qy) {
                continue;
            }
            let dir_cam = intr.pixel_dir(qx, qy);
            let ray = Ray {
                origin: pose_b.translation,
                dir: pose_b.rotation * dir_cam,
            };
            let Some(hit) = scene_hit(bundle, &ray) else {
                continue;
            };
            if (hit - world).norm() > 1e-9 * (1.0 + world.norm()) {
                continue;
            }
            let xb_exact = b_inv.transform_point(&hit);
            out.x_a.extend_from_slice(&[xa.x, xa.y, xa.z]);
            out.x_b.extend_from_slice(&[xb_exact.x, xb_exact.y, xb_exact.z]);
            out.pixels.push((x - stride, y));
        }
        y += stride;
    }
    out
}

fn scene_hit(bundle: &SyntheticBundle, ray: &Ray) -> Option<Vector3<f64>> {
    bundle.scene.first_hit(ray).map(|h| h.point)
}

/// Copy of the bundle in which exactly `floor(fraction * valid_count)`
/// valid pixels of every flow field carry additive uniform noise in
/// `[-magnitude, magnitude]` per component. Returns the corrupted bundle
/// and one outlier mask (`[h*w]`, true = corrupted) per flow field.
/// Selection and noise are fully determined by `seed`.
pub fn corrupt_flow(
    bundle: &SyntheticBundle,
    fraction: f64,
    magnitude: f64,
    seed: u64,
) -> (SyntheticBundle, Vec<Vec<bool>>) {
    assert!(
        (0.0..=1.0).contains(&fraction),
        "fraction must lie in [0, 1], got {fraction}"
    );
    let mut out = bundle.clone();
    let mut masks = Vec::with_capacity(out.flows.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for flow in out.flows.iter_mut() {
        let valid_idx: Vec<usize> = (0..flow.valid.len()).filter(|&i| flow.valid[i]).collect();
        let k = (fraction * valid_idx.len() as f64).floor() as usize;
        let mut mask = vec![false; flow.valid.len()];
        if k > 0 {
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, valid_idx.len(), k).into_vec();
            picked.sort_unstable();
            for sel in picked {
                let i = valid_idx[sel];
                mask[i] = true;
                flow.uv[i * 2] += rng.gen_range(-magnitude..=magnitude);
                flow.uv[i * 2 + 1] += rng.gen_range(-magnitude..=magnitude);
            }
        }
        masks.push(mask);
    }
    (out, masks)
}

/// On-disk index of a serialized bundle. Value fields come first so the
/// TOML writer emits them before the nested tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub frame_count: usize,
    pub poses: String,
    pub scene: String,
    pub frames: Vec<String>,
    pub depths: Vec<String>,
    pub flows: Vec<String>,
    pub masks: Vec<String>,
    pub camera: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<TrajectorySpec>,
}

/// Serialize a bundle into `dir`: frames as 8-bit PNG, depth as PFM, flow
/// as `.flo`, flow-validity masks as PNG (white = valid), poses in TUM
/// format, the scene description, and a manifest listing everything.
pub fn write_bundle(bundle: &SyntheticBundle, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(|e| IoFormatError::io(dir, e))?;
    let (w, h) = (bundle.intrinsics.width, bundle.intrinsics.height);
    let mut manifest = BundleManifest {
        frame_count: bundle.frames.len(),
        poses: "poses_gt.txt".into(),
        scene: "scene.toml".into(),
        frames: Vec::new(),
        depths: Vec::new(),
        flows: Vec::new(),
        masks: Vec::new(),
        camera: bundle.intrinsics,
        spec: bundle.spec.clone(),
    };
    for (t, frame) in bundle.frames.iter().enumerate() {
        let name = format!("frame_{t:04}.png");
        save_rgb8(&dir.join(&name), frame, w, h)?;
        manifest.frames.push(name);
        let name = format!("depth_{t:04}.pfm");
        let mut pfm = PfmImage::new(w, h, 1);
        for (i, &d) in bundle.depths[t].iter().enumerate() {
            pfm.data[i] = d as f32;
        }
        write_pfm(&dir.join(&name), &pfm)?;
        manifest.depths.push(name);
    }
    for (i, flow) in bundle.flows.iter().enumerate() {
        let t = i + 1;
        let name = format!("flow_{t:04}.flo");
        write_flo(&dir.join(&name), flow)?;
        manifest.flows.push(name);
        let name = format!("flowvalid_{t:04}.png");
        let valid: Vec<f64> = flow.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        save_gray8(&dir.join(&name), &valid, w, h)?;
        manifest.masks.push(name);
    }
    write_tum(&dir.join(&manifest.poses), &bundle.trajectory)?;
    let scene_path = dir.join(&manifest.scene);
    std::fs::write(&scene_path, save_scene_string(&bundle.scene))
        .map_err(|e| IoFormatError::io(&scene_path, e))?;
    let manifest_path = dir.join("manifest.toml");
    let text = toml::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| IoFormatError::io(&manifest_path, e))?;
    Ok(())
}

/// Load a bundle previously written by [`write_bundle`]. Frames come back
/// 8-bit quantized; depth and flow come back at `f32` precision.
pub fn read_bundle(dir: &Path) -> Result<SyntheticBundle, SynthError> {
    let bad = |msg: String| SynthError::BadBundle(dir.display().to_string(), msg);
    let manifest_path = dir.join("manifest.toml");
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| IoFormatError::io(&manifest_path, e))?;
    let manifest: BundleManifest =
        toml::from_str(&text).map_err(|e| bad(format!("manifest: {e}")))?;
    let n = manifest.frame_count;
    if manifest.frames.len() != n || manifest.depths.len() != n {
        return Err(bad(format!(
            "manifest lists {} frames / {} depths for frame_count {n}",
            manifest.frames.len(),
            manifest.depths.len()
        )));
    }
    if n < 2 || manifest.flows.len() != n - 1 {
        return Err(bad(format!(
            "manifest lists {} flows for {n} frames",
            manifest.flows.len()
        )));
    }
    let (w, h) = (manifest.camera.width, manifest.camera.height);
    let scene = load_scene(&dir.join(&manifest.scene))?;
    let trajectory = read_tum(&dir.join(&manifest.poses))?;
    if trajectory.len() != n {
        return Err(bad(format!("{} poses for {n} frames", trajectory.len())));
    }
    let mut frames = Vec::with_capacity(n);
    for name in &manifest.frames {
        let (data, fw, fh) = load_rgb8(&dir.join(name))?;
        if (fw, fh) != (w, h) {
            return Err(bad(format!("{name}: {fw}x{fh}, camera says {w}x{h}")));
        }
        frames.push(data);
    }
    let mut depths = Vec::with_capacity(n);
    for name in &manifest.depths {
        let pfm = read_pfm(&dir.join(name))?;
        if (pfm.width, pfm.height, pfm.channels) != (w, h, 1) {
            return Err(bad(format!(
                "{name}: {}x{}x{}, expected {w}x{h}x1",
                pfm.width, pfm.height, pfm.channels
            )));
        }
        depths.push(pfm.data.iter().map(|&v| v as f64).collect());
    }
    let mut flows = Vec::with_capacity(n - 1);
    for name in &manifest.flows {
        let flow = read_flo(&dir.join(name))?;
        if (flow.width, flow.height) != (w, h) {
            return Err(bad(format!(
                "{name}: {}x{}, expected {w}x{h}",
                flow.width, flow.height
            )));
        }
        flows.push(flow);
    }
    let occlusion = flows
        .iter()
        .map(|f| f.valid.iter().map(|&v| !v).collect())
        .collect();
    Ok(SyntheticBundle {
        intrinsics: manifest.camera,
        scene,
        trajectory,
        frames,
        depths,
        flows,
        occlusion,
        spec: manifest.spec,
    })
}
