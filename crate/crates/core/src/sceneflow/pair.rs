//! Solving the relative pose between two frames from flow + renders.
//!
//! Frame A is the frame the flow starts from, frame B the frame it points
//! into (for odometry: A is frame `t`, B is frame `t-1`, matching backward
//! flow). The solved pose `G` satisfies `X_A ~= G X_B`, i.e. it is frame
//! B's camera pose expressed in frame A's camera frame, so world poses
//! compose as `P_B = P_A * G`.

use crate::autodiff::{concat, Tensor, TensorError};
use crate::geometry::{Intrinsics, PoseTensor};

use super::confidence::ConfidenceNet;
use super::flow::FlowField;
use super::lift::{lift_correspondences, Correspondences};
use super::procrustes::weighted_procrustes;

/// Everything a pair solve needs. Surface/opacity maps are loss-resolution
/// renders in each camera's own frame (`[h*w, 3]` / `[h*w, 1]`); features
/// and images are full-resolution `[H, W, c]` maps used only to score
/// confidences.
pub struct FramePair<'a> {
    pub surface_a: &'a Tensor,
    pub opacity_a: &'a Tensor,
    pub surface_b: &'a Tensor,
    pub opacity_b: &'a Tensor,
    pub features_a: &'a Tensor,
    pub features_b: &'a Tensor,
    pub image_a: &'a Tensor,
    pub image_b: &'a Tensor,
    /// Flow from A pixels into B, at the surface-map resolution.
    pub flow: &'a FlowField,
}

#[derive(Debug, Clone)]
pub struct SolvedPair {
    /// `G` with `X_A ~= G X_B`; `P_B = P_A * G`.
    pub relative: PoseTensor,
    pub corr: Correspondences,
    /// `[n, 1]` solver weights (confidence scores, or 1s without a net).
    pub weights: Tensor,
}

/// Scale loss-resolution pixel coordinates up to full resolution,
/// preserving pixel centres.
fn upscale_coords(pix: &[(f64, f64)], factor: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(pix.len() * 2);
    for &(x, y) in pix {
        v.push((x + 0.5) * factor - 0.5);
        v.push((y + 0.5) * factor - 0.5);
    }
    v
}

/// Differentiable pinhole projection of `[n, 3]` camera-frame points to
/// `[n, 2]` pixel coordinates. Depth is floored at a small epsilon (points
/// at or behind the camera project to clamped, finite coordinates with no
/// depth gradient).
pub fn project_points(points: &Tensor, intr: &Intrinsics) -> Result<Tensor, TensorError> {
    if points.shape().len() != 2 || points.shape()[1] != 3 {
        return Err(TensorError::InvalidArgument {
            op: "project_points",
            msg: format!("expected [n, 3], got {:?}", points.shape()),
        });
    }
    let x = points.slice(1, 0, 1)?;
    let y = points.slice(1, 1, 1)?;
    // Exactly z for z >= eps; clamped (with zero gradient) below.
    let z = points.slice(1, 2, 1)?.add_scalar(-1e-6).relu().add_scalar(1e-6);
    let u = x.scale(intr.fx).div(&z)?.add_scalar(intr.cx);
    let v = y.scale(intr.fy).div(&z)?.add_scalar(intr.cy);
    concat(1, &[u, v])
}

/// Lift correspondences, score them, and solve the relative pose.
///
/// Without a confidence net, every surviving correspondence gets weight 1.
/// With one, its inputs per correspondence are the two sampled feature
/// vectors, the absolute photometric residual, and both endpoint
/// opacities; `feature_scale` is the full-to-loss resolution factor.
#[allow(clippy::too_many_arguments)]
pub fn solve_frame_pair(
    pair: &FramePair<'_>,
    confidence: Option<&ConfidenceNet>,
    min_opacity: f64,
    max_corr: usize,
    seed: u64,
) -> Result<SolvedPair, TensorError> {
    let corr = lift_correspondences(
        pair.surface_a,
        pair.opacity_a,
        pair.surface_b,
        pair.opacity_b,
        pair.flow,
        min_opacity,
        max_corr,
        seed,
    )?;
    let weights = match confidence {
        None => Tensor::constant(vec![1.0; corr.len()], &[corr.len(), 1]),
        Some(net) => {
            // Features and images may live at different resolutions (a
            // strided encoder shrinks the former); scale the correspondence
            // coordinates into each map's own pixel grid.
            let pix_a_f: Vec<(f64, f64)> = corr
                .pix_a
                .iter()
                .map(|&(x, y)| (x as f64, y as f64))
                .collect();
            let coords = |map: &Tensor, pix: &[(f64, f64)]| {
                let factor = map.shape()[1] as f64 / corr.width as f64;
                Tensor::constant(upscale_coords(pix, factor), &[pix.len(), 2])
            };
            let fa = pair.features_a.bilinear_sample(&coords(pair.features_a, &pix_a_f))?;
            let fb = pair.features_b.bilinear_sample(&coords(pair.features_b, &corr.pix_b))?;
            let ia = pair.image_a.bilinear_sample(&coords(pair.image_a, &pix_a_f))?;
            let ib = pair.image_b.bilinear_sample(&coords(pair.image_b, &corr.pix_b))?;
            let residual = ia.sub(&ib)?.abs();
            let inputs = concat(
                1,
                &[fa, fb, residual, corr.opacity_a.clone(), corr.opacity_b.clone()],
            )?;
            net.forward(&inputs)?
        }
    };
    let relative = weighted_procrustes(&corr.x, &corr.xp, &weights)?;
    Ok(SolvedPair {
        relative,
        corr,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_exp, rotation_geodesic, SE3Pose};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Fronto-parallel plane at depth `z` in this camera's frame: the
    /// termination point of each pixel ray, which is linear in pixel
    /// coordinates, so bilinear sampling is exact.
    fn plane_surface(intr: &Intrinsics, z: f64) -> Tensor {
        let mut v = Vec::new();
        for y in 0..intr.height {
            for x in 0..intr.width {
                let px = (x as f64 - intr.cx) / intr.fx * z;
                let py = (y as f64 - intr.cy) / intr.fy * z;
                v.extend([px, py, z]);
            }
        }
        Tensor::constant(v, &[intr.width * intr.height, 3])
    }

    /// Flow from A to B induced by `g` (with `X_A = g X_B`) over a plane at
    /// depth `z_a` in frame A.
    fn induced_flow(intr: &Intrinsics, z_a: f64, g: &SE3Pose) -> FlowField {
        let ginv = g.inverse();
        let mut flow = FlowField::new(intr.width, intr.height);
        for y in 0..intr.height {
            for x in 0..intr.width {
                let xa = Vector3::new(
                    (x as f64 - intr.cx) / intr.fx * z_a,
                    (y as f64 - intr.cy) / intr.fy * z_a,
                    z_a,
                );
                let xb = ginv.transform_point(&xa);
                let u = xb.x / xb.z * intr.fx + intr.cx - x as f64;
                let v = xb.y / xb.z * intr.fy + intr.cy - y as f64;
                flow.set(x, y, u, v);
            }
        }
        flow
    }

    fn ones(n: usize, c: usize) -> Tensor {
        Tensor::constant(vec![1.0; n * c], &[n, c])
    }

    #[test]
    fn translation_only_pair_is_recovered_exactly() {
        let intr = Intrinsics::from_fov(8, 8, 1.0);
        let hw = 64;
        // Camera B is displaced by t; the scene is a wall at z=2 in A's
        // frame, z = 2 - tz in B's. Both surface maps are linear in pixels,
        // so every sampled correspondence is exact.
        let g = SE3Pose::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(0.05, -0.03, 0.12),
        );
        let surface_a = plane_surface(&intr, 2.0);
        let surface_b = plane_surface(&intr, 2.0 - 0.12);
        let flow = induced_flow(&intr, 2.0, &g);
        let opacity = ones(hw, 1);
        let feats = Tensor::constant(vec![0.0; 8 * 8 * 2], &[8, 8, 2]);
        let img = Tensor::constant(vec![0.5; 8 * 8 * 3], &[8, 8, 3]);
        let pair = FramePair {
            surface_a: &surface_a,
            opacity_a: &opacity,
            surface_b: &surface_b,
            opacity_b: &opacity,
            features_a: &feats,
            features_b: &feats,
            image_a: &img,
            image_b: &img,
            flow: &flow,
        };
        let solved = solve_frame_pair(&pair, None, 0.5, 4096, 0).unwrap();
        let got = solved.relative.to_se3();
        assert!(rotation_geodesic(&got.rotation, &g.rotation) < 1e-9);
        assert!(
            (got.translation - g.translation).norm() < 1e-9,
            "translation {:?} vs {:?}",
            got.translation,
            g.translation
        );
    }

    #[test]
    fn rotating_pair_is_recovered_closely() {
        // With rotation the B surface map is no longer linear in pixels, so
        // bilinear lifts carry interpolation error; the solve should still
        // land within a few millidegrees/millimetres.
        let intr = Intrinsics::from_fov(16, 16, 1.0);
        let hw = 16 * 16;
        let g = SE3Pose::new(
            rotation_exp(Vector3::new(0.0, 1.0, 0.0) * 0.03),
            Vector3::new(0.02, 0.0, 0.05),
        );
        let z_a = 2.0;
        let surface_a = plane_surface(&intr, z_a);
        // B's view of the same wall: z = 2 plane in A frame maps to the
        // plane n.X = c with n = R^T e_z, c = 2 - t_z in B's frame.
        let ginv = g.inverse();
        let n_b = g.rotation.transpose() * Vector3::new(0.0, 0.0, 1.0);
        let c_b = z_a - g.translation.z;
        let mut v = Vec::new();
        for y in 0..intr.height {
            for x in 0..intr.width {
                let d = intr.pixel_dir(x as f64, y as f64);
                let t = c_b / n_b.dot(&d);
                v.extend([d.x * t, d.y * t, d.z * t]);
            }
        }
        let surface_b = Tensor::constant(v, &[hw, 3]);
        let mut flow = FlowField::new(intr.width, intr.height);
        for y in 0..intr.height {
            for x in 0..intr.width {
                let xa = Vector3::new(
                    (x as f64 - intr.cx) / intr.fx * z_a,
                    (y as f64 - intr.cy) / intr.fy * z_a,
                    z_a,
                );
                let xb = ginv.transform_point(&xa);
                flow.set(
                    x,
                    y,
                    xb.x / xb.z * intr.fx + intr.cx - x as f64,
                    xb.y / xb.z * intr.fy + intr.cy - y as f64,
                );
            }
        }
        let opacity = ones(hw, 1);
        let feats = Tensor::constant(vec![0.0; hw * 2], &[16, 16, 2]);
        let img = Tensor::constant(vec![0.5; hw * 3], &[16, 16, 3]);
        let pair = FramePair {
            surface_a: &surface_a,
            opacity_a: &opacity,
            surface_b: &surface_b,
            opacity_b: &opacity,
            features_a: &feats,
            features_b: &feats,
            image_a: &img,
            image_b: &img,
            flow: &flow,
        };
        let solved = solve_frame_pair(&pair, None, 0.5, 4096, 0).unwrap();
        let got = solved.relative.to_se3();
        assert!(
            rotation_geodesic(&got.rotation, &g.rotation) < 5e-3,
            "rotation error {}",
            rotation_geodesic(&got.rotation, &g.rotation)
        );
        assert!((got.translation - g.translation).norm() < 5e-3);
    }

    #[test]
    fn fresh_confidence_net_matches_uniform_weights() {
        let intr = Intrinsics::from_fov(8, 8, 1.0);
        let hw = 64;
        let g = SE3Pose::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(0.02, 0.01, 0.06),
        );
        let surface_a = plane_surface(&intr, 2.0);
        let surface_b = plane_surface(&intr, 2.0 - 0.06);
        let flow = induced_flow(&intr, 2.0, &g);
        let opacity = ones(hw, 1);
        let feats = Tensor::constant(
            (0..8 * 8 * 2).map(|i| (i as f64 * 0.17).sin()).collect(),
            &[8, 8, 2],
        );
        let img = Tensor::constant(
            (0..8 * 8 * 3).map(|i| (i as f64 * 0.05).cos() * 0.5 + 0.5).collect(),
            &[8, 8, 3],
        );
        let pair = FramePair {
            surface_a: &surface_a,
            opacity_a: &opacity,
            surface_b: &surface_b,
            opacity_b: &opacity,
            features_a: &feats,
            features_b: &feats,
            image_a: &img,
            image_b: &img,
            flow: &flow,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = ConfidenceNet::init(2 + 2 + 3 + 2, 8, &mut rng);
        let with_net = solve_frame_pair(&pair, Some(&net), 0.5, 4096, 0).unwrap();
        let uniform = solve_frame_pair(&pair, None, 0.5, 4096, 0).unwrap();
        for &w in with_net.weights.values() {
            assert_eq!(w, 0.5);
        }
        for (a, b) in with_net
            .relative
            .r
            .values()
            .iter()
            .zip(uniform.relative.r.values())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_gradients_flow_from_the_solved_pose() {
        // Noisy correspondences make the optimum weight-dependent, so the
        // pose must carry gradient back into the confidence net.
        let intr = Intrinsics::from_fov(8, 8, 1.0);
        let hw = 64;
        let g = SE3Pose::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(0.05, -0.03, 0.12),
        );
        let surface_a = plane_surface(&intr, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy_b: Vec<f64> = plane_surface(&intr, 2.0 - 0.12)
            .values()
            .iter()
            .map(|v| v + rng.gen_range(-0.01..0.01))
            .collect();
        let surface_b = Tensor::constant(noisy_b, &[hw, 3]);
        let flow = induced_flow(&intr, 2.0, &g);
        let opacity = ones(hw, 1);
        let feats = Tensor::constant(
            (0..8 * 8 * 2).map(|i| (i as f64 * 0.31).sin()).collect(),
            &[8, 8, 2],
        );
        let img = Tensor::constant(vec![0.5; 8 * 8 * 3], &[8, 8, 3]);
        let pair = FramePair {
            surface_a: &surface_a,
            opacity_a: &opacity,
            surface_b: &surface_b,
            opacity_b: &opacity,
            features_a: &feats,
            features_b: &feats,
            image_a: &img,
            image_b: &img,
            flow: &flow,
        };
        let net = ConfidenceNet::init(2 + 2 + 3 + 2, 8, &mut rng);
        let solved = solve_frame_pair(&pair, Some(&net), 0.5, 4096, 0).unwrap();
        solved
            .relative
            .t
            .sum_all()
            .add(&solved.relative.r.sum_all())
            .unwrap()
            .backward()
            .unwrap();
        let grad = net.params()["conf2.w"].grad().unwrap();
        assert!(
            grad.iter().any(|v| v.abs() > 1e-12),
            "pose should backprop into confidence weights, got {grad:?}"
        );
    }

    #[test]
    fn projection_matches_manual_pinhole() {
        let intr = Intrinsics::from_fov(10, 8, 1.1);
        let pts = Tensor::constant(vec![0.3, -0.2, 2.0, -0.1, 0.4, 1.5], &[2, 3]);
        let uv = project_points(&pts, &intr).unwrap();
        let v = uv.values();
        assert!((v[0] - (0.3 / 2.0 * intr.fx + intr.cx)).abs() < 1e-12);
        assert!((v[1] - (-0.2 / 2.0 * intr.fy + intr.cy)).abs() < 1e-12);
        assert!((v[2] - (-0.1 / 1.5 * intr.fx + intr.cx)).abs() < 1e-9);
    }
}
