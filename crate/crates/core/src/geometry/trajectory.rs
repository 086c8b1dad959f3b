//! Timestamped camera trajectories, alignment, and absolute trajectory error.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use super::se3::SE3Pose;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("trajectory needs at least {need} poses, got {got}")]
    TooFewPoses { need: usize, got: usize },
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate alignment: estimated positions have no spread")]
    DegenerateAlignment,
    #[error("non-finite value in trajectory")]
    NonFinite,
}

/// Ordered camera-to-world poses with timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub stamps: Vec<f64>,
    pub poses: Vec<SE3Pose>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<SE3Pose>) -> Trajectory {
        assert_eq!(stamps.len(), poses.len());
        Trajectory { stamps, poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Re-expresses all poses relative to the first (first becomes identity).
    pub fn normalized_to_first(&self) -> Trajectory {
        if self.poses.is_empty() {
            return self.clone();
        }
        let inv = self.poses[0].inverse();
        Trajectory {
            stamps: self.stamps.clone(),
            poses: self.poses.iter().map(|p| inv.compose(p)).collect(),
        }
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Similarity alignment (rotation, translation, and scale) — the default
    /// for monocular estimates, whose global scale is unobservable.
    Similarity,
    /// Rigid alignment (rotation and translation only).
    Rigid,
}

/// Result of aligning an estimated trajectory onto a reference.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
    /// RMSE of translational residuals after alignment.
    pub ate_rmse: f64,
    pub per_frame: Vec<f64>,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Closed-form least-squares alignment of `est` positions onto `reference`
/// positions (Umeyama), followed by the translational RMSE.
pub fn align_trajectories(
    est: &Trajectory,
    reference: &Trajectory,
    mode: AlignMode,
) -> Result<Alignment, GeometryError> {
    let n = est.len();
    if n != reference.len() {
        return Err(GeometryError::LengthMismatch(n, reference.len()));
    }
    if n < 3 {
        return Err(GeometryError::TooFewPoses { need: 3, got: n });
    }
    let xs = est.positions();
    let ys = reference.positions();
    if xs.iter().chain(ys.iter()).any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(GeometryError::NonFinite);
    }

    let nf = n as f64;
    let mx: Vector3<f64> = xs.iter().sum::<Vector3<f64>>() / nf;
    let my: Vector3<f64> = ys.iter().sum::<Vector3<f64>>() / nf;

    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - mx;
        let dy = y - my;
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= nf;
    var_x /= nf;
    if var_x < 1e-300 {
        return Err(GeometryError::DegenerateAlignment);
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("align: U");
    let vt = svd.v_t.expect("align: V^T");
    let d = svd.singular_values;
    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if (u * vt).determinant() < 0.0 {
        s.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s) * vt;
    let scale = match mode {
        AlignMode::Similarity => (d.x * s.x + d.y * s.y + d.z * s.z) / var_x,
        AlignMode::Rigid => 1.0,
    };
    let translation = my - scale * (rotation * mx);

    let mut per_frame = Vec::with_capacity(n);
    let mut sum_sq = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let r = (y - (scale * (rotation * x) + translation)).norm();
        per_frame.push(r);
        sum_sq += r * r;
    }
    Ok(Alignment {
        rotation,
        translation,
        scale,
        ate_rmse: (sum_sq / nf).sqrt(),
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3::rotation_exp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wiggly_trajectory(n: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut poses = Vec::new();
        for i in 0..n {
            let t = i as f64 * 0.1;
            poses.push(SE3Pose::new(
                rotation_exp(Vector3::new(0.02 * t, 0.3 * t.sin(), 0.1 * t)),
                Vector3::new(t.cos() + rng.gen::<f64>() * 0.01, t.sin(), 0.5 * t),
            ));
        }
        Trajectory::new((0..n).map(|i| i as f64).collect(), poses)
    }

    #[test]
    fn exact_similarity_transform_recovers_zero_ate() {
        let gt = wiggly_trajectory(40, 3);
        let r = rotation_exp(Vector3::new(0.4, -0.2, 0.9));
        let s = 2.7;
        let t = Vector3::new(1.0, -2.0, 0.5);
        let est = Trajectory::new(
            gt.stamps.clone(),
            gt.poses
                .iter()
                .map(|p| SE3Pose::new(p.rotation, (r.transpose() * (p.translation - t)) / s))
                .collect(),
        );
        let a = align_trajectories(&est, &gt, AlignMode::Similarity).unwrap();
        assert!(a.ate_rmse < 1e-10, "ate {}", a.ate_rmse);
        assert_relative_eq!(a.scale, s, epsilon = 1e-9);
    }

    #[test]
    fn rigid_mode_does_not_absorb_scale() {
        let gt = wiggly_trajectory(40, 4);
        let est = Trajectory::new(
            gt.stamps.clone(),
            gt.poses
                .iter()
                .map(|p| SE3Pose::new(p.rotation, p.translation * 2.0))
                .collect(),
        );
        let sim = align_trajectories(&est, &gt, AlignMode::Similarity).unwrap();
        let rigid = align_trajectories(&est, &gt, AlignMode::Rigid).unwrap();
        assert!(sim.ate_rmse < 1e-10);
        assert!(rigid.ate_rmse > 0.1, "rigid must keep the scale error");
        assert_relative_eq!(rigid.scale, 1.0);
    }

    #[test]
    fn ate_invariant_to_rigid_motion_of_estimate() {
        let gt = wiggly_trajectory(30, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy = Trajectory::new(
            gt.stamps.clone(),
            gt.poses
                .iter()
                .map(|p| {
                    SE3Pose::new(
                        p.rotation,
                        p.translation
                            + Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>())
                                * 0.05,
                    )
                })
                .collect(),
        );
        let base = align_trajectories(&noisy, &gt, AlignMode::Similarity).unwrap();
        let motion = SE3Pose::from_axis_angle(
            Vector3::new(1.0, 2.0, -1.0),
            0.8,
            Vector3::new(5.0, -3.0, 2.0),
        );
        let moved = Trajectory::new(
            noisy.stamps.clone(),
            noisy.poses.iter().map(|p| motion.compose(p)).collect(),
        );
        let after = align_trajectories(&moved, &gt, AlignMode::Similarity).unwrap();
        assert_relative_eq!(base.ate_rmse, after.ate_rmse, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_and_mismatched_inputs_error() {
        let gt = wiggly_trajectory(10, 6);
        let stuck = Trajectory::new(
            gt.stamps.clone(),
            vec![SE3Pose::identity(); 10],
        );
        assert!(matches!(
            align_trajectories(&stuck, &gt, AlignMode::Similarity),
            Err(GeometryError::DegenerateAlignment)
        ));
        let short = wiggly_trajectory(9, 6);
        assert!(matches!(
            align_trajectories(&short, &gt, AlignMode::Similarity),
            Err(GeometryError::LengthMismatch(9, 10))
        ));
    }

    #[test]
    fn normalized_to_first_starts_at_identity() {
        let t = wiggly_trajectory(5, 7).normalized_to_first();
        assert!((t.poses[0].rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(t.poses[0].translation.norm() < 1e-12);
    }
}
