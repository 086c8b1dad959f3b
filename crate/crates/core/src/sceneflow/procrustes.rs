//! Closed-form weighted rigid alignment, differentiable end to end.
//!
//! Given paired 3-D points `x` and `xp` and non-negative weights `w`, find
//! the rigid motion minimizing `sum_i w_i || x_i - (R xp_i + t) ||^2`:
//! normalize the weights, take weighted centroids, form the weighted
//! cross-covariance `S = sum_i wn_i (x_i - mu)(xp_i - mup)^T`, and read the
//! rotation off its SVD as `R = U diag(1, 1, det(U) det(V)) V^T` with
//! `t = mu - R mup`. The determinant correction guards against reflections;
//! it is read from untracked values (a sign is piecewise constant, so it
//! carries no gradient). Gradients flow to both point sets and the weights
//! through the SVD, which is what lets a pose solved from correspondences
//! train whatever produced those correspondences and weights.

use crate::autodiff::{det3, svd3_parts, Tensor, TensorError};
use crate::geometry::PoseTensor;

/// Relative singular-value threshold below which the point configuration
/// is treated as degenerate (all points collinear or coincident).
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Solve for the pose with `x ~= R xp + t`. `x` and `xp` are `[n, 3]`,
/// `w` is `[n, 1]` with non-negative entries and a positive sum; `n >= 3`.
pub fn weighted_procrustes(
    x: &Tensor,
    xp: &Tensor,
    w: &Tensor,
) -> Result<PoseTensor, TensorError> {
    let n = match (x.shape(), xp.shape(), w.shape()) {
        ([n1, 3], [n2, 3], [n3, 1]) if n1 == n2 && n2 == n3 => *n1,
        _ => {
            return Err(TensorError::InvalidArgument {
                op: "weighted_procrustes",
                msg: format!(
                    "expected x [n,3], xp [n,3], w [n,1]; got {:?}, {:?}, {:?}",
                    x.shape(),
                    xp.shape(),
                    w.shape()
                ),
            })
        }
    };
    if n < 3 {
        return Err(TensorError::InvalidArgument {
            op: "weighted_procrustes",
            msg: format!("need at least 3 correspondences, got {n}"),
        });
    }
    let wv = w.values();
    if wv.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "weighted_procrustes",
            msg: "weights must be finite and non-negative".into(),
        });
    }
    let wsum: f64 = wv.iter().sum();
    if wsum < 1e-12 {
        return Err(TensorError::InvalidArgument {
            op: "weighted_procrustes",
            msg: format!("weights sum to {wsum}, too close to zero"),
        });
    }

    let wn = w.div(&w.sum_all())?; // [n,1]
    let wn_row = wn.reshape(&[1, n])?;
    let mu = wn_row.matmul(x)?; // [1,3]
    let mup = wn_row.matmul(xp)?; // [1,3]
    let xc = x.sub(&mu)?;
    let xpc = xp.sub(&mup)?;
    // S = (wn * xc)^T xpc = sum_i wn_i xc_i xpc_i^T.
    let s = xc.mul(&wn)?.transpose2d()?.matmul(&xpc)?;

    let packed = s.svd3()?;
    let (u, sigma, v) = svd3_parts(&packed)?;
    let sv = sigma.values();
    if sv[1] <= DEGENERACY_TOL * sv[0].max(1e-12) {
        return Err(TensorError::InvalidArgument {
            op: "weighted_procrustes",
            msg: format!(
                "degenerate correspondence geometry: singular values {:?} have rank < 2",
                sv
            ),
        });
    }
    let sign = if det3(u.values()) * det3(v.values()) < 0.0 {
        -1.0
    } else {
        1.0
    };
    let dm = Tensor::constant(
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, sign],
        &[3, 3],
    );
    let r = u.matmul(&dm)?.matmul(&v.transpose2d()?)?;
    let t = mu.sub(&mup.matmul(&r.transpose2d()?)?)?;
    Ok(PoseTensor { r, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, GradCheckConfig};
    use crate::geometry::{rotation_exp, rotation_geodesic, SE3Pose};
    use crate::verify::{brute_force_alignment, weighted_alignment_cost};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn truth_pose() -> SE3Pose {
        SE3Pose::new(
            rotation_exp(Vector3::new(0.6, -1.2, 0.9).normalize() * 0.5),
            Vector3::new(0.3, -0.2, 0.5),
        )
    }

    /// xp such that x = R xp + t exactly.
    fn primed(x: &[f64], pose: &SE3Pose) -> Vec<f64> {
        let inv = pose.inverse();
        let mut xp = Vec::new();
        for i in 0..x.len() / 3 {
            let p = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            let q = inv.transform_point(&p);
            xp.extend([q.x, q.y, q.z]);
        }
        xp
    }

    #[test]
    fn recovers_exact_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = truth_pose();
        let x = random_points(&mut rng, 8);
        let xp = primed(&x, &truth);
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..1.0)).collect();
        let pose = weighted_procrustes(
            &Tensor::constant(x, &[8, 3]),
            &Tensor::constant(xp, &[8, 3]),
            &Tensor::constant(w, &[8, 1]),
        )
        .unwrap()
        .to_se3();
        assert!(rotation_geodesic(&pose.rotation, &truth.rotation) < 1e-9);
        assert!((pose.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn zero_weight_rows_cannot_move_the_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = truth_pose();
        let x = random_points(&mut rng, 6);
        let mut xp = primed(&x, &truth);
        // Corrupt one correspondence badly, then weight it out.
        xp[3] += 10.0;
        xp[4] -= 7.0;
        let mut w = vec![1.0; 6];
        w[1] = 0.0;
        let pose = weighted_procrustes(
            &Tensor::constant(x, &[6, 3]),
            &Tensor::constant(xp, &[6, 3]),
            &Tensor::constant(w, &[6, 1]),
        )
        .unwrap()
        .to_se3();
        assert!(rotation_geodesic(&pose.rotation, &truth.rotation) < 1e-9);
        assert!((pose.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn matches_brute_force_descent_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = truth_pose();
        let x: Vec<f64> = random_points(&mut rng, 10);
        let mut xp = primed(&x, &truth);
        for v in xp.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        let w: Vec<f64> = (0..10).map(|_| rng.gen_range(0.2..1.0)).collect();
        let solved = weighted_procrustes(
            &Tensor::constant(x.clone(), &[10, 3]),
            &Tensor::constant(xp.clone(), &[10, 3]),
            &Tensor::constant(w.clone(), &[10, 1]),
        )
        .unwrap()
        .to_se3();
        let oracle = brute_force_alignment(&x, &xp, &w, 4000);
        let solved_cost = weighted_alignment_cost(&x, &xp, &w, &solved);
        // The closed form is the global minimum: descent can never beat it.
        assert!(
            solved_cost <= oracle.cost + 1e-9,
            "closed form {solved_cost} worse than descent {}",
            oracle.cost
        );
        assert!(rotation_geodesic(&solved.rotation, &oracle.pose.rotation) < 1e-3);
        assert!((solved.translation - oracle.pose.translation).norm() < 1e-3);
    }

    #[test]
    fn never_returns_a_reflection() {
        // A mirrored point set would be matched best by a determinant -1
        // map; the solver must still return a proper rotation.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_points(&mut rng, 7);
        let xp: Vec<f64> = x
            .chunks(3)
            .flat_map(|p| [p[0], p[1], -p[2]])
            .collect();
        let w = vec![1.0; 7];
        let pose = weighted_procrustes(
            &Tensor::constant(x, &[7, 3]),
            &Tensor::constant(xp, &[7, 3]),
            &Tensor::constant(w, &[7, 1]),
        )
        .unwrap()
        .to_se3();
        let r = pose.rotation;
        assert!(r.determinant() > 0.99, "det {}", r.determinant());
        assert!(
            (r * r.transpose() - nalgebra::Matrix3::identity()).norm() < 1e-9,
            "result must be orthonormal"
        );
    }

    #[test]
    fn collinear_points_are_rejected() {
        let x: Vec<f64> = (0..6).flat_map(|i| [i as f64, 0.0, 0.0]).collect();
        let xp: Vec<f64> = (0..6).flat_map(|i| [0.0, i as f64, 0.0]).collect();
        let err = weighted_procrustes(
            &Tensor::constant(x, &[6, 3]),
            &Tensor::constant(xp, &[6, 3]),
            &Tensor::constant(vec![1.0; 6], &[6, 1]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn pose_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = truth_pose();
        let x = random_points(&mut rng, 5);
        let mut xp = primed(&x, &truth);
        for v in xp.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.3..0.9)).collect();
        let check_cfg = GradCheckConfig::default();
        let report = gradcheck(
            |xs| {
                let pose = weighted_procrustes(&xs[0], &xs[1], &xs[2])?;
                // Weight the entries asymmetrically so no cancellation hides
                // a wrong component.
                let mask_r = Tensor::constant(
                    vec![1.0, 2.0, -1.0, 0.5, 1.5, -2.0, 3.0, -0.5, 1.0],
                    &[3, 3],
                );
                let mask_t = Tensor::constant(vec![2.0, -1.0, 1.5], &[1, 3]);
                pose.r
                    .mul(&mask_r)?
                    .sum_all()
                    .add(&pose.t.mul(&mask_t)?.sum_all())
            },
            &[
                (x, vec![5, 3]),
                (xp, vec![5, 3]),
                (w, vec![5, 1]),
            ],
            &check_cfg,
        )
        .unwrap();
        assert!(
            report.passed(&check_cfg),
            "pose solver gradients disagree with finite differences: {report:?}"
        );
    }
}
