//! Independent checks: a brute-force reference optimizer for weighted
//! rigid alignment, plus suite runners used by the `verify` CLI command.
//!
//! Everything here is deliberately implemented without the tensor graph so
//! it can certify the differentiable implementations against slow,
//! transparent references.

use nalgebra::Vector3;

use crate::geometry::{rotation_exp, SE3Pose};

mod suites;
pub use suites::{gradcheck_suite, procrustes_suite, renderer_suite, CheckOutcome, FaultInjection};

/// `sum_i w_i * || x_i - (R xp_i + t) ||^2` over flat `[n*3]` point arrays.
pub fn weighted_alignment_cost(x: &[f64], xp: &[f64], w: &[f64], pose: &SE3Pose) -> f64 {
    let n = w.len();
    let mut cost = 0.0;
    for i in 0..n {
        let xi = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
        let xpi = Vector3::new(xp[3 * i], xp[3 * i + 1], xp[3 * i + 2]);
        let r = xi - pose.transform_point(&xpi);
        cost += w[i] * r.norm_squared();
    }
    cost
}

#[derive(Debug, Clone)]
pub struct AlignmentOracle {
    pub pose: SE3Pose,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize the weighted alignment cost by plain gradient descent on a
/// 6-dof parameterization (axis-angle + translation), with numeric
/// gradients and a backtracking step. Slow and simple on purpose: it is
/// the reference the closed-form solver is certified against.
pub fn brute_force_alignment(x: &[f64], xp: &[f64], w: &[f64], max_iters: usize) -> AlignmentOracle {
    let pose_of = |th: &[f64; 6]| {
        SE3Pose::new(
            rotation_exp(Vector3::new(th[0], th[1], th[2])),
            Vector3::new(th[3], th[4], th[5]),
        )
    };
    let cost_of = |th: &[f64; 6]| weighted_alignment_cost(x, xp, w, &pose_of(th));

    let mut theta = [0.0f64; 6];
    let mut cost = cost_of(&theta);
    let mut step = 0.1;
    let h = 1e-6;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iters {
        iterations += 1;
        let mut grad = [0.0f64; 6];
        let mut gnorm2 = 0.0;
        for k in 0..6 {
            let mut plus = theta;
            let mut minus = theta;
            plus[k] += h;
            minus[k] -= h;
            grad[k] = (cost_of(&plus) - cost_of(&minus)) / (2.0 * h);
            gnorm2 += grad[k] * grad[k];
        }
        if gnorm2.sqrt() < 1e-12 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while step >= 1e-15 {
            let mut cand = theta;
            for k in 0..6 {
                cand[k] -= step * grad[k];
            }
            let c = cost_of(&cand);
            if c < cost {
                theta = cand;
                cost = c;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true; // no descent direction at any step size
            break;
        }
    }
    AlignmentOracle {
        pose: pose_of(&theta),
        cost,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_geodesic;

    #[test]
    fn descent_recovers_an_exact_rigid_motion() {
        let x: Vec<f64> = vec![
            0.3, 0.1, 1.2, -0.4, 0.5, 2.0, 0.8, -0.6, 1.5, 0.0, 0.9, 2.4, -0.7, -0.2, 1.1,
        ];
        let axis = Vector3::new(1.0, 2.0, 3.0).normalize();
        let truth = SE3Pose::new(
            rotation_exp(axis * 0.4),
            Vector3::new(0.3, -0.2, 0.5),
        );
        let inv = truth.inverse();
        let mut xp = Vec::new();
        for i in 0..5 {
            let p = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            let q = inv.transform_point(&p);
            xp.extend([q.x, q.y, q.z]);
        }
        let w = vec![1.0, 0.7, 1.3, 0.4, 1.0];
        let oracle = brute_force_alignment(&x, &xp, &w, 4000);
        assert!(oracle.cost < 1e-10, "residual cost {}", oracle.cost);
        assert!(
            rotation_geodesic(&oracle.pose.rotation, &truth.rotation) < 1e-4,
            "rotation off by {}",
            rotation_geodesic(&oracle.pose.rotation, &truth.rotation)
        );
        assert!((oracle.pose.translation - truth.translation).norm() < 1e-4);
    }
}
