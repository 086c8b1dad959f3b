//! Graph-tracked rigid transforms, for gradient flow through pose chains.
//!
//! Mirrors `SE3Pose` but stores rotation `[3,3]` and translation `[1,3]` as
//! tensors, so losses built on composed or inverted poses differentiate all
//! the way back to whatever produced them (e.g. the pose solver).

use nalgebra::{Matrix3, Vector3};

use super::se3::SE3Pose;
use crate::autodiff::{Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct PoseTensor {
    /// `[3,3]` rotation, row-major.
    pub r: Tensor,
    /// `[1,3]` translation row vector.
    pub t: Tensor,
}

impl PoseTensor {
    pub fn identity() -> PoseTensor {
        PoseTensor {
            r: Tensor::constant(
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                &[3, 3],
            ),
            t: Tensor::zeros(&[1, 3]),
        }
    }

    /// Untracked constant copy of a plain pose.
    pub fn from_se3(p: &SE3Pose) -> PoseTensor {
        let mut r = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                r.push(p.rotation[(i, j)]);
            }
        }
        PoseTensor {
            r: Tensor::constant(r, &[3, 3]),
            t: Tensor::constant(
                vec![p.translation.x, p.translation.y, p.translation.z],
                &[1, 3],
            ),
        }
    }

    /// Plain pose from current values (drops the graph).
    pub fn to_se3(&self) -> SE3Pose {
        let rv = self.r.values();
        let tv = self.t.values();
        SE3Pose::new(
            Matrix3::from_row_slice(rv),
            Vector3::new(tv[0], tv[1], tv[2]),
        )
    }

    /// `(self . other)(x) = self(other(x))`.
    pub fn compose(&self, other: &PoseTensor) -> Result<PoseTensor, TensorError> {
        let r = self.r.matmul(&other.r)?;
        let t = other.t.matmul(&self.r.transpose2d()?)?.add(&self.t)?;
        Ok(PoseTensor { r, t })
    }

    pub fn inverse(&self) -> Result<PoseTensor, TensorError> {
        let r = self.r.transpose2d()?;
        let t = self.t.matmul(&self.r)?.neg();
        Ok(PoseTensor { r, t })
    }

    /// Apply to `[n,3]` points: `x R^T + t`.
    pub fn transform_points(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.matmul(&self.r.transpose2d()?)?.add(&self.t)
    }

    pub fn is_tracked(&self) -> bool {
        self.r.is_tracked() || self.t.is_tracked()
    }
}
