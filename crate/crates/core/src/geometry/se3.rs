//! SE(3) rigid transforms stored as rotation matrix + translation.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// How much orthonormality drift `renormalized` tolerates before projecting
/// back onto SO(3).
const ORTHO_DRIFT: f64 = 1e-9;

/// A rigid transform `x -> R x + t`.
///
/// Used both for camera-to-world poses and for relative frame-to-frame
/// motions; composition is plain transform composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SE3Pose {
    pub fn identity() -> SE3Pose {
        SE3Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> SE3Pose {
        SE3Pose { rotation, translation }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> SE3Pose {
        SE3Pose {
            rotation: rotation_exp(axis.normalize() * angle),
            translation,
        }
    }

    /// `(self . other)(x) = self(other(x))`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn transform_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// Frobenius distance of `R^T R` from the identity.
    pub fn orthonormality_drift(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Re-project the rotation onto SO(3) (closest orthogonal matrix, via
    /// SVD) when accumulated drift exceeds `1e-9`; otherwise returns self.
    pub fn renormalized(&self) -> SE3Pose {
        if self.orthonormality_drift() <= ORTHO_DRIFT {
            return *self;
        }
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("renormalized: U");
        let vt = svd.v_t.expect("renormalized: V^T");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            // flip the last column of U to stay in SO(3)
            let mut uf = u;
            uf.set_column(2, &(-u.column(2)));
            r = uf * vt;
        }
        SE3Pose {
            rotation: r,
            translation: self.translation,
        }
    }

    /// Unit quaternion `(qx, qy, qz, qw)` of the rotation part.
    pub fn rotation_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let c = q.coords; // (x, y, z, w) in nalgebra
        [c.x, c.y, c.z, c.w]
    }

    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>) -> SE3Pose {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[3], q[0], q[1], q[2],
        ));
        SE3Pose {
            rotation: uq.to_rotation_matrix().into_inner(),
            translation,
        }
    }
}

/// Rodrigues exponential: rotation by `|omega|` radians about `omega`.
pub fn rotation_exp(omega: Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = Matrix3::new(
        0.0, -omega.z, omega.y, //
        omega.z, 0.0, -omega.x, //
        -omega.y, omega.x, 0.0,
    );
    // Series coefficients near zero avoid 0/0.
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Geodesic angle between two rotations, stable near zero:
/// `|R1 - R2|_F = 2 sqrt(2) sin(theta / 2)`.
pub fn rotation_geodesic(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let fro = (r1 - r2).norm();
    2.0 * (fro / (2.0 * 2f64.sqrt())).clamp(-1.0, 1.0).asin()
}
