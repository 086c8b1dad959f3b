//! Rigid-body poses, the pinhole camera, trajectories, and alignment.

mod camera;
mod posetensor;
mod se3;
mod trajectory;

pub use camera::{Intrinsics, Ray};
pub use posetensor::PoseTensor;
pub use se3::{rotation_exp, rotation_geodesic, SE3Pose};
pub use trajectory::{align_trajectories, AlignMode, Alignment, GeometryError, Trajectory};
