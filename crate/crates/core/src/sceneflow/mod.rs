mod confidence;
mod flow;
mod lift;
mod pair;
mod procrustes;

pub use confidence::ConfidenceNet;
pub use flow::FlowField;
pub use lift::{lift_correspondences, Correspondences};
pub use pair::{project_points, solve_frame_pair, FramePair, SolvedPair};
pub use procrustes::{weighted_procrustes, DEGENERACY_TOL};
