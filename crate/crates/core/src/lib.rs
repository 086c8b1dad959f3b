//! Self-supervised camera odometry and neural-field rendering from unposed video.
//!
//! The pipeline lifts 2-D optical flow to 3-D scene flow using rendered
//! surface maps, solves for relative camera poses with a weighted,
//! differentiable Procrustes solver, and trains an image-conditioned
//! radiance field end-to-end against photometric and flow-consistency
//! losses. Everything is deterministic given a seed and sized so the full
//! test suite runs on a desktop CPU.

pub mod autodiff;
pub mod cli;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod odometry;
pub mod plot;
pub mod renderer;
pub mod sceneflow;
pub mod synth;
pub mod train;
pub mod verify;
