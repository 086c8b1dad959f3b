//! Sequence-level pose estimation: frame-to-frame solves composed into
//! trajectories, and sliding-window processing for long videos.
//!
//! Every relative pose comes from one pair solve on (frame `t`, frame
//! `t-1`) with the backward flow between them; no state crosses frame
//! pairs, so relative poses are independent of how the sequence is split
//! into windows. A long video is processed as non-overlapping windows
//! (solved in parallel — inference carries no gradients), and windows are
//! chained by explicitly solving the boundary pair rather than assuming
//! continuity. Trajectories always start at identity.

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};
use crate::geometry::{Intrinsics, SE3Pose, Trajectory};
use crate::sceneflow::{solve_frame_pair, ConfidenceNet, FlowField, FramePair};
use crate::synth::{surface_from_depth, SyntheticBundle};

#[derive(Debug, Error)]
pub enum OdometryError {
    #[error("sequence needs at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("sequence has {frames} frames but {flows} flow fields (need frames - 1)")]
    FlowCount { frames: usize, flows: usize },
    #[error("frame {frame} has shape {got:?}, expected {want:?}")]
    FrameShape {
        frame: usize,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("flow {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FlowShape {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("ground truth has {got} poses for {frames} frames")]
    GroundTruthLength { got: usize, frames: usize },
    #[error("window size must be at least 2, got {0}")]
    BadWindow(usize),
    #[error("solving the pair (frame {a}, frame {b}): {source}")]
    PairSolve {
        a: usize,
        b: usize,
        #[source]
        source: TensorError,
    },
    #[error("maps for frame {frame}: {source}")]
    FrameMaps {
        frame: usize,
        #[source]
        source: TensorError,
    },
}

/// An ordered video with precomputed backward flow.
#[derive(Debug, Clone)]
pub struct VideoSequence {
    pub intrinsics: Intrinsics,
    /// `[h, w, 3]` image per frame, values in `[0, 1]`.
    pub frames: Vec<Tensor>,
    /// `flows[i]` is the backward flow of frame `i + 1` into frame `i`.
    pub flows: Vec<FlowField>,
    /// Ground-truth camera-to-world trajectory, when known (evaluation only).
    pub ground_truth: Option<Trajectory>,
}

impl VideoSequence {
    pub fn new(
        intrinsics: Intrinsics,
        frames: Vec<Tensor>,
        flows: Vec<FlowField>,
        ground_truth: Option<Trajectory>,
    ) -> Result<VideoSequence, OdometryError> {
        if frames.len() < 2 {
            return Err(OdometryError::TooShort(frames.len()));
        }
        if flows.len() != frames.len() - 1 {
            return Err(OdometryError::FlowCount {
                frames: frames.len(),
                flows: flows.len(),
            });
        }
        let want = [intrinsics.height, intrinsics.width, 3];
        for (frame, f) in frames.iter().enumerate() {
            if f.shape() != want {
                return Err(OdometryError::FrameShape {
                    frame,
                    got: f.shape().to_vec(),
                    want: want.to_vec(),
                });
            }
        }
        for (index, fl) in flows.iter().enumerate() {
            if (fl.width, fl.height) != (intrinsics.width, intrinsics.height) {
                return Err(OdometryError::FlowShape {
                    index,
                    got_w: fl.width,
                    got_h: fl.height,
                    want_w: intrinsics.width,
                    want_h: intrinsics.height,
                });
            }
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return Err(OdometryError::GroundTruthLength {
                    got: gt.len(),
                    frames: frames.len(),
                });
            }
        }
        Ok(VideoSequence {
            intrinsics,
            frames,
            flows,
            ground_truth,
        })
    }

    /// View a synthetic bundle as a sequence (frames become tensors; the
    /// generating trajectory becomes the ground truth).
    pub fn from_bundle(bundle: &SyntheticBundle) -> VideoSequence {
        let (w, h) = (bundle.intrinsics.width, bundle.intrinsics.height);
        let frames = bundle
            .frames
            .iter()
            .map(|f| Tensor::constant(f.clone(), &[h, w, 3]))
            .collect();
        VideoSequence::new(
            bundle.intrinsics,
            frames,
            bundle.flows.clone(),
            Some(bundle.trajectory.clone()),
        )
        .expect("a generated bundle is always a consistent sequence")
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The contiguous sub-video `[start, start + len)`, with its flows and
    /// (if present) ground-truth poses. `len` must be at least 2 and the
    /// range in bounds.
    pub fn subsequence(&self, start: usize, len: usize) -> Result<VideoSequence, OdometryError> {
        if len < 2 || start + len > self.len() {
            return Err(OdometryError::BadWindow(len));
        }
        let ground_truth = self.ground_truth.as_ref().map(|gt| Trajectory {
            stamps: gt.stamps[start..start + len].to_vec(),
            poses: gt.poses[start..start + len].to_vec(),
        });
        VideoSequence::new(
            self.intrinsics,
            self.frames[start..start + len].to_vec(),
            self.flows[start..start + len - 1].to_vec(),
            ground_truth,
        )
    }
}

/// Per-frame maps a pair solve consumes: geometry at flow resolution plus
/// full-resolution features/image for confidence scoring.
#[derive(Debug, Clone)]
pub struct FrameMaps {
    /// `[h*w, 3]` expected-termination points in this camera's frame.
    pub surface: Tensor,
    /// `[h*w, 1]` opacity in `[0, 1]`.
    pub opacity: Tensor,
    /// `[H, W, c]` feature map (sampled only when a confidence net runs).
    pub features: Tensor,
    /// `[H, W, 3]` image (sampled only when a confidence net runs).
    pub image: Tensor,
}

/// Supplies the per-frame maps. Implementations must be cheap enough to
/// call twice per frame pair, or cache internally.
pub trait FrameMapSource: Sync {
    fn maps(&self, frame: usize) -> Result<FrameMaps, TensorError>;
}

/// Ground-truth geometry: surface maps backprojected from known depth,
/// binary opacity (1 on surfaces, 0 on background), and the raw frame as
/// both image and feature map.
pub struct OracleMaps<'a> {
    seq: &'a VideoSequence,
    depths: &'a [Vec<f64>],
}

impl<'a> OracleMaps<'a> {
    pub fn new(seq: &'a VideoSequence, depths: &'a [Vec<f64>]) -> OracleMaps<'a> {
        assert_eq!(
            depths.len(),
            seq.len(),
            "need one depth map per frame ({} frames, {} depths)",
            seq.len(),
            depths.len()
        );
        OracleMaps { seq, depths }
    }
}

impl FrameMapSource for OracleMaps<'_> {
    fn maps(&self, frame: usize) -> Result<FrameMaps, TensorError> {
        let intr = &self.seq.intrinsics;
        let hw = intr.width * intr.height;
        let (surface, opacity) = surface_from_depth(&self.depths[frame], intr);
        Ok(FrameMaps {
            surface: Tensor::constant(surface, &[hw, 3]),
            opacity: Tensor::constant(opacity, &[hw, 1]),
            features: self.seq.frames[frame].clone(),
            image: self.seq.frames[frame].clone(),
        })
    }
}

/// Maps computed once up front (e.g. rendered by a learned model).
pub struct PrecomputedMaps(pub Vec<FrameMaps>);

impl FrameMapSource for PrecomputedMaps {
    fn maps(&self, frame: usize) -> Result<FrameMaps, TensorError> {
        Ok(self.0[frame].clone())
    }
}

#[derive(Debug, Clone)]
pub struct OdometryConfig {
    /// Frames per window when processing long sequences.
    pub window: usize,
    /// Minimum endpoint opacity for a correspondence to count.
    pub min_opacity: f64,
    /// Cap on correspondences per pair (seeded subsample above it).
    pub max_correspondences: usize,
    pub seed: u64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        OdometryConfig {
            window: 15,
            min_opacity: 0.5,
            max_correspondences: 4096,
            seed: 0,
        }
    }
}

/// Solve the relative pose `G` (with `X_t ~= G X_{t-1}`) for the adjacent
/// pair `(t, t-1)` using the sequence's backward flow of frame `t`.
fn solve_adjacent(
    seq: &VideoSequence,
    maps: &dyn FrameMapSource,
    confidence: Option<&ConfidenceNet>,
    cfg: &OdometryConfig,
    t: usize,
) -> Result<SE3Pose, OdometryError> {
    let (a, b) = (t, t - 1);
    let ma = maps
        .maps(a)
        .map_err(|source| OdometryError::FrameMaps { frame: a, source })?;
    let mb = maps
        .maps(b)
        .map_err(|source| OdometryError::FrameMaps { frame: b, source })?;
    let pair = FramePair {
        surface_a: &ma.surface,
        opacity_a: &ma.opacity,
        surface_b: &mb.surface,
        opacity_b: &mb.opacity,
        features_a: &ma.features,
        features_b: &mb.features,
        image_a: &ma.image,
        image_b: &mb.image,
        flow: &seq.flows[t - 1],
    };
    let solved = solve_frame_pair(
        &pair,
        confidence,
        cfg.min_opacity,
        cfg.max_correspondences,
        cfg.seed,
    )
    .map_err(|source| OdometryError::PairSolve { a, b, source })?;
    Ok(solved.relative.to_se3())
}

/// Compose relative poses into a trajectory starting at identity:
/// `P_0 = I`, `P_t = P_{t-1} * G_t^{-1}` (since `G_t` maps frame `t-1`
/// points into frame `t`, `P_{t-1} = P_t * G_t`).
fn compose_from_identity(rels: &[SE3Pose]) -> Vec<SE3Pose> {
    let mut poses = Vec::with_capacity(rels.len() + 1);
    poses.push(SE3Pose::identity());
    for g in rels {
        let next = poses.last().unwrap().compose(&g.inverse()).renormalized();
        poses.push(next);
    }
    poses
}

fn stamps(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

/// Estimate camera-to-world poses for every frame of one window: solve all
/// adjacent pairs (in parallel — no gradients at inference) and fold the
/// relative poses from identity.
pub fn estimate_window(
    seq: &VideoSequence,
    maps: &dyn FrameMapSource,
    confidence: Option<&ConfidenceNet>,
    cfg: &OdometryConfig,
) -> Result<Trajectory, OdometryError> {
    let rels = (1..seq.len())
        .into_par_iter()
        .map(|t| solve_adjacent(seq, maps, confidence, cfg, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory::new(stamps(seq.len()), compose_from_identity(&rels)))
}

/// Estimate a long sequence as non-overlapping windows of `cfg.window`
/// frames. Each window yields a local trajectory (identity at its first
/// frame); consecutive windows are chained by solving the boundary pair
/// (last frame of window `k`, first frame of window `k+1`) like any other
/// pair. Since pair solves carry no cross-frame state, the result matches
/// [`estimate_window`] up to floating-point reassociation.
pub fn estimate_long(
    seq: &VideoSequence,
    maps: &dyn FrameMapSource,
    confidence: Option<&ConfidenceNet>,
    cfg: &OdometryConfig,
) -> Result<Trajectory, OdometryError> {
    if cfg.window < 2 {
        return Err(OdometryError::BadWindow(cfg.window));
    }
    let n = seq.len();
    if cfg.window >= n {
        return estimate_window(seq, maps, confidence, cfg);
    }
    let windows: Vec<(usize, usize)> = (0..n)
        .step_by(cfg.window)
        .map(|s| (s, (s + cfg.window).min(n)))
        .collect();
    let locals: Vec<Vec<SE3Pose>> = windows
        .par_iter()
        .map(|&(s, e)| {
            let rels = (s + 1..e)
                .map(|t| solve_adjacent(seq, maps, confidence, cfg, t))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(compose_from_identity(&rels))
        })
        .collect::<Result<_, OdometryError>>()?;
    let boundaries: Vec<SE3Pose> = windows[1..]
        .par_iter()
        .map(|&(s, _)| solve_adjacent(seq, maps, confidence, cfg, s))
        .collect::<Result<_, _>>()?;

    let mut poses: Vec<SE3Pose> = Vec::with_capacity(n);
    let mut anchor = SE3Pose::identity();
    for (k, local) in locals.iter().enumerate() {
        if k > 0 {
            let last = poses.last().expect("previous window is non-empty");
            anchor = last.compose(&boundaries[k - 1].inverse()).renormalized();
        }
        for p in local {
            poses.push(anchor.compose(p).renormalized());
        }
    }
    Ok(Trajectory::new(stamps(n), poses))
}
