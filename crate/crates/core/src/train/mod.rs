//! Joint training of the conditioned field and the confidence net.
//!
//! One training step runs, per window of video: encode every frame, render
//! loss-resolution surface maps with the field conditioned on each frame
//! alone, solve all adjacent pairs into a tracked pose chain, evaluate the
//! photometric and pose-induced-flow losses, and backpropagate the weighted
//! total through rendering and the pose solver into every parameter. Updates
//! use adaptive moment estimation with global gradient-norm clipping.
//!
//! Everything is deterministic: pixel subsets, correspondence subsampling,
//! and window starts all derive from the run seed, steps run sequentially,
//! and one step builds one graph, so two runs with the same seeds produce
//! bit-identical loss curves. Test-time adaptation is the same loop
//! restricted to windows of a single video — poses are always solver
//! outputs, never free variables.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{compute_in_f32, set_compute_f32, Tensor, TensorError};
use crate::fields::{ConditionedField, ContextView, FieldConfig};
use crate::geometry::PoseTensor;
use crate::losses::{photometric_loss, pose_flow_loss, LossConfig, LossReport, SurfaceSample};
use crate::odometry::{FrameMapSource, FrameMaps, OdometryError, VideoSequence};
use crate::renderer::{render_image, RenderConfig, Rendered};
use crate::sceneflow::{solve_frame_pair, ConfidenceNet, FlowField, FramePair};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no scenes to train on")]
    EmptyBatch,
    #[error("frames are {w}x{h}, not divisible by the loss downscale factor {factor}")]
    BadDownscale { w: usize, h: usize, factor: usize },
    #[error("training window must span at least 2 frames, got {0}")]
    BadWindow(usize),
    #[error("aborting at step {step}, losses are no longer finite: {dump}")]
    NonFinite { step: u64, dump: String },
    #[error("solving the pair (frame {a}, frame {b}): {source}")]
    PairSolve {
        a: usize,
        b: usize,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Graph(#[from] TensorError),
    #[error(transparent)]
    Sequence(#[from] OdometryError),
}

/// The two learnable components, trained jointly: the image-conditioned
/// field and the correspondence confidence net.
#[derive(Debug, Clone)]
pub struct Model {
    pub field: ConditionedField,
    pub confidence: ConfidenceNet,
}

impl Model {
    /// Confidence-net input width for a field configuration: two sampled
    /// feature vectors plus the photometric residual and both opacities.
    pub fn confidence_input_dim(cfg: &FieldConfig) -> usize {
        2 * cfg.feature_channels() + 5
    }

    /// Fresh model with seeded initialization.
    pub fn init<R: Rng>(cfg: FieldConfig, confidence_hidden: usize, rng: &mut R) -> Model {
        let in_dim = Model::confidence_input_dim(&cfg);
        Model {
            field: ConditionedField::init(cfg, rng),
            confidence: ConfidenceNet::init(in_dim, confidence_hidden, rng),
        }
    }

    /// All parameters under one namespace (field and confidence names are
    /// disjoint by construction). Tensors are shared, not copied.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        let mut all: BTreeMap<String, Tensor> = self
            .field
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (k, v) in self.confidence.params() {
            let clash = all.insert(k.clone(), v.clone());
            debug_assert!(clash.is_none(), "parameter name {k:?} is not unique");
        }
        all
    }

    /// Rebuild both components from one parameter map (an optimizer step or
    /// a checkpoint load). Every expected tensor must be present with the
    /// right shape, and no stray tensors may remain.
    pub fn from_params(
        field_cfg: FieldConfig,
        confidence_in: usize,
        confidence_hidden: usize,
        mut params: BTreeMap<String, Tensor>,
    ) -> Result<Model, TensorError> {
        let mut split = |specs: &[(String, Vec<usize>)]| {
            let mut out = BTreeMap::new();
            for (name, _) in specs {
                if let Some(t) = params.remove(name) {
                    out.insert(name.clone(), t);
                }
            }
            out
        };
        let field_params = split(&field_cfg.param_specs());
        let conf_params = split(&ConfidenceNet::param_specs(confidence_in, confidence_hidden));
        if let Some(name) = params.keys().next() {
            return Err(TensorError::InvalidArgument {
                op: "model_from_params",
                msg: format!("unexpected parameter {name:?}"),
            });
        }
        Ok(Model {
            field: ConditionedField::from_params(field_cfg, field_params)?,
            confidence: ConfidenceNet::from_params(confidence_in, confidence_hidden, conf_params)?,
        })
    }
}

/// Adaptive moment estimation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap applied before the update; non-positive
    /// disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Optimizer moments, keyed like the parameter map. Empty maps mean a fresh
/// optimizer; after the first step every parameter has both moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    /// Moments must pair up with `params` exactly (unless still empty).
    pub fn check_shapes(&self, params: &BTreeMap<String, Tensor>) -> Result<(), String> {
        if self.m.is_empty() && self.v.is_empty() {
            return Ok(());
        }
        for (section, map) in [("first moment", &self.m), ("second moment", &self.v)] {
            for name in map.keys() {
                if !params.contains_key(name) {
                    return Err(format!("{section} entry {name:?} matches no parameter"));
                }
            }
            for (name, p) in params {
                match map.get(name) {
                    None => return Err(format!("parameter {name:?} has no {section}")),
                    Some(vs) if vs.len() != p.numel() => {
                        return Err(format!(
                            "{section} of {name:?} has {} values, the parameter has {}",
                            vs.len(),
                            p.numel()
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`
/// (non-positive `max_norm` disables clipping). Returns the norm before
/// clipping.
pub fn clip_gradient_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// One adaptive-moments update: advance `state`, fold the gradients into the
/// bias-corrected moments, and return the updated parameter tensors.
/// Parameters without a gradient entry are treated as having zero gradient.
pub fn adam_step(
    params: &BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Vec<f64>>,
    cfg: &AdamConfig,
    state: &mut OptimizerState,
) -> BTreeMap<String, Tensor> {
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut out = BTreeMap::new();
    for (name, p) in params {
        let fallback;
        let g = match grads.get(name) {
            Some(g) => {
                debug_assert_eq!(g.len(), p.numel(), "gradient size mismatch for {name:?}");
                g
            }
            None => {
                fallback = vec![0.0; p.numel()];
                &fallback
            }
        };
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
        let mut vals = p.values().to_vec();
        for i in 0..vals.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            vals[i] -= cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
        }
        out.insert(name.clone(), Tensor::param(vals, p.shape()));
    }
    out
}

/// Everything the training loop needs to know.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    /// Frames per training window; longer scenes contribute a seeded random
    /// window per step.
    pub window: usize,
    /// Surface maps for pose solving and the flow loss are rendered at the
    /// frame resolution divided by this factor.
    pub loss_downscale: usize,
    /// Cap on correspondences per pair solve.
    pub max_correspondences: usize,
    pub seed: u64,
    /// Run the elementwise kernels in reduced (f32) precision.
    pub compute_f32: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            steps: 500,
            window: 6,
            loss_downscale: 4,
            max_correspondences: 1024,
            seed: 0,
            compute_f32: false,
        }
    }
}

fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9E3779B97F4A7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E3779B97F4A7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58476D1CE4E5B9);
        h ^= h >> 31;
    }
    h
}

/// Context frames for the multi-context photometric term: first, middle,
/// and last frame of the window.
fn context_frames(n: usize) -> Vec<usize> {
    let mut j = vec![0, n / 2, n - 1];
    j.dedup();
    j
}

/// One window's differentiable forward pass.
pub struct WindowForward {
    /// Weighted total, graph-tracked down to every parameter.
    pub loss: Tensor,
    pub report: LossReport,
    /// Solver-estimated camera-to-world poses (frame 0 = identity).
    pub poses: Vec<PoseTensor>,
    /// Mean confidence weight over all scored correspondences.
    pub mean_confidence: f64,
}

/// Run the full pipeline on one window: encode, render loss-resolution
/// maps, solve the pose chain, and evaluate all loss terms. `round` keeps
/// the seeded pixel subsets and correspondence subsamples fresh across
/// steps.
pub fn window_forward(
    model: &Model,
    seq: &VideoSequence,
    cfg: &TrainConfig,
    round: u64,
) -> Result<WindowForward, TrainError> {
    let n = seq.len();
    let intr = seq.intrinsics;
    let factor = cfg.loss_downscale.max(1);
    if intr.width % factor != 0 || intr.height % factor != 0 {
        return Err(TrainError::BadDownscale {
            w: intr.width,
            h: intr.height,
            factor,
        });
    }
    let small = intr.downscaled(factor);

    // Every frame encoded once, in its own camera frame.
    let views: Vec<ContextView> = seq
        .frames
        .iter()
        .map(|f| model.field.encode_context(f, &PoseTensor::identity(), &intr))
        .collect::<Result<_, _>>()?;

    // Self-conditioned loss-resolution render of every frame: the surface
    // and opacity maps the pose solver and the flow loss consume.
    let renders: Vec<Rendered> = views
        .iter()
        .map(|v| {
            let scene = model.field.with_contexts(std::slice::from_ref(v));
            render_image(&scene, &small, None, &cfg.loss.render)
        })
        .collect::<Result<_, _>>()?;

    let small_flows: Vec<FlowField> = seq.flows.iter().map(|f| f.downsampled(factor)).collect();

    // Chain the pair solves into camera-to-world poses from identity.
    let mut poses = Vec::with_capacity(n);
    poses.push(PoseTensor::identity());
    let mut conf_sum = 0.0;
    let mut conf_count = 0usize;
    for t in 1..n {
        let pair = FramePair {
            surface_a: &renders[t].surface,
            opacity_a: &renders[t].opacity,
            surface_b: &renders[t - 1].surface,
            opacity_b: &renders[t - 1].opacity,
            features_a: &views[t].features,
            features_b: &views[t - 1].features,
            image_a: &seq.frames[t],
            image_b: &seq.frames[t - 1],
            flow: &small_flows[t - 1],
        };
        let solved = solve_frame_pair(
            &pair,
            Some(&model.confidence),
            cfg.loss.min_opacity,
            cfg.max_correspondences,
            mix(&[cfg.seed, round, t as u64]),
        )
        .map_err(|source| TrainError::PairSolve { a: t, b: t - 1, source })?;
        conf_sum += solved.weights.values().iter().sum::<f64>();
        conf_count += solved.weights.numel();
        let prev = poses.last().expect("pose chain starts at identity");
        poses.push(prev.compose(&solved.relative.inverse()?)?);
    }

    let context = context_frames(n);
    let (l_multi, l_single) =
        photometric_loss(seq, &poses, &model.field, &context, &cfg.loss, round)?;
    let maps: Vec<SurfaceSample> = renders
        .iter()
        .map(|r| SurfaceSample::full(r.surface.clone(), r.opacity.clone()))
        .collect();
    let l_pose = pose_flow_loss(&small, &small_flows, &poses, &maps, cfg.loss.min_opacity)?;

    let w = cfg.loss.weights;
    let report = LossReport::new(l_multi.item(), l_single.item(), l_pose.item(), w);
    let loss = l_multi
        .scale(w.rgb_multi)
        .add(&l_single.scale(w.rgb_single))?
        .add(&l_pose.scale(w.pose_flow))?;
    Ok(WindowForward {
        loss,
        report,
        poses,
        mean_confidence: if conf_count == 0 {
            0.0
        } else {
            conf_sum / conf_count as f64
        },
    })
}

fn dump_reports(reports: &[LossReport]) -> String {
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "window {i}: rgb_multi={} rgb_single={} pose_flow={}",
                r.rgb_multi, r.rgb_single, r.pose_flow
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// One optimization step over a batch of windows: forward every window,
/// average, backpropagate once, clip, and update. Returns the updated model
/// and the batch-mean loss report. Aborts with a per-term dump if any loss
/// value stops being finite.
pub fn train_step(
    model: &Model,
    batch: &[VideoSequence],
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    step: u64,
) -> Result<(Model, LossReport), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let params = model.params();
    for p in params.values() {
        p.zero_grad();
    }

    let mut total: Option<Tensor> = None;
    let mut reports = Vec::with_capacity(batch.len());
    for seq in batch {
        let fwd = window_forward(model, seq, cfg, step)?;
        reports.push(fwd.report);
        total = Some(match total {
            None => fwd.loss,
            Some(acc) => acc.add(&fwd.loss)?,
        });
    }
    let scale = 1.0 / batch.len() as f64;
    let total = total.expect("batch is non-empty").scale(scale);

    let mean = LossReport::new(
        reports.iter().map(|r| r.rgb_multi).sum::<f64>() * scale,
        reports.iter().map(|r| r.rgb_single).sum::<f64>() * scale,
        reports.iter().map(|r| r.pose_flow).sum::<f64>() * scale,
        cfg.loss.weights,
    );
    if let Err(msg) = mean.check() {
        return Err(TrainError::NonFinite {
            step,
            dump: format!("{msg} ({})", dump_reports(&reports)),
        });
    }

    total.backward()?;
    let mut grads: BTreeMap<String, Vec<f64>> = params
        .iter()
        .map(|(k, p)| {
            (
                k.clone(),
                p.grad().unwrap_or_else(|| vec![0.0; p.numel()]),
            )
        })
        .collect();
    let norm = clip_gradient_norm(&mut grads, cfg.adam.clip_norm);
    if !norm.is_finite() {
        return Err(TrainError::NonFinite {
            step,
            dump: format!("gradient norm {norm} ({})", dump_reports(&reports)),
        });
    }

    let updated = adam_step(&params, &grads, &cfg.adam, state);
    let next = Model::from_params(
        model.field.cfg.clone(),
        model.confidence.in_dim,
        model.confidence.hidden,
        updated,
    )?;
    Ok((next, mean))
}

/// Restores the compute-precision flag even on early return or panic.
struct ComputeModeGuard {
    prev: bool,
}

impl ComputeModeGuard {
    fn engage(enable: bool) -> ComputeModeGuard {
        let prev = compute_in_f32();
        set_compute_f32(enable);
        ComputeModeGuard { prev }
    }
}

impl Drop for ComputeModeGuard {
    fn drop(&mut self) {
        set_compute_f32(self.prev);
    }
}

/// A finished (or adapted) training run.
pub struct TrainRun {
    pub model: Model,
    pub state: OptimizerState,
    /// One report per step.
    pub curve: Vec<LossReport>,
}

/// Optimize the model on a set of videos. Each step trains on one window
/// per video: the whole video if it is no longer than `cfg.window`, else a
/// seeded random window of that length. Steps run sequentially, one graph
/// per step.
pub fn train(model: Model, scenes: &[VideoSequence], cfg: &TrainConfig) -> Result<TrainRun, TrainError> {
    train_from(model, OptimizerState::default(), scenes, cfg)
}

/// [`train`] continued from existing optimizer state (e.g. a loaded
/// checkpoint): step numbering, moment estimates, and the seeded window
/// schedule all pick up where the previous run stopped.
pub fn train_from(
    model: Model,
    state: OptimizerState,
    scenes: &[VideoSequence],
    cfg: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if cfg.window < 2 {
        return Err(TrainError::BadWindow(cfg.window));
    }
    let _mode = ComputeModeGuard::engage(cfg.compute_f32);

    let mut model = model;
    let mut state = state;
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let round = state.step;
        let mut batch = Vec::with_capacity(scenes.len());
        for (i, s) in scenes.iter().enumerate() {
            if s.len() > cfg.window {
                let span = (s.len() - cfg.window) as u64;
                let start = (mix(&[cfg.seed, 0x77696e64, round, i as u64]) % (span + 1)) as usize;
                batch.push(s.subsequence(start, cfg.window)?);
            } else {
                batch.push(s.clone());
            }
        }
        let (next, report) = train_step(&model, &batch, cfg, &mut state, round)?;
        model = next;
        curve.push(report);
    }
    Ok(TrainRun { model, state, curve })
}

/// Test-time adaptation: continue optimizing an already-trained model on
/// windows of a single held-out video. The supervision is unchanged — poses
/// are always pair-solver outputs — and zero steps return the parameters
/// untouched.
pub fn adapt(model: Model, seq: &VideoSequence, cfg: &TrainConfig) -> Result<TrainRun, TrainError> {
    train(model, std::slice::from_ref(seq), cfg)
}

/// Frame maps rendered by a trained model for inference-time odometry: each
/// frame is encoded and volume-rendered in its own camera frame at the full
/// sequence resolution (matching the sequence's flows), cached, and
/// detached — no gradients at inference.
pub struct LearnedMaps<'a> {
    model: &'a Model,
    seq: &'a VideoSequence,
    render: RenderConfig,
    cache: Vec<OnceLock<FrameMaps>>,
}

impl<'a> LearnedMaps<'a> {
    pub fn new(model: &'a Model, seq: &'a VideoSequence, render: RenderConfig) -> LearnedMaps<'a> {
        LearnedMaps {
            model,
            seq,
            render,
            cache: (0..seq.len()).map(|_| OnceLock::new()).collect(),
        }
    }

    fn compute(&self, frame: usize) -> Result<FrameMaps, TensorError> {
        let view = self.model.field.encode_context(
            &self.seq.frames[frame],
            &PoseTensor::identity(),
            &self.seq.intrinsics,
        )?;
        let scene = self.model.field.with_contexts(std::slice::from_ref(&view));
        let out = render_image(&scene, &self.seq.intrinsics, None, &self.render)?;
        Ok(FrameMaps {
            surface: out.surface.detach(),
            opacity: out.opacity.detach(),
            features: view.features.detach(),
            image: self.seq.frames[frame].clone(),
        })
    }
}

impl FrameMapSource for LearnedMaps<'_> {
    fn maps(&self, frame: usize) -> Result<FrameMaps, TensorError> {
        if let Some(m) = self.cache[frame].get() {
            return Ok(m.clone());
        }
        let m = self.compute(frame)?;
        Ok(self.cache[frame].get_or_init(|| m).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticScene, Primitive, Shape, Texture};
    use crate::geometry::Intrinsics;
    use crate::odometry::{estimate_window, OdometryConfig};
    use crate::synth::{generate_bundle, SyntheticBundle, TrajectoryKind, TrajectorySpec};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Textured backdrop slab with its near face at depth `z`; thick, so
    /// ray samples cannot straddle it.
    fn backdrop(z: f64) -> AnalyticScene {
        AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Plane {
                    center: Vector3::new(0.0, 0.0, z + 0.5),
                    normal: Vector3::new(0.0, 0.0, 1.0),
                    radius: 10.0,
                    thickness: 1.0,
                },
                amplitude: 800.0,
                softness: 0.005,
                texture: Texture::Noise {
                    scale: 1.2,
                    seed: 5,
                    base: [0.25, 0.3, 0.2],
                    span: [0.5, 0.45, 0.55],
                },
            }],
            background: [0.0, 0.0, 0.0],
        }
    }

    fn bundle(kind: TrajectoryKind, side: usize, frames: usize, step: f64) -> SyntheticBundle {
        let scene = backdrop(3.0);
        let intr = Intrinsics::from_fov(side, side, 0.7);
        let spec = TrajectorySpec {
            kind,
            frames,
            step,
            target: [0.0, 0.0, 2.0],
            ..TrajectorySpec::default()
        };
        generate_bundle(&scene, &spec, &intr).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            loss: LossConfig {
                render: RenderConfig {
                    n_samples: 8,
                    near: 2.0,
                    far: 4.0,
                    jitter: false,
                    seed: 0,
                },
                pixels_per_frame: Some(12),
                min_opacity: 0.0,
                ..LossConfig::default()
            },
            steps: 1,
            window: 3,
            loss_downscale: 2,
            max_correspondences: 64,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    fn tiny_model(seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::init(FieldConfig::tiny(), 8, &mut rng)
    }

    #[test]
    fn adam_descends_a_quadratic_and_tracks_moments() {
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let mut state = OptimizerState::default();
        let mut vals = vec![3.0, -2.0, 1.5, 0.5];
        for _ in 0..300 {
            let x = Tensor::param(vals.clone(), &[2, 2]);
            let loss = x.mul(&x).unwrap().sum_all();
            loss.backward().unwrap();
            let params = BTreeMap::from([("x".to_string(), x.clone())]);
            let grads = BTreeMap::from([("x".to_string(), x.grad().unwrap())]);
            let next = adam_step(&params, &grads, &cfg, &mut state);
            vals = next["x"].values().to_vec();
        }
        assert!(vals.iter().all(|v| v.abs() < 0.05), "did not converge: {vals:?}");
        assert_eq!(state.step, 300);
        assert_eq!(state.m["x"].len(), 4);
        assert_eq!(state.v["x"].len(), 4);
        let params = BTreeMap::from([("x".to_string(), Tensor::param(vals, &[2, 2]))]);
        state.check_shapes(&params).unwrap();
    }

    #[test]
    fn gradient_clipping_caps_the_global_norm() {
        let mut grads = BTreeMap::from([
            ("a".to_string(), vec![3.0, 4.0]),
            ("b".to_string(), vec![0.0, 12.0]),
        ]);
        let norm = clip_gradient_norm(&mut grads, 1.0);
        assert!((norm - 13.0).abs() < 1e-12);
        let clipped: f64 = grads
            .values()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        assert!((clipped - 1.0).abs() < 1e-12, "clipped norm {clipped}");

        // Below the cap: untouched.
        let mut small = BTreeMap::from([("a".to_string(), vec![0.3, 0.4])]);
        let norm = clip_gradient_norm(&mut small, 1.0);
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(small["a"], vec![0.3, 0.4]);

        // Non-positive cap disables clipping.
        let mut free = BTreeMap::from([("a".to_string(), vec![30.0, 40.0])]);
        assert!((clip_gradient_norm(&mut free, 0.0) - 50.0).abs() < 1e-12);
        assert_eq!(free["a"], vec![30.0, 40.0]);
    }

    #[test]
    fn model_params_round_trip_and_reject_strays() {
        let model = tiny_model(4);
        let params = model.params();
        assert!(params.keys().any(|k| k.starts_with("enc0")));
        assert!(params.keys().any(|k| k.starts_with("conf1")));
        let rebuilt = Model::from_params(
            model.field.cfg.clone(),
            model.confidence.in_dim,
            model.confidence.hidden,
            params.clone(),
        )
        .unwrap();
        assert_eq!(rebuilt.params().len(), params.len());

        let mut extra = params;
        extra.insert("bogus.w".to_string(), Tensor::param(vec![0.0], &[1, 1]));
        let err = Model::from_params(
            model.field.cfg.clone(),
            model.confidence.in_dim,
            model.confidence.hidden,
            extra,
        );
        assert!(err.is_err(), "stray parameter accepted");
    }

    #[test]
    fn window_forward_chains_poses_from_identity() {
        let b = bundle(TrajectoryKind::Orbit, 8, 3, 0.02);
        let seq = VideoSequence::from_bundle(&b);
        let model = tiny_model(1);
        let fwd = window_forward(&model, &seq, &tiny_cfg(), 0).unwrap();
        assert_eq!(fwd.poses.len(), 3);
        let p0 = fwd.poses[0].to_se3();
        assert!(p0.translation.norm() < 1e-12);
        assert!((p0.rotation - nalgebra::Matrix3::identity()).norm() < 1e-12);
        assert!(fwd.mean_confidence > 0.0 && fwd.mean_confidence <= 1.0);
        fwd.report.check().unwrap();
        assert!(fwd.loss.item().is_finite());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let b = bundle(TrajectoryKind::Orbit, 8, 3, 0.02);
        let seq = VideoSequence::from_bundle(&b);
        let model = tiny_model(2);
        let before: BTreeMap<String, Vec<u64>> = model
            .params()
            .into_iter()
            .map(|(k, t)| (k, t.values().iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut cfg = tiny_cfg();
        cfg.adam.lr = 0.0;
        let run = train(model, std::slice::from_ref(&seq), &cfg).unwrap();
        assert_eq!(run.curve.len(), 1);
        assert_eq!(run.state.step, 1);
        for (name, t) in run.model.params() {
            let bits: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, before[&name], "parameter {name} moved under lr 0");
        }
    }

    #[test]
    fn identical_seeds_reproduce_the_loss_curve_bitwise() {
        let scenes = vec![
            VideoSequence::from_bundle(&bundle(TrajectoryKind::Orbit, 8, 4, 0.02)),
            VideoSequence::from_bundle(&bundle(TrajectoryKind::Dolly, 8, 4, 0.02)),
        ];
        let mut cfg = tiny_cfg();
        cfg.steps = 3;
        let run_a = train(tiny_model(7), &scenes, &cfg).unwrap();
        let run_b = train(tiny_model(7), &scenes, &cfg).unwrap();
        assert_eq!(run_a.curve.len(), 3);
        for (a, b) in run_a.curve.iter().zip(&run_b.curve) {
            assert_eq!(a.total.to_bits(), b.total.to_bits(), "curves diverged");
        }
        for (name, t) in run_a.model.params() {
            let other = &run_b.model.params()[&name];
            let same = t
                .values()
                .iter()
                .zip(other.values())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "parameter {name} diverged between identical runs");
        }
    }

    #[test]
    fn resuming_from_state_matches_an_uninterrupted_run() {
        let seqs = vec![
            VideoSequence::from_bundle(&bundle(TrajectoryKind::Orbit, 10, 3, 0.05)).unwrap(),
        ];
        let mut cfg = tiny_cfg();
        cfg.adam.lr = 1e-3;

        cfg.steps = 4;
        let straight = train(tiny_model(3), &seqs, &cfg).unwrap();

        cfg.steps = 2;
        let first = train(tiny_model(3), &seqs, &cfg).unwrap();
        let resumed = train_from(first.model, first.state, &seqs, &cfg).unwrap();

        assert_eq!(resumed.state.step, straight.state.step);
        let (a, b) = (straight.model.params(), resumed.model.params());
        for (name, t) in &a {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&t.values()), bits(&b[name].values()), "{name} diverged after resume");
        }
        let curve: Vec<u64> = first
            .curve
            .iter()
            .chain(&resumed.curve)
            .map(|r| r.total.to_bits())
            .collect();
        let full: Vec<u64> = straight.curve.iter().map(|r| r.total.to_bits()).collect();
        assert_eq!(curve, full);
    }

    #[test]
    fn non_finite_losses_abort_with_a_term_dump() {
        let b = bundle(TrajectoryKind::Orbit, 8, 3, 0.02);
        let seq = VideoSequence::from_bundle(&b);
        let model = tiny_model(3);
        // Poison the colour head only: geometry (and the pose solve) stays
        // finite, so the failure must be caught by the loss check.
        let mut params = model.params();
        let rgb = &params["rgb.w"];
        let poisoned = Tensor::param(vec![f64::NAN; rgb.numel()], rgb.shape());
        params.insert("rgb.w".to_string(), poisoned);
        let model = Model::from_params(
            model.field.cfg.clone(),
            model.confidence.in_dim,
            model.confidence.hidden,
            params,
        )
        .unwrap();
        let mut state = OptimizerState::default();
        let err = train_step(&model, std::slice::from_ref(&seq), &tiny_cfg(), &mut state, 0);
        match err {
            Err(TrainError::NonFinite { dump, .. }) => {
                assert!(dump.contains("rgb_multi"), "dump misses the bad term: {dump}");
            }
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn adaptation_with_zero_steps_returns_identical_parameters() {
        let b = bundle(TrajectoryKind::Orbit, 8, 3, 0.02);
        let seq = VideoSequence::from_bundle(&b);
        let model = tiny_model(5);
        let before: BTreeMap<String, Vec<u64>> = model
            .params()
            .into_iter()
            .map(|(k, t)| (k, t.values().iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut cfg = tiny_cfg();
        cfg.steps = 0;
        let run = adapt(model, &seq, &cfg).unwrap();
        assert!(run.curve.is_empty());
        for (name, t) in run.model.params() {
            let bits: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, before[&name], "parameter {name} moved with zero steps");
        }
    }

    #[test]
    fn learned_maps_drive_window_odometry() {
        let b = bundle(TrajectoryKind::Orbit, 8, 3, 0.02);
        let seq = VideoSequence::from_bundle(&b);
        let model = tiny_model(6);
        let render = RenderConfig {
            n_samples: 8,
            near: 2.0,
            far: 4.0,
            jitter: false,
            seed: 0,
        };
        let maps = LearnedMaps::new(&model, &seq, render);
        let odo = OdometryConfig {
            min_opacity: 0.0,
            max_correspondences: 64,
            ..OdometryConfig::default()
        };
        let traj = estimate_window(&seq, &maps, Some(&model.confidence), &odo).unwrap();
        assert_eq!(traj.len(), 3);
        for p in &traj.poses {
            assert!(p.translation.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn training_smoke_reduces_the_loss() {
        let scenes = vec![
            VideoSequence::from_bundle(&bundle(TrajectoryKind::Orbit, 16, 4, 0.04)),
            VideoSequence::from_bundle(&bundle(TrajectoryKind::Dolly, 16, 4, 0.04)),
        ];
        let cfg = TrainConfig {
            loss: LossConfig {
                render: RenderConfig {
                    n_samples: 12,
                    near: 2.0,
                    far: 4.0,
                    jitter: false,
                    seed: 0,
                },
                pixels_per_frame: Some(24),
                ..LossConfig::default()
            },
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            steps: 50,
            window: 4,
            loss_downscale: 4,
            max_correspondences: 64,
            seed: 1,
            compute_f32: false,
        };
        let run = train(tiny_model(8), &scenes, &cfg).unwrap();
        let first: f64 = run.curve[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        let last: f64 = run.curve[40..].iter().map(|r| r.total).sum::<f64>() / 10.0;
        assert!(
            last < first,
            "loss did not decrease: first 10 mean {first}, last 10 mean {last}"
        );
    }

    /// Central finite differences against the backpropagated gradient of the
    /// full window loss — rendering, confidence scoring, the pose solve, and
    /// all three loss terms in one graph — on a sampled parameter coordinate
    /// from every layer family.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let b = bundle(TrajectoryKind::Orbit, 8, 3, 0.01);
        let seq = VideoSequence::from_bundle(&b);
        let model = tiny_model(11);
        let cfg = tiny_cfg();

        let fwd = window_forward(&model, &seq, &cfg, 0).unwrap();
        let params = model.params();
        for p in params.values() {
            p.zero_grad();
        }
        fwd.loss.backward().unwrap();

        let names = [
            "enc0.w", "enc1.w", "trunk1.w", "trunk2.w", "post.w", "sigma.w", "rgb.w",
            "conf2.w", "conf2.b",
        ];
        let eps = 1e-5;
        let mut checked = 0usize;
        for (k, name) in names.iter().enumerate() {
            let p = &params[*name];
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            for pick in 0..2 {
                let i = (mix(&[cfg.seed, k as u64, pick]) % p.numel() as u64) as usize;
                let eval = |delta: f64| -> f64 {
                    let mut vals = p.values().to_vec();
                    vals[i] += delta;
                    let mut perturbed = params.clone();
                    perturbed.insert(name.to_string(), Tensor::param(vals, p.shape()));
                    let m = Model::from_params(
                        model.field.cfg.clone(),
                        model.confidence.in_dim,
                        model.confidence.hidden,
                        perturbed,
                    )
                    .unwrap();
                    window_forward(&m, &seq, &cfg, 0).unwrap().loss.item()
                };
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let ad = grad[i];
                let tol = 1e-3 * ad.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (ad - fd).abs() <= tol,
                    "{name}[{i}]: backprop {ad} vs finite difference {fd}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 2 * names.len());
    }
}
