//! Image-conditioned radiance field.
//!
//! A query point is transformed into each context camera's frame, projected
//! with that camera's intrinsics, and used to sample the context's encoded
//! feature map; the sampled features plus a positional encoding of the
//! camera-frame coordinates feed a shared MLP. The per-context activations
//! are averaged, and two small heads emit density (softplus) and colour
//! (sigmoid). Everything is differentiable — including the projection, so
//! gradients reach both the network weights and the context poses.

use std::collections::BTreeMap;

use rand::Rng;

use super::encoder::{encode_image, linear, mlp_init, positional_encoding, positional_encoding_dim, ConvStage};
use super::Field;
use crate::autodiff::{concat, Tensor, TensorError};
use crate::geometry::{Intrinsics, PoseTensor};

/// Network sizes. The defaults suit small desk-scale scenes; tests shrink
/// them to keep finite-difference checks fast.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldConfig {
    /// Conv stages as `(out_channels, stride)`, kernel 3, padding 1.
    pub encoder: Vec<(usize, usize)>,
    /// Width of the shared MLP.
    pub hidden: usize,
    /// Positional-encoding octaves for camera-frame coordinates.
    pub octaves: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            encoder: vec![(16, 2), (32, 2), (32, 1)],
            hidden: 64,
            octaves: 6,
        }
    }
}

impl FieldConfig {
    /// Small variant for unit tests and quick training smoke runs.
    pub fn tiny() -> Self {
        FieldConfig {
            encoder: vec![(6, 2), (8, 2)],
            hidden: 16,
            octaves: 2,
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.encoder.last().map(|&(c, _)| c).unwrap_or(0)
    }

    /// Names and shapes of every learnable tensor in creation order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut cin = 3usize;
        for (i, &(cout, _)) in self.encoder.iter().enumerate() {
            specs.push((format!("enc{i}.w"), vec![9 * cin, cout]));
            specs.push((format!("enc{i}.b"), vec![1, cout]));
            cin = cout;
        }
        let din = self.feature_channels() + positional_encoding_dim(3, self.octaves);
        specs.push(("trunk1.w".into(), vec![din, self.hidden]));
        specs.push(("trunk1.b".into(), vec![1, self.hidden]));
        specs.push(("trunk2.w".into(), vec![self.hidden, self.hidden]));
        specs.push(("trunk2.b".into(), vec![1, self.hidden]));
        specs.push(("post.w".into(), vec![self.hidden, self.hidden]));
        specs.push(("post.b".into(), vec![1, self.hidden]));
        specs.push(("sigma.w".into(), vec![self.hidden, 1]));
        specs.push(("sigma.b".into(), vec![1, 1]));
        specs.push(("rgb.w".into(), vec![self.hidden, 3]));
        specs.push(("rgb.b".into(), vec![1, 3]));
        specs
    }
}

/// One observed frame the field is conditioned on.
#[derive(Debug, Clone)]
pub struct ContextView {
    /// `[h, w, c]` encoded feature map at image resolution.
    pub features: Tensor,
    /// `[h, w, 3]` source image.
    pub image: Tensor,
    /// Camera-to-world pose of the frame.
    pub pose: PoseTensor,
    /// World-to-camera pose (inverse of `pose`), cached for queries.
    pub world_to_cam: PoseTensor,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone)]
pub struct ConditionedField {
    pub cfg: FieldConfig,
    params: BTreeMap<String, Tensor>,
}

impl ConditionedField {
    /// Fresh field with seeded Xavier-uniform weights.
    pub fn init<R: Rng>(cfg: FieldConfig, rng: &mut R) -> ConditionedField {
        let mut params = BTreeMap::new();
        for (name, shape) in cfg.param_specs() {
            let (w, b) = mlp_init(rng, shape[0], shape[1]);
            let values = if name.ends_with(".b") { b } else { w };
            params.insert(name, Tensor::param(values, &shape));
        }
        ConditionedField { cfg, params }
    }

    /// Rebuild from an explicit parameter map (e.g. after an optimizer step
    /// or a checkpoint load). Every spec'd tensor must be present with the
    /// right shape.
    pub fn from_params(
        cfg: FieldConfig,
        params: BTreeMap<String, Tensor>,
    ) -> Result<ConditionedField, TensorError> {
        for (name, shape) in cfg.param_specs() {
            match params.get(&name) {
                None => {
                    return Err(TensorError::InvalidArgument {
                        op: "field_from_params",
                        msg: format!("missing parameter {name:?}"),
                    })
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(TensorError::InvalidArgument {
                        op: "field_from_params",
                        msg: format!(
                            "parameter {name:?} has shape {:?}, expected {shape:?}",
                            t.shape()
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(ConditionedField { cfg, params })
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("field parameter {name:?} missing"))
    }

    /// Encode one frame into a `ContextView` (runs the conv stack).
    pub fn encode_context(
        &self,
        image: &Tensor,
        pose: &PoseTensor,
        intrinsics: &Intrinsics,
    ) -> Result<ContextView, TensorError> {
        let names: Vec<(String, String)> = (0..self.cfg.encoder.len())
            .map(|i| (format!("enc{i}.w"), format!("enc{i}.b")))
            .collect();
        let stages: Vec<ConvStage> = self
            .cfg
            .encoder
            .iter()
            .zip(&names)
            .map(|(&(_, stride), (wn, bn))| ConvStage {
                w: self.p(wn),
                b: self.p(bn),
                stride,
            })
            .collect();
        let features = encode_image(image, &stages)?;
        Ok(ContextView {
            features,
            image: image.clone(),
            pose: pose.clone(),
            world_to_cam: pose.inverse()?,
            intrinsics: *intrinsics,
        })
    }

    /// Bind the field to a set of context views for querying.
    pub fn with_contexts<'a>(&'a self, contexts: &'a [ContextView]) -> ConditionedScene<'a> {
        ConditionedScene { field: self, contexts }
    }
}

/// A `ConditionedField` plus the context frames it is conditioned on.
pub struct ConditionedScene<'a> {
    pub field: &'a ConditionedField,
    pub contexts: &'a [ContextView],
}

impl ConditionedScene<'_> {
    /// Per-context branch: project, sample features, encode coordinates,
    /// run the shared trunk.
    fn branch(&self, ctx: &ContextView, xs: &Tensor) -> Result<Tensor, TensorError> {
        let f = self.field;
        let cam = ctx.world_to_cam.transform_points(xs)?;
        let x = cam.slice(1, 0, 1)?;
        let y = cam.slice(1, 1, 1)?;
        let z = cam.slice(1, 2, 1)?;
        // Points at or behind the camera plane project nowhere useful;
        // flooring depth (exact above the floor) keeps the graph finite and
        // simply samples the border there, with no gradient through the
        // clamp.
        let z_safe = z.add_scalar(-1e-4).relu().add_scalar(1e-4);
        let k = ctx.intrinsics;
        let u = x.scale(k.fx).div(&z_safe)?.add_scalar(k.cx);
        let v = y.scale(k.fy).div(&z_safe)?.add_scalar(k.cy);
        let coords = concat(1, &[u, v])?;
        let feat = ctx.features.bilinear_sample(&coords)?;
        let enc = positional_encoding(&cam, f.cfg.octaves)?;
        let inp = concat(1, &[feat, enc])?;
        let h1 = linear(&inp, f.p("trunk1.w"), f.p("trunk1.b"))?.relu();
        linear(&h1, f.p("trunk2.w"), f.p("trunk2.b")).map(|t| t.relu())
    }
}

impl Field for ConditionedScene<'_> {
    fn query(&self, xs: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
        let f = self.field;
        if self.contexts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "field_query",
                msg: "conditioned field queried with no context views".into(),
            });
        }
        let mut acc: Option<Tensor> = None;
        for ctx in self.contexts {
            let b = self.branch(ctx, xs)?;
            acc = Some(match acc {
                None => b,
                Some(a) => a.add(&b)?,
            });
        }
        let mean = acc.unwrap().scale(1.0 / self.contexts.len() as f64);
        let post = linear(&mean, f.p("post.w"), f.p("post.b"))?.relu();
        let sigma = linear(&post, f.p("sigma.w"), f.p("sigma.b"))?.softplus();
        let rgb = linear(&post, f.p("rgb.w"), f.p("rgb.b"))?.sigmoid();
        Ok((sigma, rgb))
    }
}
