//! Radiance fields: the analytic oracle scene and the image-conditioned
//! neural field, behind one query interface.

mod analytic;
mod conditioned;
mod encoder;
mod scene_file;
mod texture;

pub use analytic::{AnalyticScene, Hit, Primitive, Shape};
pub use conditioned::{ConditionedField, ConditionedScene, ContextView, FieldConfig};
pub use encoder::{
    conv_layer, encode_image, linear, mlp_init, positional_encoding, positional_encoding_dim,
    ConvStage,
};
pub use scene_file::{load_scene, load_scene_str, save_scene_string, SceneFileError};
pub use texture::Texture;

use crate::autodiff::{Tensor, TensorError};

/// A volumetric radiance field: density and color at 3-D points.
pub trait Field {
    /// `xs` is `[n, 3]` in the field's frame. Returns `(sigma [n, 1],
    /// rgb [n, 3])` with `sigma >= 0` and `rgb` in `[0, 1]`, both
    /// graph-tracked whenever the inputs or the field parameters are.
    fn query(&self, xs: &Tensor) -> Result<(Tensor, Tensor), TensorError>;
}
