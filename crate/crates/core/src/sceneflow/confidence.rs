//! Correspondence confidence network.
//!
//! A two-layer MLP scoring each lifted correspondence in `(0, 1)`. Inputs
//! are whatever evidence the caller assembles (sampled features from both
//! frames, the photometric residual, endpoint opacities). The final layer
//! is zero-initialized so every correspondence starts at exactly 0.5 —
//! the pose solver then begins as an unweighted fit and learns to
//! down-weight occlusions and bad flow as training progresses.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Tensor, TensorError};
use crate::fields::{linear, mlp_init};

#[derive(Debug, Clone)]
pub struct ConfidenceNet {
    pub in_dim: usize,
    pub hidden: usize,
    params: BTreeMap<String, Tensor>,
}

impl ConfidenceNet {
    pub fn param_specs(in_dim: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
        vec![
            ("conf1.w".into(), vec![in_dim, hidden]),
            ("conf1.b".into(), vec![1, hidden]),
            ("conf2.w".into(), vec![hidden, 1]),
            ("conf2.b".into(), vec![1, 1]),
        ]
    }

    pub fn init<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> ConfidenceNet {
        let mut params = BTreeMap::new();
        let (w1, b1) = mlp_init(rng, in_dim, hidden);
        params.insert("conf1.w".to_string(), Tensor::param(w1, &[in_dim, hidden]));
        params.insert("conf1.b".to_string(), Tensor::param(b1, &[1, hidden]));
        // Zero final layer: sigmoid(0) = 0.5 for every input.
        params.insert(
            "conf2.w".to_string(),
            Tensor::param(vec![0.0; hidden], &[hidden, 1]),
        );
        params.insert("conf2.b".to_string(), Tensor::param(vec![0.0], &[1, 1]));
        ConfidenceNet {
            in_dim,
            hidden,
            params,
        }
    }

    pub fn from_params(
        in_dim: usize,
        hidden: usize,
        params: BTreeMap<String, Tensor>,
    ) -> Result<ConfidenceNet, TensorError> {
        for (name, shape) in Self::param_specs(in_dim, hidden) {
            match params.get(&name) {
                None => {
                    return Err(TensorError::InvalidArgument {
                        op: "confidence_from_params",
                        msg: format!("missing parameter {name:?}"),
                    })
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(TensorError::InvalidArgument {
                        op: "confidence_from_params",
                        msg: format!(
                            "parameter {name:?} has shape {:?}, expected {shape:?}",
                            t.shape()
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(ConfidenceNet {
            in_dim,
            hidden,
            params,
        })
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    /// `[n, in_dim] -> [n, 1]` confidences in `(0, 1)`.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor, TensorError> {
        if inputs.shape().len() != 2 || inputs.shape()[1] != self.in_dim {
            return Err(TensorError::InvalidArgument {
                op: "confidence_forward",
                msg: format!(
                    "expected [n, {}], got {:?}",
                    self.in_dim,
                    inputs.shape()
                ),
            });
        }
        let h = linear(inputs, &self.params["conf1.w"], &self.params["conf1.b"])?.relu();
        Ok(linear(&h, &self.params["conf2.w"], &self.params["conf2.b"])?.sigmoid())
    }
}
