//! Core tensor type and the backward pass.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to `{op}`: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor is not tracked; nothing to differentiate")]
    Untracked,
}

/// Context handed to an op's backward closure.
pub(crate) struct BackwardCtx<'a> {
    pub output_values: &'a [f64],
    pub upstream: &'a [f64],
    pub parents: &'a [Tensor],
}

/// Per-parent gradient contributions. `None` means "no gradient flows here".
pub(crate) type BackwardFn =
    Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) struct Inner {
    id: u64,
    op: &'static str,
    shape: Vec<usize>,
    values: Vec<f64>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    tracked: bool,
    grad: Mutex<Option<Vec<f64>>>,
}

/// Immutable dense tensor; cheap to clone (shared storage).
///
/// Two tensors with identical values are still distinct graph nodes:
/// identity is the node id, not the contents.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("op", &self.0.op)
            .field("shape", &self.0.shape)
            .field("tracked", &self.0.tracked)
            .finish()
    }
}

impl Tensor {
    fn new_inner(
        op: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let tracked = requires_grad || parents.iter().any(|p| p.is_tracked());
        // Prune: an output of untracked inputs needs no graph history.
        let (parents, backward) = if tracked {
            (parents, backward)
        } else {
            (Vec::new(), None)
        };
        Tensor(Arc::new(Inner {
            id: fresh_id(),
            op,
            shape,
            values,
            parents,
            backward,
            requires_grad,
            tracked,
            grad: Mutex::new(None),
        }))
    }

    /// Constant leaf; no gradient ever flows into it.
    pub fn constant(values: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "constant: {} values for shape {:?}",
            values.len(),
            shape
        );
        Tensor::new_inner("constant", shape.to_vec(), values, Vec::new(), None, false)
    }

    /// Trainable leaf; `backward` accumulates into its `grad` buffer.
    pub fn param(values: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "param: {} values for shape {:?}",
            values.len(),
            shape
        );
        Tensor::new_inner("param", shape.to_vec(), values, Vec::new(), None, true)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(vec![v], &[1])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(vec![0.0; shape.iter().product()], shape)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::constant(vec![1.0; shape.iter().product()], shape)
    }

    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        Tensor::new_inner(op, shape, values, parents, Some(backward), false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    /// Scalar contents of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.values[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.0.tracked
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Copy of the accumulated gradient, if a backward pass has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.0.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Cut the tensor out of the graph: same values, no history.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.0.values.clone(), &self.0.shape)
    }

    /// Reverse-mode sweep from a scalar loss. Visits each reachable node
    /// exactly once and accumulates gradients into every `param` leaf.
    /// Repeated calls accumulate until `zero_grad`.
    pub fn backward(&self) -> Result<(), TensorError> {
        if !self.is_tracked() {
            return Err(TensorError::Untracked);
        }
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }

        // Iterative post-order DFS over tracked nodes (inputs before outputs).
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id(), ());
        while let Some((node, child_idx)) = stack.pop() {
            let parents = &node.0.parents;
            if child_idx < parents.len() {
                let next = parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if next.is_tracked() && !visited.contains_key(&next.id()) {
                    visited.insert(next.id(), ());
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(upstream) = grads.remove(&node.id()) else {
                continue;
            };
            if node.0.requires_grad {
                node.accumulate_grad(&upstream);
            }
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let ctx = BackwardCtx {
                output_values: &node.0.values,
                upstream: &upstream,
                parents: &node.0.parents,
            };
            let contributions = backward(&ctx);
            debug_assert_eq!(contributions.len(), node.0.parents.len());
            for (parent, contribution) in node.0.parents.iter().zip(contributions) {
                let Some(contribution) = contribution else {
                    continue;
                };
                if !parent.is_tracked() {
                    continue;
                }
                debug_assert_eq!(contribution.len(), parent.numel());
                grads
                    .entry(parent.id())
                    .and_modify(|g| {
                        for (gi, ci) in g.iter_mut().zip(&contribution) {
                            *gi += ci;
                        }
                    })
                    .or_insert(contribution);
            }
        }
        Ok(())
    }
}
