//! Elementwise, reduction, and shape operations.
//!
//! Binary ops broadcast with trailing-dimension alignment (a dimension of 1
//! stretches; missing leading dimensions are treated as 1). Backward of a
//! broadcast op sum-reduces the gradient over the stretched dimensions.

use super::tensor::{BackwardCtx, BackwardFn, Tensor, TensorError};

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for (s, dim) in strides.iter_mut().rev().zip(shape.iter().rev()) {
        *s = acc;
        acc *= dim;
    }
    strides
}

/// Output shape of broadcasting `lhs` against `rhs`, trailing-aligned.
pub(crate) fn broadcast_shapes(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<Vec<usize>, TensorError> {
    let rank = lhs.len().max(rhs.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let l = if i < rank - lhs.len() { 1 } else { lhs[i - (rank - lhs.len())] };
        let r = if i < rank - rhs.len() { 1 } else { rhs[i - (rank - rhs.len())] };
        out[i] = if l == r {
            l
        } else if l == 1 {
            r
        } else if r == 1 {
            l
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: lhs.to_vec(),
                rhs: rhs.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides for reading an input of `shape` as if broadcast to `out_shape`
/// (stride 0 along stretched dimensions), trailing-aligned.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { strides[i] };
    }
    out
}

/// Iterates linear offsets of two broadcast inputs over the output index space.
struct PairIter {
    idx: Vec<usize>,
    shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    a_off: usize,
    b_off: usize,
    remaining: usize,
}

impl PairIter {
    fn new(out_shape: &[usize], a_shape: &[usize], b_shape: &[usize]) -> PairIter {
        PairIter {
            idx: vec![0; out_shape.len()],
            shape: out_shape.to_vec(),
            a_strides: broadcast_strides(a_shape, out_shape),
            b_strides: broadcast_strides(b_shape, out_shape),
            a_off: 0,
            b_off: 0,
            remaining: out_shape.iter().product(),
        }
    }
}

impl Iterator for PairIter {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if self.remaining == 0 {
            return None;
        }
        let item = (self.a_off, self.b_off);
        self.remaining -= 1;
        // Increment the multi-index with carry, updating offsets in place.
        for d in (0..self.shape.len()).rev() {
            self.idx[d] += 1;
            self.a_off += self.a_strides[d];
            self.b_off += self.b_strides[d];
            if self.idx[d] < self.shape[d] {
                break;
            }
            self.a_off -= self.a_strides[d] * self.shape[d];
            self.b_off -= self.b_strides[d] * self.shape[d];
            self.idx[d] = 0;
        }
        Some(item)
    }
}

fn binary_ew(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: fn(f64, f64) -> f64,
    // partials receive (a, b, y)
    da: fn(f64, f64, f64) -> f64,
    db: fn(f64, f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    let out_shape = broadcast_shapes(op, a.shape(), b.shape())?;
    let av = a.values();
    let bv = b.values();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for (ai, bi) in PairIter::new(&out_shape, a.shape(), b.shape()) {
        out.push(f(av[ai], bv[bi]));
    }
    let bw_shape = out_shape.clone();
    let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
        let a = &ctx.parents[0];
        let b = &ctx.parents[1];
        let av = a.values();
        let bv = b.values();
        let mut ga = vec![0.0; a.numel()];
        let mut gb = vec![0.0; b.numel()];
        for (k, (ai, bi)) in PairIter::new(&bw_shape, a.shape(), b.shape()).enumerate() {
            let up = ctx.upstream[k];
            let y = ctx.output_values[k];
            ga[ai] += up * da(av[ai], bv[bi], y);
            gb[bi] += up * db(av[ai], bv[bi], y);
        }
        vec![Some(ga), Some(gb)]
    });
    Ok(Tensor::from_op(op, out_shape, out, vec![a.clone(), b.clone()], backward))
}

fn unary_ew<F, D>(op: &'static str, a: &Tensor, f: F, df: D) -> Tensor
where
    F: Fn(f64) -> f64,
    // partial receives (x, y)
    D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    let out: Vec<f64> = a.values().iter().map(|&x| f(x)).collect();
    let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
        let xv = ctx.parents[0].values();
        let g = ctx
            .upstream
            .iter()
            .zip(xv.iter().zip(ctx.output_values))
            .map(|(up, (&x, &y))| up * df(x, y))
            .collect();
        vec![Some(g)]
    });
    Tensor::from_op(op, a.shape().to_vec(), out, vec![a.clone()], backward)
}

fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        binary_ew("add", self, rhs, |a, b| a + b, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        binary_ew("sub", self, rhs, |a, b| a - b, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        binary_ew("mul", self, rhs, |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        binary_ew(
            "div",
            self,
            rhs,
            |a, b| a / b,
            |_, b, _| 1.0 / b,
            |_, b, y| -y / b,
        )
    }

    pub fn neg(&self) -> Tensor {
        unary_ew("neg", self, |x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary_ew("exp", self, f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        unary_ew("log", self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn relu(&self) -> Tensor {
        unary_ew("relu", self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary_ew("sigmoid", self, sigmoid_stable, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&self) -> Tensor {
        unary_ew("softplus", self, softplus_stable, |x, _| sigmoid_stable(x))
    }

    pub fn sin(&self) -> Tensor {
        unary_ew("sin", self, f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor {
        unary_ew("cos", self, f64::cos, |x, _| -x.sin())
    }

    pub fn abs(&self) -> Tensor {
        unary_ew("abs", self, f64::abs, |x, _| x.signum() * if x == 0.0 { 0.0 } else { 1.0 })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary_ew("scale", self, move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary_ew("add_scalar", self, move |x| x + c, |_, _| 1.0)
    }

    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.values().iter().sum();
        let backward: BackwardFn = Box::new(|ctx: &BackwardCtx<'_>| {
            vec![Some(vec![ctx.upstream[0]; ctx.parents[0].numel()])]
        });
        Tensor::from_op("sum", vec![1], vec![total], vec![self.clone()], backward)
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        let total: f64 = self.values().iter().sum();
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            vec![Some(vec![ctx.upstream[0] / n; ctx.parents[0].numel()])]
        });
        Tensor::from_op("mean", vec![1], vec![total / n], vec![self.clone()], backward)
    }

    /// Sum over one axis, keeping it as size 1 (broadcast-friendly).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor, TensorError> {
        reduce_axis("sum_axis", self, axis, false)
    }

    /// Mean over one axis, keeping it as size 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor, TensorError> {
        reduce_axis("mean_axis", self, axis, true)
    }

    /// `sum(a * w)` as a single reduction; `a` and `w` must share a shape.
    pub fn weighted_sum(&self, w: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != w.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let total: f64 = self.values().iter().zip(w.values()).map(|(a, b)| a * b).sum();
        let backward: BackwardFn = Box::new(|ctx: &BackwardCtx<'_>| {
            let up = ctx.upstream[0];
            let av = ctx.parents[0].values();
            let wv = ctx.parents[1].values();
            let ga = wv.iter().map(|w| up * w).collect();
            let gw = av.iter().map(|a| up * a).collect();
            vec![Some(ga), Some(gw)]
        });
        Ok(Tensor::from_op(
            "weighted_sum",
            vec![1],
            vec![total],
            vec![self.clone(), w.clone()],
            backward,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        let count: usize = shape.iter().product();
        if count != self.numel() {
            return Err(TensorError::InvalidArgument {
                op: "reshape",
                msg: format!("cannot view {:?} as {:?}", self.shape(), shape),
            });
        }
        let backward: BackwardFn =
            Box::new(|ctx: &BackwardCtx<'_>| vec![Some(ctx.upstream.to_vec())]);
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.values().to_vec(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{} on axis {axis} of {:?}", start + len, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        let src = self.values();
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; ctx.parents[0].numel()];
            for o in 0..outer {
                let dst = (o * dim + start) * inner;
                let src = o * len * inner;
                g[dst..dst + len * inner].copy_from_slice(&ctx.upstream[src..src + len * inner]);
            }
            vec![Some(g)]
        });
        Ok(Tensor::from_op("slice", out_shape, out, vec![self.clone()], backward))
    }

    /// Select rows of a `[m, c]` tensor by index; indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor, TensorError> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: format!("expected rank-2 input, got {shape:?}"),
            });
        }
        let (m, c) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row index {bad} out of range for {m} rows"),
            });
        }
        let src = self.values();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let idx_owned = idx.to_vec();
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; ctx.parents[0].numel()];
            for (k, &i) in idx_owned.iter().enumerate() {
                for j in 0..c {
                    g[i * c + j] += ctx.upstream[k * c + j];
                }
            }
            vec![Some(g)]
        });
        Ok(Tensor::from_op(
            "gather_rows",
            vec![idx.len(), c],
            out,
            vec![self.clone()],
            backward,
        ))
    }
}

fn reduce_axis(
    op: &'static str,
    a: &Tensor,
    axis: usize,
    mean: bool,
) -> Result<Tensor, TensorError> {
    let shape = a.shape();
    if axis >= shape.len() {
        return Err(TensorError::InvalidArgument {
            op,
            msg: format!("axis {axis} out of range for {shape:?}"),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let dim = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let norm = if mean { dim as f64 } else { 1.0 };
    let src = a.values();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for d in 0..dim {
            let base = (o * dim + d) * inner;
            for i in 0..inner {
                out[o * inner + i] += src[base + i];
            }
        }
    }
    if mean {
        for v in &mut out {
            *v /= norm;
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
        let mut g = vec![0.0; ctx.parents[0].numel()];
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                for i in 0..inner {
                    g[base + i] = ctx.upstream[o * inner + i] / norm;
                }
            }
        }
        vec![Some(g)]
    });
    Ok(Tensor::from_op(op, out_shape, out, vec![a.clone()], backward))
}

/// Concatenate along `axis`; all other dimensions must agree.
pub fn concat(axis: usize, parts: &[Tensor]) -> Result<Tensor, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "concat",
            msg: "no tensors given".into(),
        });
    }
    let rank = parts[0].shape().len();
    for p in parts {
        if p.shape().len() != rank {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        for d in 0..rank {
            if d != axis && p.shape()[d] != parts[0].shape()[d] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
    }
    if axis >= rank {
        return Err(TensorError::InvalidArgument {
            op: "concat",
            msg: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    let outer: usize = parts[0].shape()[..axis].iter().product();
    let inner: usize = parts[0].shape()[axis + 1..].iter().product();
    let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total_dim: usize = dims.iter().sum();
    let mut out = Vec::with_capacity(outer * total_dim * inner);
    for o in 0..outer {
        for (p, &d) in parts.iter().zip(&dims) {
            let src = p.values();
            let base = o * d * inner;
            out.extend_from_slice(&src[base..base + d * inner]);
        }
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = total_dim;
    let dims_bw = dims.clone();
    let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
        let mut grads: Vec<Vec<f64>> =
            ctx.parents.iter().map(|p| vec![0.0; p.numel()]).collect();
        let mut src = 0usize;
        for o in 0..outer {
            for (g, &d) in grads.iter_mut().zip(&dims_bw) {
                let dst = o * d * inner;
                g[dst..dst + d * inner].copy_from_slice(&ctx.upstream[src..src + d * inner]);
                src += d * inner;
            }
        }
        grads.into_iter().map(Some).collect()
    });
    Ok(Tensor::from_op("concat", out_shape, out, parts.to_vec(), backward))
}
