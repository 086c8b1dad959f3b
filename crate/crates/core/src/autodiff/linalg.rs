//! Matrix product, transpose, and a differentiable 3x3 SVD.

use nalgebra::Matrix3;

use super::kernels;
use super::tensor::{BackwardCtx, BackwardFn, Tensor, TensorError};

/// Pairs of singular values closer than this (in sigma^2) have their
/// rotation-gradient contribution zeroed instead of amplified.
pub(crate) const SVD_GAP_CLAMP: f64 = 1e-6;

impl Tensor {
    /// `[m,k] x [k,n] -> [m,n]`, row-major.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a_shape.to_vec(),
                rhs: b_shape.to_vec(),
            });
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let out = kernels::mm(self.values(), rhs.values(), m, k, n);
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            let a = ctx.parents[0].values();
            let b = ctx.parents[1].values();
            // dA = dC * B^T ; dB = A^T * dC
            let ga = kernels::mm_nt(ctx.upstream, b, m, n, k);
            let gb = kernels::mm_tn(a, ctx.upstream, m, k, n);
            vec![Some(ga), Some(gb)]
        });
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2d(&self) -> Result<Tensor, TensorError> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose2d",
                msg: format!("expected rank-2 input, got {shape:?}"),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let src = self.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; m * n];
            for j in 0..n {
                for i in 0..m {
                    g[i * n + j] = ctx.upstream[j * m + i];
                }
            }
            vec![Some(g)]
        });
        Ok(Tensor::from_op("transpose2d", vec![n, m], out, vec![self.clone()], backward))
    }

    /// Full SVD of a 3x3 matrix, packed as `[U(9) | sigma(3) | V(9)]` with
    /// singular values in descending order and `A = U * diag(sigma) * V^T`.
    ///
    /// Backward follows the standard SVD differential; near-equal singular
    /// values (gap in sigma^2 below `1e-6`) have that pair's contribution
    /// zeroed rather than divided by a vanishing gap.
    pub fn svd3(&self) -> Result<Tensor, TensorError> {
        if self.shape() != [3, 3] {
            return Err(TensorError::InvalidArgument {
                op: "svd3",
                msg: format!("expected [3,3], got {:?}", self.shape()),
            });
        }
        let v = self.values();
        let a = Matrix3::from_row_slice(v);
        let svd = a.svd(true, true);
        let u = svd.u.expect("svd3: U requested");
        let vt = svd.v_t.expect("svd3: V^T requested");
        let s = svd.singular_values;
        debug_assert!(s[0] >= s[1] && s[1] >= s[2], "svd3: unsorted singular values");

        let mut packed = Vec::with_capacity(21);
        for i in 0..3 {
            for j in 0..3 {
                packed.push(u[(i, j)]);
            }
        }
        packed.extend_from_slice(&[s[0], s[1], s[2]]);
        for i in 0..3 {
            for j in 0..3 {
                packed.push(vt[(j, i)]); // store V, not V^T
            }
        }

        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            let out = ctx.output_values;
            let up = ctx.upstream;
            let u = Matrix3::from_row_slice(&out[0..9]);
            let s = [out[9], out[10], out[11]];
            let vm = Matrix3::from_row_slice(&out[12..21]);
            let gu = Matrix3::from_row_slice(&up[0..9]);
            let gs = [up[9], up[10], up[11]];
            let gv = Matrix3::from_row_slice(&up[12..21]);

            // D = (F o (Gu - Gu^T)) S + S (F o (Gv - Gv^T)) + diag(gs)
            // with Gu = U^T dL/dU, Gv = V^T dL/dV, F_ij = 1/(s_j^2 - s_i^2).
            let gu_t = u.transpose() * gu;
            let gv_t = vm.transpose() * gv;
            let mut d = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        d[(i, j)] = gs[i];
                        continue;
                    }
                    let gap = s[j] * s[j] - s[i] * s[i];
                    let f = if gap.abs() < SVD_GAP_CLAMP { 0.0 } else { 1.0 / gap };
                    let du_term = f * s[j] * (gu_t[(i, j)] - gu_t[(j, i)]);
                    let dv_term = f * s[i] * (gv_t[(i, j)] - gv_t[(j, i)]);
                    d[(i, j)] += du_term + dv_term;
                }
            }
            let ga = u * d * vm.transpose();
            let mut g = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    g[i * 3 + j] = ga[(i, j)];
                }
            }
            vec![Some(g)]
        });
        Ok(Tensor::from_op("svd3", vec![21], packed, vec![self.clone()], backward))
    }
}

/// Unpack `svd3` output into `(U [3,3], sigma [3], V [3,3])`.
pub fn svd3_parts(packed: &Tensor) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let u = packed.slice(0, 0, 9)?.reshape(&[3, 3])?;
    let s = packed.slice(0, 9, 3)?;
    let v = packed.slice(0, 12, 9)?.reshape(&[3, 3])?;
    Ok((u, s, v))
}

/// Determinant of a row-major 3x3 slice.
pub(crate) fn det3(m: &[f64]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_values_and_grads() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::param(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.values(), &[19.0, 22.0, 43.0, 50.0]);
        c.sum_all().backward().unwrap();
        // dC = ones; dA = ones * B^T, dB = A^T * ones
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn svd_reconstructs_input() {
        let a = Tensor::constant(
            vec![2.0, -1.0, 0.5, 0.3, 1.5, -0.2, -0.7, 0.1, 1.1],
            &[3, 3],
        );
        let packed = a.svd3().unwrap();
        let (u, s, v) = svd3_parts(&packed).unwrap();
        let sv = s.values();
        assert!(sv[0] >= sv[1] && sv[1] >= sv[2] && sv[2] >= 0.0);
        // U diag(s) V^T == A
        let mut recon = [0.0; 9];
        let (uv, vv) = (u.values(), v.values());
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    recon[i * 3 + j] += uv[i * 3 + k] * sv[k] * vv[j * 3 + k];
                }
            }
        }
        for (r, e) in recon.iter().zip(a.values()) {
            assert_relative_eq!(r, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn svd_factors_are_orthonormal() {
        let a = Tensor::constant(
            vec![0.9, 0.2, -0.4, 0.1, 1.4, 0.3, -0.5, 0.25, 0.8],
            &[3, 3],
        );
        let (u, _, v) = svd3_parts(&a.svd3().unwrap()).unwrap();
        for m in [u.values(), v.values()] {
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| m[k * 3 + i] * m[k * 3 + j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(dot, expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn det3_matches_nalgebra() {
        let m = [0.3, -1.2, 0.8, 2.0, 0.5, -0.1, 0.7, 0.9, 1.4];
        let n = Matrix3::from_row_slice(&m);
        assert_relative_eq!(det3(&m), n.determinant(), epsilon = 1e-12);
    }
}
