//! Structured access ops: bilinear map sampling, patch unfolding, scans.

use super::tensor::{BackwardCtx, BackwardFn, Tensor, TensorError};

/// Corner indices and interpolation fractions for one clamped coordinate.
/// Returns `(i0, i1, frac, interior)`; `interior` is false when the raw
/// coordinate fell outside `[0, extent-1]` (gradient is zeroed there).
fn clamp_axis(raw: f64, extent: usize) -> (usize, usize, f64, bool) {
    let max = (extent - 1) as f64;
    let interior = extent > 1 && raw > 0.0 && raw < max;
    let x = raw.clamp(0.0, max);
    let i0 = (x.floor() as usize).min(extent.saturating_sub(2));
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, x - i0 as f64, interior)
}

impl Tensor {
    /// Sample a `[h,w,c]` map at `[n,2]` pixel coordinates given as `(x, y)`
    /// with integer coordinates sitting on pixel centers. Coordinates are
    /// clamped to the border; a clamped axis contributes zero coordinate
    /// gradient. Differentiable in both the map and the coordinates.
    pub fn bilinear_sample(&self, coords: &Tensor) -> Result<Tensor, TensorError> {
        let ms = self.shape();
        let cs = coords.shape();
        if ms.len() != 3 {
            return Err(TensorError::InvalidArgument {
                op: "bilinear_sample",
                msg: format!("expected [h,w,c] map, got {ms:?}"),
            });
        }
        if cs.len() != 2 || cs[1] != 2 {
            return Err(TensorError::InvalidArgument {
                op: "bilinear_sample",
                msg: format!("expected [n,2] coords, got {cs:?}"),
            });
        }
        let (h, w, c) = (ms[0], ms[1], ms[2]);
        if h == 0 || w == 0 {
            return Err(TensorError::InvalidArgument {
                op: "bilinear_sample",
                msg: "empty map".into(),
            });
        }
        let n = cs[0];
        let map = self.values();
        let cv = coords.values();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let (x0, x1, fx, _) = clamp_axis(cv[i * 2], w);
            let (y0, y1, fy, _) = clamp_axis(cv[i * 2 + 1], h);
            for ch in 0..c {
                let v00 = map[(y0 * w + x0) * c + ch];
                let v01 = map[(y0 * w + x1) * c + ch];
                let v10 = map[(y1 * w + x0) * c + ch];
                let v11 = map[(y1 * w + x1) * c + ch];
                out[i * c + ch] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                    + fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            let map = ctx.parents[0].values();
            let cv = ctx.parents[1].values();
            let mut gmap = vec![0.0; map.len()];
            let mut gcoords = vec![0.0; cv.len()];
            for i in 0..n {
                let (x0, x1, fx, x_in) = clamp_axis(cv[i * 2], w);
                let (y0, y1, fy, y_in) = clamp_axis(cv[i * 2 + 1], h);
                let mut dx = 0.0;
                let mut dy = 0.0;
                for ch in 0..c {
                    let up = ctx.upstream[i * c + ch];
                    let i00 = (y0 * w + x0) * c + ch;
                    let i01 = (y0 * w + x1) * c + ch;
                    let i10 = (y1 * w + x0) * c + ch;
                    let i11 = (y1 * w + x1) * c + ch;
                    gmap[i00] += up * (1.0 - fy) * (1.0 - fx);
                    gmap[i01] += up * (1.0 - fy) * fx;
                    gmap[i10] += up * fy * (1.0 - fx);
                    gmap[i11] += up * fy * fx;
                    dx += up
                        * ((1.0 - fy) * (map[i01] - map[i00]) + fy * (map[i11] - map[i10]));
                    dy += up
                        * ((1.0 - fx) * (map[i10] - map[i00]) + fx * (map[i11] - map[i01]));
                }
                if x_in {
                    gcoords[i * 2] = dx;
                }
                if y_in {
                    gcoords[i * 2 + 1] = dy;
                }
            }
            vec![Some(gmap), Some(gcoords)]
        });
        Ok(Tensor::from_op(
            "bilinear_sample",
            vec![n, c],
            out,
            vec![self.clone(), coords.clone()],
            backward,
        ))
    }

    /// Extract zero-padded `k x k` patches on a stride grid from a `[h,w,c]`
    /// map, flattened to `[oh*ow, k*k*c]` (patch entries ordered ky, kx, c).
    /// This is the im2col step; a convolution is `unfold` followed by a
    /// matrix product with a `[k*k*c_in, c_out]` weight.
    pub fn unfold(&self, k: usize, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
        let ms = self.shape();
        if ms.len() != 3 {
            return Err(TensorError::InvalidArgument {
                op: "unfold",
                msg: format!("expected [h,w,c] input, got {ms:?}"),
            });
        }
        let (h, w, c) = (ms[0], ms[1], ms[2]);
        if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(TensorError::InvalidArgument {
                op: "unfold",
                msg: format!("kernel {k} stride {stride} pad {pad} on {h}x{w}"),
            });
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let src = self.values();
        let mut out = vec![0.0; oh * ow * k * k * c];
        let mut write = 0usize;
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            let base = (iy as usize * w + ix as usize) * c;
                            out[write..write + c].copy_from_slice(&src[base..base + c]);
                        }
                        write += c;
                    }
                }
            }
        }
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; ctx.parents[0].numel()];
            let mut read = 0usize;
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                let base = (iy as usize * w + ix as usize) * c;
                                for ch in 0..c {
                                    g[base + ch] += ctx.upstream[read + ch];
                                }
                            }
                            read += c;
                        }
                    }
                }
            }
            vec![Some(g)]
        });
        Ok(Tensor::from_op(
            "unfold",
            vec![oh * ow, k * k * c],
            out,
            vec![self.clone()],
            backward,
        ))
    }

    /// Exclusive prefix sum along `axis`: `out[i] = sum of inputs before i`.
    pub fn cumsum_exclusive(&self, axis: usize) -> Result<Tensor, TensorError> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op: "cumsum_exclusive",
                msg: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let dim = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.values();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0;
                for d in 0..dim {
                    let at = (o * dim + d) * inner + i;
                    out[at] = acc;
                    acc += src[at];
                }
            }
        }
        let backward: BackwardFn = Box::new(move |ctx: &BackwardCtx<'_>| {
            // d/d in[j] of sum_i up[i] * out[i] = sum over i > j of up[i]
            let mut g = vec![0.0; ctx.upstream.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let mut acc = 0.0;
                    for d in (0..dim).rev() {
                        let at = (o * dim + d) * inner + i;
                        g[at] = acc;
                        acc += ctx.upstream[at];
                    }
                }
            }
            vec![Some(g)]
        });
        Ok(Tensor::from_op(
            "cumsum_exclusive",
            shape.to_vec(),
            out,
            vec![self.clone()],
            backward,
        ))
    }
}
