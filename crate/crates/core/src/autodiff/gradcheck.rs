//! Finite-difference gradient checking.
//!
//! The oracle side only ever evaluates the function forward: symmetric
//! differences `(f(x+e) - f(x-e)) / 2e` per coordinate. It shares no code
//! with the backward rules it certifies, so a sign or factor error in any
//! backward implementation shows up as a relative-error spike here.

use super::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum allowed relative error.
    pub rel_tol: f64,
    /// Denominator floor: coordinates where both gradients are below this
    /// are compared absolutely, which keeps noise on near-zero gradients
    /// from registering as huge relative errors.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

impl GradCheckConfig {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        GradCheckConfig {
            rel_tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

impl GradReport {
    pub fn passed(&self, cfg: &GradCheckConfig) -> bool {
        self.max_rel_err < cfg.rel_tol
    }
}

/// Symmetric finite-difference gradient of a scalar function of flat inputs.
pub fn finite_diff_gradient<F>(f: F, inputs: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let mut grads: Vec<Vec<f64>> = inputs.iter().map(|x| vec![0.0; x.len()]).collect();
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = work[i][j];
            work[i][j] = orig + eps;
            let hi = f(&work);
            work[i][j] = orig - eps;
            let lo = f(&work);
            work[i][j] = orig;
            grads[i][j] = (hi - lo) / (2.0 * eps);
        }
    }
    grads
}

/// Check the backward pass of `f` (a scalar-valued graph builder) against
/// finite differences on the given `(values, shape)` inputs.
///
/// `f` must be a pure function of its tensor inputs — it is re-evaluated
/// many times at perturbed points.
pub fn gradcheck<F>(
    f: F,
    inputs: &[(Vec<f64>, Vec<usize>)],
    cfg: &GradCheckConfig,
) -> Result<GradReport, TensorError>
where
    F: Fn(&[Tensor]) -> Result<Tensor, TensorError>,
{
    // Analytic side.
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|(v, s)| Tensor::param(v.clone(), s))
        .collect();
    let out = f(&params)?;
    if out.numel() != 1 {
        return Err(TensorError::NonScalarLoss(out.shape().to_vec()));
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    // Numeric side: forward evaluations only.
    let eval = |flat: &[Vec<f64>]| -> f64 {
        let tensors: Vec<Tensor> = flat
            .iter()
            .zip(inputs)
            .map(|(v, (_, s))| Tensor::constant(v.clone(), s))
            .collect();
        f(&tensors).expect("gradcheck: function failed at perturbed point").item()
    };
    let flat: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let numeric = finite_diff_gradient(eval, &flat, cfg.eps);

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (&av, &nv)) in a.iter().zip(n.iter()).enumerate() {
            report.coords_checked += 1;
            let denom = av.abs().max(nv.abs()).max(cfg.abs_floor);
            let rel = (av - nv).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = i;
                report.worst_coord = j;
                report.worst_analytic = av;
                report.worst_numeric = nv;
            }
        }
    }
    Ok(report)
}
