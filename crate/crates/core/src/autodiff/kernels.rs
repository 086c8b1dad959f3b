//! Dense matrix kernels shared by the matmul op and its backward pass.
//!
//! `set_compute_f32(true)` routes these kernels through `f32` accumulation
//! for roughly 2x throughput. Storage stays `f64`; the switch only changes
//! kernel arithmetic, so it must stay off for gradient checking.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static COMPUTE_F32: AtomicBool = AtomicBool::new(false);

/// Work threshold (multiply-adds) above which kernels parallelize over rows.
const PAR_FLOPS: usize = 1 << 18;

pub fn set_compute_f32(enabled: bool) {
    COMPUTE_F32.store(enabled, Ordering::Relaxed);
}

pub fn compute_in_f32() -> bool {
    COMPUTE_F32.load(Ordering::Relaxed)
}

/// c[m,n] = a[m,k] * b[k,n]
pub fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if compute_in_f32() {
        return mm_f32(a, b, m, k, n);
    }
    let mut c = vec![0.0f64; m * n];
    let row = |ci: &mut [f64], i: usize| {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cij, bpj) in ci.iter_mut().zip(brow) {
                *cij += aip * bpj;
            }
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
    c
}

fn mm_f32(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let a32: Vec<f32> = a.iter().map(|&x| x as f32).collect();
    let b32: Vec<f32> = b.iter().map(|&x| x as f32).collect();
    let mut c = vec![0.0f32; m * n];
    let row = |ci: &mut [f32], i: usize| {
        for p in 0..k {
            let aip = a32[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b32[p * n..(p + 1) * n];
            for (cij, bpj) in ci.iter_mut().zip(brow) {
                *cij += aip * bpj;
            }
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
    c.into_iter().map(|x| x as f64).collect()
}

/// c[m,n] = a[m,k] * b[n,k]^T  (b given row-major as [n,k])
pub fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * n];
    let row = |ci: &mut [f64], i: usize| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cij) in ci.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (aip, bjp) in arow.iter().zip(brow) {
                acc += aip * bjp;
            }
            *cij = acc;
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
    c
}

/// c[k,n] = a[m,k]^T * b[m,n]  (a given row-major as [m,k])
pub fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; k * n];
    // Serial over m to keep accumulation order fixed; each output row p
    // gathers from every input row, so row-parallelism doesn't apply here.
    // Parallelize over output rows instead when the work is large.
    let row = |cp: &mut [f64], p: usize| {
        for i in 0..m {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (cpj, bij) in cp.iter_mut().zip(brow) {
                *cpj += aip * bij;
            }
        }
    };
    if m * k * n >= PAR_FLOPS && k > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(p, cp)| row(cp, p));
    } else {
        for (p, cp) in c.chunks_mut(n).enumerate() {
            row(cp, p);
        }
    }
    c
}
