//! Built-in verification suites: finite-difference checks for every tensor
//! operation (plus the pose solver and volume compositing as end-to-end
//! paths), and closed-form rendering checks against analytic scenes.
//!
//! The fault-injection switch deliberately routes one check through an
//! operation with a wrong backward pass; a healthy checker must then report
//! that check as failed. It exists to prove the harness can actually catch
//! a broken gradient, not just bless working ones.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    concat, gradcheck, svd3_parts, BackwardFn, GradCheckConfig, Tensor, TensorError,
};
use crate::fields::{AnalyticScene, Field, Primitive, Shape, Texture};
use crate::geometry::{rotation_exp, rotation_geodesic, Intrinsics, Ray, SE3Pose};
use crate::renderer::{render_image, render_rays, RenderConfig};
use crate::sceneflow::weighted_procrustes;

use super::brute_force_alignment;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    None,
    /// Route the sigmoid check through an op whose backward scales the
    /// gradient by 1.01; the check must fail.
    WrongGradient,
}

/// Identity forward, deliberately wrong backward (gradient scaled by 1.01).
fn faulty_identity(x: &Tensor) -> Tensor {
    let backward: BackwardFn = Box::new(|ctx| {
        vec![Some(ctx.upstream.iter().map(|g| g * 1.01).collect())]
    });
    Tensor::from_op(
        "faulty_identity",
        x.shape().to_vec(),
        x.values().to_vec(),
        vec![x.clone()],
        backward,
    )
}

/// Multiply by a fixed, sign-varying mask and sum, so a wrong gradient in
/// any single coordinate shows up instead of cancelling.
fn masked_sum(t: &Tensor) -> Result<Tensor, TensorError> {
    let mask: Vec<f64> = (0..t.numel())
        .map(|i| ((i.wrapping_mul(2654435761)) % 17) as f64 * 0.25 - 2.0)
        .collect();
    Ok(t.mul(&Tensor::constant(mask, t.shape()))?.sum_all())
}

fn ramp(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    // Deterministic, well-scattered values strictly inside (lo, hi).
    (0..n)
        .map(|i| {
            let mut z = (i as u64).wrapping_add(0x9E3779B97F4A7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            let u = (z >> 11) as f64 / (1u64 << 53) as f64;
            lo + (hi - lo) * (0.05 + 0.9 * u)
        })
        .collect()
}

type CheckFn = Box<dyn Fn(&[Tensor]) -> Result<Tensor, TensorError>>;

/// Run finite-difference gradient checks across the op set. Returns one
/// outcome per named check.
pub fn gradcheck_suite(fault: FaultInjection) -> Vec<CheckOutcome> {
    let mut checks: Vec<(&'static str, Vec<(Vec<f64>, Vec<usize>)>, CheckFn)> = Vec::new();

    checks.push((
        "add_broadcast",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3]), (ramp(3, -1.0, 1.0), vec![1, 3])],
        Box::new(|xs| masked_sum(&xs[0].add(&xs[1])?)),
    ));
    checks.push((
        "sub",
        vec![(ramp(4, -1.0, 1.0), vec![2, 2]), (ramp(4, -1.0, 1.0), vec![2, 2])],
        Box::new(|xs| masked_sum(&xs[0].sub(&xs[1])?)),
    ));
    checks.push((
        "mul_broadcast",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3]), (ramp(3, 0.5, 1.5), vec![1, 3])],
        Box::new(|xs| masked_sum(&xs[0].mul(&xs[1])?)),
    ));
    checks.push((
        "div",
        vec![(ramp(4, -1.0, 1.0), vec![2, 2]), (ramp(4, 0.5, 2.0), vec![2, 2])],
        Box::new(|xs| masked_sum(&xs[0].div(&xs[1])?)),
    ));
    checks.push((
        "neg_scale_add_scalar",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].neg().scale(1.7).add_scalar(0.3))),
    ));
    checks.push((
        "exp",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].exp())),
    ));
    checks.push((
        "log",
        vec![(ramp(6, 0.5, 3.0), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].log())),
    ));
    checks.push((
        "relu",
        // Values bounded away from the kink at zero.
        vec![(ramp(6, 0.2, 1.0).iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -v }).collect(), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].relu())),
    ));
    checks.push((
        "abs",
        vec![(ramp(6, 0.2, 1.0).iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -v }).collect(), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].abs())),
    ));
    checks.push((
        "sigmoid",
        vec![(ramp(6, -2.0, 2.0), vec![2, 3])],
        match fault {
            FaultInjection::None => {
                Box::new(|xs: &[Tensor]| masked_sum(&xs[0].sigmoid())) as CheckFn
            }
            FaultInjection::WrongGradient => {
                Box::new(|xs: &[Tensor]| masked_sum(&faulty_identity(&xs[0].sigmoid()))) as CheckFn
            }
        },
    ));
    checks.push((
        "softplus",
        vec![(ramp(6, -3.0, 3.0), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].softplus())),
    ));
    checks.push((
        "sin_cos",
        vec![(ramp(6, -2.0, 2.0), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].sin())?.add(&masked_sum(&xs[0].cos())?)),
    ));
    checks.push((
        "mean_all",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3])],
        Box::new(|xs| Ok(xs[0].mean_all())),
    ));
    checks.push((
        "sum_axis",
        vec![(ramp(12, -1.0, 1.0), vec![2, 3, 2])],
        Box::new(|xs| masked_sum(&xs[0].sum_axis(1)?)),
    ));
    checks.push((
        "mean_axis",
        vec![(ramp(12, -1.0, 1.0), vec![2, 3, 2])],
        Box::new(|xs| masked_sum(&xs[0].mean_axis(2)?)),
    ));
    checks.push((
        "weighted_sum",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3]), (ramp(6, 0.1, 1.0), vec![2, 3])],
        Box::new(|xs| xs[0].weighted_sum(&xs[1])),
    ));
    checks.push((
        "reshape_slice",
        vec![(ramp(12, -1.0, 1.0), vec![2, 6])],
        Box::new(|xs| masked_sum(&xs[0].reshape(&[3, 4])?.slice(1, 1, 2)?)),
    ));
    checks.push((
        "concat",
        vec![(ramp(4, -1.0, 1.0), vec![2, 2]), (ramp(6, -1.0, 1.0), vec![2, 3])],
        Box::new(|xs| masked_sum(&concat(1, &[xs[0].clone(), xs[1].clone()])?)),
    ));
    checks.push((
        "gather_rows",
        vec![(ramp(12, -1.0, 1.0), vec![4, 3])],
        // A repeated row checks gradient accumulation, an untouched row
        // checks zeroing.
        Box::new(|xs| masked_sum(&xs[0].gather_rows(&[2, 0, 2])?)),
    ));
    checks.push((
        "matmul",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3]), (ramp(6, -1.0, 1.0), vec![3, 2])],
        Box::new(|xs| masked_sum(&xs[0].matmul(&xs[1])?)),
    ));
    checks.push((
        "transpose",
        vec![(ramp(6, -1.0, 1.0), vec![2, 3])],
        Box::new(|xs| masked_sum(&xs[0].transpose2d()?)),
    ));
    checks.push((
        "svd_rotation_path",
        vec![(
            vec![0.9, 0.2, -0.1, -0.3, 1.1, 0.25, 0.15, -0.2, 0.8],
            vec![3, 3],
        )],
        Box::new(|xs| {
            let packed = xs[0].svd3()?;
            let (u, sigma, v) = svd3_parts(&packed)?;
            // U V^T and the singular values are invariant to the SVD's
            // per-column sign gauge, so finite differences are well posed.
            masked_sum(&u.matmul(&v.transpose2d()?)?)?.add(&sigma.sum_all())
        }),
    ));
    checks.push((
        "bilinear_sample",
        vec![
            (ramp(24, -1.0, 1.0), vec![3, 4, 2]),
            (vec![0.4, 1.3, 2.6, 0.7, 1.5, 1.2], vec![3, 2]),
        ],
        Box::new(|xs| masked_sum(&xs[0].bilinear_sample(&xs[1])?)),
    ));
    checks.push((
        "unfold",
        vec![(ramp(32, -1.0, 1.0), vec![4, 4, 2])],
        Box::new(|xs| masked_sum(&xs[0].unfold(3, 2, 1)?)),
    ));
    checks.push((
        "cumsum_exclusive",
        vec![(ramp(10, -1.0, 1.0), vec![2, 5])],
        Box::new(|xs| masked_sum(&xs[0].cumsum_exclusive(1)?)),
    ));
    checks.push((
        "pose_solver",
        vec![
            (ramp(15, -1.0, 1.0), vec![5, 3]),
            (ramp(15, -1.2, 0.8), vec![5, 3]),
            (ramp(5, 0.2, 0.9), vec![5, 1]),
        ],
        Box::new(|xs| {
            let pose = weighted_procrustes(&xs[0], &xs[1], &xs[2])?;
            masked_sum(&pose.r)?.add(&masked_sum(&pose.t)?)
        }),
    ));
    checks.push((
        "volume_compositing",
        vec![
            (vec![0.3, -0.2, 0.5], vec![3, 1]),
            (ramp(9, -0.5, 0.5), vec![3, 3]),
        ],
        Box::new(|xs| {
            struct Toy {
                ws: Tensor,
                wc: Tensor,
            }
            impl Field for Toy {
                fn query(&self, pts: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
                    Ok((
                        pts.matmul(&self.ws)?.softplus(),
                        pts.matmul(&self.wc)?.sigmoid(),
                    ))
                }
            }
            let field = Toy {
                ws: xs[0].clone(),
                wc: xs[1].clone(),
            };
            let rays = [
                Ray {
                    origin: Vector3::zeros(),
                    dir: Vector3::new(0.0, 0.0, 1.0),
                },
                Ray {
                    origin: Vector3::new(0.2, -0.1, 0.0),
                    dir: Vector3::new(-0.1, 0.2, 1.0).normalize(),
                },
            ];
            let cfg = RenderConfig {
                n_samples: 6,
                near: 0.5,
                far: 2.5,
                jitter: false,
                seed: 0,
            };
            let out = render_rays(&field, &rays, None, &cfg, 0)?;
            masked_sum(&out.color)?
                .add(&masked_sum(&out.surface)?)?
                .add(&masked_sum(&out.depth)?)?
                .add(&masked_sum(&out.opacity)?)
        }),
    ));

    let cfg = GradCheckConfig::default();
    checks
        .into_iter()
        .map(|(name, inputs, f)| match gradcheck(f, &inputs, &cfg) {
            Ok(report) => CheckOutcome {
                name: name.to_string(),
                passed: report.passed(&cfg),
                detail: format!(
                    "max relative gradient error {:.3e} over {} coordinates",
                    report.max_rel_err, report.coords_checked
                ),
            },
            Err(e) => CheckOutcome {
                name: name.to_string(),
                passed: false,
                detail: format!("check failed to run: {e}"),
            },
        })
        .collect()
}

/// Random weighted rigid-alignment instance: `n` points, a rotation of at
/// most `max_angle`, and positive weights; `xp` carries `x` back through the
/// inverse motion exactly.
fn alignment_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_angle: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, SE3Pose) {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    )
    .normalize();
    let g = SE3Pose::new(
        rotation_exp(axis * rng.gen_range(0.0..max_angle)),
        Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ),
    );
    let ginv = g.inverse();
    let mut x = Vec::with_capacity(3 * n);
    let mut xp = Vec::with_capacity(3 * n);
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        let p = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(1.0..3.0),
        );
        let q = ginv.transform_point(&p);
        x.extend([p.x, p.y, p.z]);
        xp.extend([q.x, q.y, q.z]);
        w.push(rng.gen_range(0.1..1.0));
    }
    (x, xp, w, g)
}

fn solve_flat(x: &[f64], xp: &[f64], w: &[f64]) -> Result<SE3Pose, TensorError> {
    let n = w.len();
    let pose = weighted_procrustes(
        &Tensor::constant(x.to_vec(), &[n, 3]),
        &Tensor::constant(xp.to_vec(), &[n, 3]),
        &Tensor::constant(w.to_vec(), &[n, 1]),
    )?;
    Ok(pose.to_se3())
}

/// Closed-form pose-solver checks: exactness on clean weighted instances,
/// the reflection guard on noisy near-planar ones, and agreement with the
/// brute-force descent reference.
pub fn procrustes_suite() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(41);

    // 1. Noiseless weighted instances are recovered to solver precision.
    {
        let mut worst_rot = 0.0f64;
        let mut worst_trans = 0.0f64;
        let mut failures = 0;
        for _ in 0..25 {
            let (x, xp, w, truth) = alignment_instance(&mut rng, 100, 0.5);
            match solve_flat(&x, &xp, &w) {
                Ok(est) => {
                    let dr = rotation_geodesic(&est.rotation, &truth.rotation);
                    let dt = (est.translation - truth.translation).norm();
                    worst_rot = worst_rot.max(dr);
                    worst_trans = worst_trans.max(dt);
                    if dr > 1e-9 || dt > 1e-9 {
                        failures += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        out.push(CheckOutcome {
            name: "procrustes_exact_recovery".into(),
            passed: failures == 0,
            detail: format!(
                "25 clean instances; worst rotation {worst_rot:.2e}, worst translation {worst_trans:.2e}"
            ),
        });
    }

    // 2. Near-planar noisy instances never come back as reflections.
    {
        let mut min_det = f64::INFINITY;
        let mut failures = 0;
        for _ in 0..10 {
            let (mut x, mut xp, w, _) = alignment_instance(&mut rng, 60, 0.4);
            // Flatten to a plane, then perturb both sides slightly.
            for i in 0..w.len() {
                x[3 * i + 2] = 2.0;
                xp[3 * i + 2] = 2.0;
            }
            for v in x.iter_mut().chain(xp.iter_mut()) {
                *v += rng.gen_range(-1e-3..1e-3);
            }
            match solve_flat(&x, &xp, &w) {
                Ok(est) => {
                    let det = est.rotation.determinant();
                    min_det = min_det.min(det);
                    if det < 0.999 {
                        failures += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        out.push(CheckOutcome {
            name: "procrustes_reflection_guard".into(),
            passed: failures == 0,
            detail: format!("10 noisy near-planar instances; min det(R) {min_det:.6}"),
        });
    }

    // 3. The closed form agrees with independent descent on the same cost.
    {
        let mut worst = 0.0f64;
        let mut failures = 0;
        for _ in 0..3 {
            let (mut x, xp, w, _) = alignment_instance(&mut rng, 12, 0.3);
            // Noise makes the optimum nontrivial for both solvers.
            for v in x.iter_mut() {
                *v += rng.gen_range(-0.02..0.02);
            }
            match solve_flat(&x, &xp, &w) {
                Ok(est) => {
                    let closed = crate::verify::weighted_alignment_cost(&x, &xp, &w, &est);
                    let descent = brute_force_alignment(&x, &xp, &w, 4000);
                    let gap = (closed - descent.cost).abs();
                    worst = worst.max(gap);
                    // The closed form is the global optimum: it may only be
                    // better, and never worse by more than the reference's
                    // own convergence slack.
                    if closed > descent.cost + 1e-6 || gap > 1e-4 {
                        failures += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        out.push(CheckOutcome {
            name: "procrustes_matches_descent_reference".into(),
            passed: failures == 0,
            detail: format!("3 noisy instances; worst cost gap {worst:.2e}"),
        });
    }

    out
}

fn forward_ray() -> Ray {
    Ray {
        origin: Vector3::zeros(),
        dir: Vector3::new(0.0, 0.0, 1.0),
    }
}

/// Closed-form rendering checks on analytic scenes.
pub fn renderer_suite() -> Vec<CheckOutcome> {
    let mut out = Vec::new();

    // 1. Constant medium: opacity must equal 1 - exp(-amp * length).
    {
        let scene = AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Medium {
                    min: Vector3::new(-1.0, -1.0, 1.0),
                    max: Vector3::new(1.0, 1.0, 3.0),
                },
                amplitude: 0.7,
                softness: 0.0,
                texture: Texture::Constant {
                    color: [0.6, 0.3, 0.1],
                },
            }],
            background: [0.0, 0.0, 0.0],
        };
        let cfg = RenderConfig {
            n_samples: 256,
            near: 1.0,
            far: 3.0,
            jitter: false,
            seed: 0,
        };
        let res = render_rays(&scene, &[forward_ray()], None, &cfg, 0).unwrap();
        let got = res.opacity.values()[0];
        let want = 1.0 - (-0.7f64 * 2.0).exp();
        let err = (got - want).abs();
        out.push(CheckOutcome {
            name: "medium_transmittance_closed_form".into(),
            passed: err < 1e-3,
            detail: format!("opacity {got:.6} vs closed form {want:.6} (|err| {err:.2e})"),
        });
    }

    // 2. Hard surface: expected termination within half a sample spacing.
    {
        let scene = AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Box {
                    min: Vector3::new(-1.0, -1.0, 2.0),
                    max: Vector3::new(1.0, 1.0, 4.0),
                },
                amplitude: 1e4,
                softness: 1e-4,
                texture: Texture::Constant {
                    color: [1.0, 1.0, 1.0],
                },
            }],
            background: [0.0, 0.0, 0.0],
        };
        let cfg = RenderConfig {
            n_samples: 256,
            near: 0.5,
            far: 3.5,
            jitter: false,
            seed: 0,
        };
        let dt = (cfg.far - cfg.near) / cfg.n_samples as f64;
        let res = render_rays(&scene, &[forward_ray()], None, &cfg, 0).unwrap();
        let depth = res.depth.values()[0];
        let err = (depth - 2.0).abs();
        out.push(CheckOutcome {
            name: "hard_surface_termination".into(),
            passed: err <= 0.5 * dt + 1e-9,
            detail: format!("depth {depth:.6} vs face 2.0 (|err| {err:.2e}, half spacing {:.2e})", 0.5 * dt),
        });
    }

    // 3. Quadrature error halves when the sample count doubles.
    {
        let scene = AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: Vector3::new(0.0, 0.0, 2.0),
                    radius: 0.8,
                },
                amplitude: 2.5,
                softness: 0.02,
                texture: Texture::Constant {
                    color: [0.5, 0.5, 0.5],
                },
            }],
            background: [0.0, 0.0, 0.0],
        };
        let rays: Vec<Ray> = (0..9)
            .map(|i| {
                let dx = (i % 3) as f64 * 0.11 - 0.11;
                let dy = (i / 3) as f64 * 0.13 - 0.13;
                Ray {
                    origin: Vector3::zeros(),
                    dir: Vector3::new(dx, dy, 1.0).normalize(),
                }
            })
            .collect();
        let opacity_at = |n: usize| -> Vec<f64> {
            let cfg = RenderConfig {
                n_samples: n,
                near: 0.9,
                far: 3.1,
                jitter: false,
                seed: 0,
            };
            render_rays(&scene, &rays, None, &cfg, 0)
                .unwrap()
                .opacity
                .values()
                .to_vec()
        };
        let reference = opacity_at(4096);
        let err = |n: usize| -> f64 {
            opacity_at(n)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / reference.len() as f64
        };
        let (e64, e128, e256) = (err(64), err(128), err(256));
        let passed = e128 <= 1.5 * e64 / 2.0 && e256 <= 1.5 * e128 / 2.0;
        out.push(CheckOutcome {
            name: "quadrature_error_halving".into(),
            passed,
            detail: format!("mean |err|: n=64 {e64:.2e}, n=128 {e128:.2e}, n=256 {e256:.2e}"),
        });
    }

    // 4. Textured opaque plane: rendered colours match the texture.
    {
        let scene = AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Plane {
                    center: Vector3::new(0.0, 0.0, 2.5),
                    normal: Vector3::new(0.0, 0.0, 1.0),
                    radius: 6.0,
                    thickness: 0.1,
                },
                amplitude: 1e4,
                softness: 1e-4,
                texture: Texture::Checker {
                    scale: 0.8,
                    color_a: [0.9, 0.2, 0.1],
                    color_b: [0.1, 0.3, 0.8],
                },
            }],
            background: [0.0, 0.0, 0.0],
        };
        let intr = Intrinsics::from_fov(6, 6, 0.7);
        let cfg = RenderConfig {
            n_samples: 128,
            near: 0.5,
            far: 4.0,
            jitter: false,
            seed: 0,
        };
        let res = render_image(&scene, &intr, None, &cfg).unwrap();
        let colors = res.color.values();
        let mut mae = 0.0;
        for y in 0..6 {
            for x in 0..6 {
                let dir = intr.pixel_dir(x as f64, y as f64);
                let t = 2.45 / dir.z;
                let hit = dir * t;
                let cell = (hit.x / 0.8).floor() as i64
                    + (hit.y / 0.8).floor() as i64
                    + (hit.z / 0.8).floor() as i64;
                let want: [f64; 3] = if cell.rem_euclid(2) == 0 {
                    [0.9, 0.2, 0.1]
                } else {
                    [0.1, 0.3, 0.8]
                };
                for c in 0..3 {
                    mae += (colors[(y * 6 + x) * 3 + c] - want[c]).abs();
                }
            }
        }
        mae /= (6 * 6 * 3) as f64;
        out.push(CheckOutcome {
            name: "textured_plane_colors".into(),
            passed: mae < 2e-2,
            detail: format!("mean absolute colour error {mae:.2e}"),
        });
    }

    out
}
