//! Two-parameter continuation of singular points (folds and simple branch
//! points) via the minimally augmented system
//!
//! ```text
//!   R(z, p1, p2) = 0,
//!   g(z, p1, p2) = 0,   where   [J b; cᵀ 0] [v; g] = [0; 1],
//! ```
//!
//! with `b`, `c` held near the current kernel. Every linear solve goes
//! through the kernel-bordered Jacobian, which stays well conditioned along
//! the singular curve even though `J` itself is singular there. Cusps are
//! detected through the quadratic coefficient `psi' (J_z[v]) v`, whose sign
//! change means the fold degenerates; continuation then halts and records a
//! cusp candidate.

use super::problem::Problem;
use super::{ContinuationError, StopReason};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularKind {
    Fold,
    BranchPoint,
}

#[derive(Debug, Clone)]
pub struct SingularPoint {
    pub z: Vec<f64>,
    pub kernel: Vec<f64>,
    pub p1: f64,
    pub p2: f64,
    /// Quadratic (fold nondegeneracy) coefficient.
    pub quad_coeff: f64,
    pub lambda: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct SingularCurve {
    pub p1_name: String,
    pub p2_name: String,
    pub points: Vec<SingularPoint>,
    /// Cusp candidate, when the quadratic coefficient crossed zero.
    pub cusp: Option<SingularPoint>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct SingularContinuationOptions {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub p1_range: (f64, f64),
    pub p2_range: (f64, f64),
    pub detect_cusp: bool,
}

impl Default for SingularContinuationOptions {
    fn default() -> Self {
        Self {
            ds0: 0.01,
            ds_min: 1e-7,
            ds_max: 0.1,
            max_steps: 400,
            newton_tol: 1e-9,
            newton_max_iter: 25,
            p1_range: (f64::NEG_INFINITY, f64::INFINITY),
            p2_range: (f64::NEG_INFINITY, f64::INFINITY),
            detect_cusp: true,
        }
    }
}

struct AugmentedEval {
    residual: Vec<f64>,
    g: f64,
    v: Vec<f64>,
    psi: Vec<f64>,
    g_z: Vec<f64>,
    g_p: [f64; 2],
    r_p: [Vec<f64>; 2],
}

/// One evaluation of the augmented system and its derivatives at `z` with
/// kernel border `(b, c)`.
fn evaluate<P: Problem + ?Sized>(
    problem: &mut P,
    z: &[f64],
    b: &[f64],
    c: &[f64],
    params: (usize, usize),
    with_derivatives: bool,
) -> Result<AugmentedEval, ContinuationError> {
    let dim = problem.dim();
    let residual = problem.residual(z)?;
    let solver = problem.factor(
        z,
        &[b.to_vec()],
        &[c.to_vec()],
        &DMatrix::zeros(1, 1),
    )?;
    let mut rhs = vec![0.0; dim + 1];
    rhs[dim] = 1.0;
    solver.solve_in_place(&mut rhs);
    let g = rhs[dim];
    let v = rhs[..dim].to_vec();
    if !with_derivatives {
        return Ok(AugmentedEval {
            residual,
            g,
            v,
            psi: vec![],
            g_z: vec![],
            g_p: [0.0; 2],
            r_p: [vec![], vec![]],
        });
    }
    let mut psi = problem.left_kernel_from_right(&v);
    let pb: f64 = psi.iter().zip(b.iter()).map(|(a, b)| a * b).sum();
    if pb.abs() > 1e-300 {
        psi.iter_mut().for_each(|x| *x /= pb);
    }
    let g_z: Vec<f64> = problem
        .second_derivative_contraction(z, &psi, &v)?
        .iter()
        .map(|x| -x)
        .collect();
    let mut g_p = [0.0; 2];
    let mut r_p: [Vec<f64>; 2] = [vec![], vec![]];
    for (k, &ip) in [params.0, params.1].iter().enumerate() {
        let jvp = problem.jac_vec_param_derivative(z, &v, ip)?;
        g_p[k] = -psi.iter().zip(jvp.iter()).map(|(a, b)| a * b).sum::<f64>();
        r_p[k] = problem.param_derivative(z, ip)?;
    }
    Ok(AugmentedEval {
        residual,
        g,
        v,
        psi,
        g_z,
        g_p,
        r_p,
    })
}

#[allow(clippy::too_many_arguments)]
fn newton_augmented<P: Problem + ?Sized>(
    problem: &mut P,
    z: &mut Vec<f64>,
    kernel: &mut Vec<f64>,
    params: (usize, usize),
    arc: Option<(&[f64], &[f64], f64, f64)>, // (tangent, z_ref, p1_ref, p2_ref)
    opts: &SingularContinuationOptions,
    kind: SingularKind,
) -> Result<AugmentedEval, ContinuationError> {
    let dim = problem.dim();
    let xi = problem.norm_weight();
    let sym = problem.bp_symmetry();
    let normalize = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
    };
    for iter in 0..=opts.newton_max_iter {
        if kind == SingularKind::BranchPoint {
            if let Some(s) = &sym {
                (s.project_state)(z);
                (s.project_kernel)(kernel);
            }
        }
        normalize(kernel);
        let b = kernel.clone();
        let c = kernel.clone();
        let ev = evaluate(problem, z, &b, &c, params, true)?;
        let mut p = [problem.get_param(params.0), problem.get_param(params.1)];
        let arc_res = match arc {
            Some((t, z_ref, p1_ref, p2_ref)) => {
                xi * z
                    .iter()
                    .zip(z_ref.iter())
                    .zip(t[..dim].iter())
                    .map(|((zi, zr), ti)| (zi - zr) * ti)
                    .sum::<f64>()
                    + t[dim] * (p[0] - p1_ref)
                    + t[dim + 1] * (p[1] - p2_ref)
            }
            None => 0.0,
        };
        let rn = problem.residual_norm(&ev.residual);
        let converged = rn <= opts.newton_tol
            && ev.g.abs() <= opts.newton_tol.max(1e-10)
            && arc_res.abs() <= opts.newton_tol;
        if converged {
            *kernel = ev.v.clone();
            normalize(kernel);
            return Ok(ev);
        }
        if iter == opts.newton_max_iter {
            return Err(ContinuationError::NoConvergence {
                iters: opts.newton_max_iter,
                residual: rn.max(ev.g.abs()),
            });
        }
        // bordered Newton system over (z, p1, p2)
        let cols = [ev.r_p[0].clone(), ev.r_p[1].clone()];
        let (arc_row_z, arc_corner): (Vec<f64>, [f64; 2]) = match arc {
            Some((t, _, _, _)) => (
                t[..dim].iter().map(|v| xi * v).collect(),
                [t[dim], t[dim + 1]],
            ),
            None => {
                // no arclength (initial convergence onto the curve):
                // freeze p2 instead
                let mut row = vec![0.0; dim];
                row.clear();
                row.resize(dim, 0.0);
                (row, [0.0, 1.0])
            }
        };
        let rows = [ev.g_z.clone(), arc_row_z];
        let corner = DMatrix::from_row_slice(
            2,
            2,
            &[ev.g_p[0], ev.g_p[1], arc_corner[0], arc_corner[1]],
        );
        let solver = problem.factor(z, &cols, &rows, &corner)?;
        let mut rhs: Vec<f64> = ev.residual.iter().map(|x| -x).collect();
        rhs.push(-ev.g);
        rhs.push(-arc_res);
        solver.solve_in_place(&mut rhs);
        for (zi, di) in z.iter_mut().zip(rhs.iter()) {
            *zi += di;
        }
        p[0] += rhs[dim];
        p[1] += rhs[dim + 1];
        problem.set_param(params.0, p[0]);
        problem.set_param(params.1, p[1]);
        *kernel = ev.v;
    }
    unreachable!()
}

fn curve_tangent<P: Problem + ?Sized>(
    problem: &mut P,
    z: &[f64],
    ev: &AugmentedEval,
    prev: Option<&[f64]>,
) -> Result<Vec<f64>, ContinuationError> {
    let dim = problem.dim();
    let xi = problem.norm_weight();
    let cols = [ev.r_p[0].clone(), ev.r_p[1].clone()];
    let (wz, wp): (Vec<f64>, [f64; 2]) = match prev {
        Some(t) => (
            t[..dim].iter().map(|v| xi * v).collect(),
            [t[dim], t[dim + 1]],
        ),
        None => (vec![0.0; dim], [0.0, 1.0]),
    };
    let rows = [ev.g_z.clone(), wz];
    let corner = DMatrix::from_row_slice(2, 2, &[ev.g_p[0], ev.g_p[1], wp[0], wp[1]]);
    let solver = problem.factor(z, &cols, &rows, &corner)?;
    let mut t = vec![0.0; dim + 2];
    t[dim + 1] = 1.0;
    solver.solve_in_place(&mut t);
    let norm = (xi * t[..dim].iter().map(|v| v * v).sum::<f64>()
        + t[dim] * t[dim]
        + t[dim + 1] * t[dim + 1])
        .sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(ContinuationError::SingularJacobian);
    }
    t.iter_mut().for_each(|v| *v /= norm);
    if let Some(tp) = prev {
        let dot = xi
            * t[..dim]
                .iter()
                .zip(tp[..dim].iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
            + t[dim] * tp[dim]
            + t[dim + 1] * tp[dim + 1];
        if dot < 0.0 {
            t.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(t)
}

/// Quadratic coefficient `psi' (J_z[v]) v` at a singular point.
fn quad_coefficient<P: Problem + ?Sized>(
    problem: &mut P,
    z: &[f64],
    ev: &AugmentedEval,
) -> Result<f64, ContinuationError> {
    let gz = problem.second_derivative_contraction(z, &ev.psi, &ev.v)?;
    Ok(gz.iter().zip(ev.v.iter()).map(|(a, b)| a * b).sum())
}

/// Continue a fold or simple branch point in two parameters from a located
/// singular point with its kernel vector.
pub fn continue_singular_point<P: Problem + ?Sized>(
    problem: &mut P,
    z0: &[f64],
    kernel0: &[f64],
    params: (usize, usize),
    kind: SingularKind,
    direction: f64,
    opts: &SingularContinuationOptions,
) -> Result<SingularCurve, ContinuationError> {
    problem.validate_for_continuation()?;
    let dim = problem.dim();
    let xi = problem.norm_weight();
    let mut z = z0.to_vec();
    let mut kernel = kernel0.to_vec();

    // converge onto the singular locus at frozen p2
    let ev = newton_augmented(problem, &mut z, &mut kernel, params, None, opts, kind)?;
    let mut tangent = curve_tangent(problem, &z, &ev, None)?;
    if direction < 0.0 {
        tangent.iter_mut().for_each(|v| *v = -*v);
    }
    let mut qc = quad_coefficient(problem, &z, &ev)?;
    let (lambda, energy) = problem.observables(&z);
    let mut curve = SingularCurve {
        p1_name: problem.param_names()[params.0].to_string(),
        p2_name: problem.param_names()[params.1].to_string(),
        points: vec![SingularPoint {
            z: z.clone(),
            kernel: kernel.clone(),
            p1: problem.get_param(params.0),
            p2: problem.get_param(params.1),
            quad_coeff: qc,
            lambda,
            energy,
        }],
        cusp: None,
        stop_reason: StopReason::MaxSteps,
    };

    let mut ds = opts.ds0.min(opts.ds_max);
    let mut successes = 0usize;
    for _step in 0..opts.max_steps {
        let p1 = problem.get_param(params.0);
        let p2 = problem.get_param(params.1);
        if p1 < opts.p1_range.0 || p1 > opts.p1_range.1 || p2 < opts.p2_range.0
            || p2 > opts.p2_range.1
        {
            curve.stop_reason = StopReason::ParamBound;
            break;
        }
        let z_pred: Vec<f64> = z
            .iter()
            .zip(tangent[..dim].iter())
            .map(|(zi, ti)| zi + ds * ti)
            .collect();
        let p1_pred = p1 + ds * tangent[dim];
        let p2_pred = p2 + ds * tangent[dim + 1];
        problem.set_param(params.0, p1_pred);
        problem.set_param(params.1, p2_pred);
        let mut z_try = z_pred.clone();
        let mut kernel_try = kernel.clone();
        let arc_t = tangent.clone();
        let attempt = newton_augmented(
            problem,
            &mut z_try,
            &mut kernel_try,
            params,
            Some((&arc_t, &z_pred, p1_pred, p2_pred)),
            opts,
            kind,
        );
        let ev = match attempt {
            Ok(ev) => ev,
            Err(_) => {
                problem.set_param(params.0, p1);
                problem.set_param(params.1, p2);
                successes = 0;
                ds *= 0.5;
                if ds < opts.ds_min {
                    curve.stop_reason =
                        StopReason::CorrectorFailure(format!("underflow at ({p1:.4},{p2:.4})"));
                    break;
                }
                continue;
            }
        };
        let new_tangent = curve_tangent(problem, &z_try, &ev, Some(&tangent))?;
        let new_qc = quad_coefficient(problem, &z_try, &ev)?;
        let (lambda, energy) = problem.observables(&z_try);
        let new_point = SingularPoint {
            z: z_try.clone(),
            kernel: kernel_try.clone(),
            p1: problem.get_param(params.0),
            p2: problem.get_param(params.1),
            quad_coeff: new_qc,
            lambda,
            energy,
        };

        // cusp: the quadratic coefficient changes sign along the curve
        if opts.detect_cusp && kind == SingularKind::Fold && qc * new_qc < 0.0 {
            let prev_point = curve.points.last().unwrap().clone();
            let cusp = bisect_cusp(problem, &prev_point, &new_point, params, opts, xi)?;
            curve.points.push(new_point);
            curve.cusp = Some(cusp);
            curve.stop_reason = StopReason::CuspCandidate;
            break;
        }

        curve.points.push(new_point);
        z = z_try;
        kernel = kernel_try;
        tangent = new_tangent;
        qc = new_qc;
        successes += 1;
        if successes >= 3 {
            ds = (ds * 1.3).min(opts.ds_max);
            successes = 0;
        }
    }
    Ok(curve)
}

/// Bisect the quadratic coefficient between two fold-curve points.
fn bisect_cusp<P: Problem + ?Sized>(
    problem: &mut P,
    a: &SingularPoint,
    b: &SingularPoint,
    params: (usize, usize),
    opts: &SingularContinuationOptions,
    xi: f64,
) -> Result<SingularPoint, ContinuationError> {
    let dz: Vec<f64> = b.z.iter().zip(a.z.iter()).map(|(x, y)| x - y).collect();
    let (dp1, dp2) = (b.p1 - a.p1, b.p2 - a.p2);
    let seg = (xi * dz.iter().map(|v| v * v).sum::<f64>() + dp1 * dp1 + dp2 * dp2).sqrt();
    let mut secant: Vec<f64> = dz.iter().map(|v| v / seg).collect();
    secant.push(dp1 / seg);
    secant.push(dp2 / seg);

    let sign_a = a.quad_coeff > 0.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<SingularPoint> = None;
    for _ in 0..50 {
        if (hi - lo) * seg <= 1e-10_f64.max(opts.ds_min * 1e-3) {
            break;
        }
        let t = 0.5 * (lo + hi);
        let z_ref: Vec<f64> = a.z.iter().zip(dz.iter()).map(|(z0, d)| z0 + t * d).collect();
        let p1_ref = a.p1 + t * dp1;
        let p2_ref = a.p2 + t * dp2;
        problem.set_param(params.0, p1_ref);
        problem.set_param(params.1, p2_ref);
        let mut z_try = z_ref.clone();
        let mut kernel_try = a.kernel.clone();
        let Ok(ev) = newton_augmented(
            problem,
            &mut z_try,
            &mut kernel_try,
            params,
            Some((&secant, &z_ref, p1_ref, p2_ref)),
            opts,
            SingularKind::Fold,
        ) else {
            hi = 0.5 * (lo + hi);
            continue;
        };
        let qc = quad_coefficient(problem, &z_try, &ev)?;
        if (qc > 0.0) == sign_a {
            lo = t;
        } else {
            hi = t;
        }
        let (lambda, energy) = problem.observables(&z_try);
        best = Some(SingularPoint {
            z: z_try,
            kernel: kernel_try,
            p1: problem.get_param(params.0),
            p2: problem.get_param(params.1),
            quad_coeff: qc,
            lambda,
            energy,
        });
    }
    best.ok_or_else(|| ContinuationError::EventLocation("cusp bisection failed".into()))
}
