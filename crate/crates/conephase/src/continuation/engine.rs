//! Predictor-corrector driver: Newton correction under fixed-parameter or
//! arclength constraints, tangent computation, the continuation loop with
//! eigenvalue tracking, event detection/refinement, and branch switching.

use super::problem::{Problem, Stability};
use super::{
    Branch, BranchPoint, BranchPointRecord, ContinuationError, ContinuationSettings, EventKind,
    StopReason,
};
use nalgebra::DMatrix;

/// Corrector constraint: keep the active parameter fixed, or solve the
/// arclength system with the given unit tangent and predictor reference.
pub enum Constraint<'a> {
    FixedParam,
    Arclength {
        param: usize,
        tangent: &'a [f64],
        z_ref: &'a [f64],
        p_ref: f64,
    },
}

fn weighted_norm(xi: f64, z: &[f64], p: f64) -> f64 {
    (xi * z.iter().map(|v| v * v).sum::<f64>() + p * p).sqrt()
}

fn weighted_dot(xi: f64, az: &[f64], ap: f64, bz: &[f64], bp: f64) -> f64 {
    xi * az.iter().zip(bz.iter()).map(|(a, b)| a * b).sum::<f64>() + ap * bp
}

/// Newton correction of `(z [, param])`. With the arclength constraint the
/// problem's active parameter is updated in place; the returned scalar is
/// its corrected value.
pub fn newton_correct<P: Problem + ?Sized>(
    problem: &mut P,
    z0: &[f64],
    constraint: Constraint,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize), ContinuationError> {
    let dim = problem.dim();
    let xi = problem.norm_weight();
    let mut z = z0.to_vec();
    match constraint {
        Constraint::FixedParam => {
            for iter in 0..=max_iter {
                let r = problem.residual(&z)?;
                if problem.residual_norm(&r) <= tol {
                    return Ok((z, f64::NAN, iter));
                }
                if iter == max_iter {
                    break;
                }
                let solver = problem.factor(&z, &[], &[], &DMatrix::zeros(0, 0))?;
                let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
                solver.solve_in_place(&mut rhs);
                for (zi, di) in z.iter_mut().zip(rhs.iter()) {
                    *zi += di;
                }
            }
            let r = problem.residual(&z)?;
            Err(ContinuationError::NoConvergence {
                iters: max_iter,
                residual: problem.residual_norm(&r),
            })
        }
        Constraint::Arclength {
            param,
            tangent,
            z_ref,
            p_ref,
        } => {
            debug_assert_eq!(tangent.len(), dim + 1);
            let mut p = problem.get_param(param);
            for iter in 0..=max_iter {
                let r = problem.residual(&z)?;
                let n: f64 = weighted_dot(
                    xi,
                    &z.iter().zip(z_ref.iter()).map(|(a, b)| a - b).collect::<Vec<_>>(),
                    p - p_ref,
                    &tangent[..dim],
                    tangent[dim],
                );
                if problem.residual_norm(&r) <= tol && n.abs() <= tol {
                    return Ok((z, p, iter));
                }
                if iter == max_iter {
                    break;
                }
                let rp = problem.param_derivative(&z, param)?;
                let row: Vec<f64> = tangent[..dim].iter().map(|v| xi * v).collect();
                let corner = DMatrix::from_element(1, 1, tangent[dim]);
                let solver = problem.factor(&z, &[rp], &[row], &corner)?;
                let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
                rhs.push(-n);
                solver.solve_in_place(&mut rhs);
                for (zi, di) in z.iter_mut().zip(rhs.iter()) {
                    *zi += di;
                }
                p += rhs[dim];
                problem.set_param(param, p);
            }
            let r = problem.residual(&z)?;
            Err(ContinuationError::NoConvergence {
                iters: max_iter,
                residual: problem.residual_norm(&r),
            })
        }
    }
}

/// Unit tangent of the solution curve at `z` (weighted norm), oriented to
/// continue `prev` when given, otherwise toward increasing parameter.
fn compute_tangent<P: Problem + ?Sized>(
    problem: &mut P,
    z: &[f64],
    param: usize,
    prev: Option<&[f64]>,
) -> Result<Vec<f64>, ContinuationError> {
    let dim = problem.dim();
    let xi = problem.norm_weight();
    let rp = problem.param_derivative(z, param)?;
    let (wz, wp): (Vec<f64>, f64) = match prev {
        Some(t) => (t[..dim].iter().map(|v| xi * v).collect(), t[dim]),
        None => (vec![0.0; dim], 1.0),
    };
    let corner = DMatrix::from_element(1, 1, wp);
    let solver = problem.factor(z, &[rp], &[wz], &corner)?;
    let mut rhs = vec![0.0; dim + 1];
    rhs[dim] = 1.0;
    solver.solve_in_place(&mut rhs);
    let norm = weighted_norm(xi, &rhs[..dim], rhs[dim]);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(ContinuationError::SingularJacobian);
    }
    for v in rhs.iter_mut() {
        *v /= norm;
    }
    if let Some(t) = prev {
        if weighted_dot(xi, &rhs[..dim], rhs[dim], &t[..dim], t[dim]) < 0.0 {
            for v in rhs.iter_mut() {
                *v = -*v;
            }
        }
    }
    Ok(rhs)
}

fn make_point<P: Problem + ?Sized>(
    problem: &mut P,
    z: Vec<f64>,
    tangent: Vec<f64>,
    stability: Option<&Stability>,
    index: Option<usize>,
) -> BranchPoint {
    let (lambda, energy) = problem.observables(&z);
    let params = (0..problem.param_names().len())
        .map(|i| problem.get_param(i))
        .collect();
    BranchPoint {
        z,
        params,
        tangent,
        eigs: stability.map(|s| s.eigs.clone()).unwrap_or_default(),
        index,
        lambda,
        energy,
        event: None,
    }
}

/// Pseudo-arclength continuation from a converged start point.
///
/// `initial_tangent` (length `dim + 1`) seeds the direction, e.g. out of a
/// branch switch; otherwise the natural parameterization tangent scaled by
/// `direction` is used.
pub fn continue_branch<P: Problem + ?Sized>(
    problem: &mut P,
    z_start: &[f64],
    param: usize,
    initial_tangent: Option<Vec<f64>>,
    direction: f64,
    settings: &ContinuationSettings,
) -> Result<Branch, ContinuationError> {
    problem.validate_for_continuation()?;
    let xi = problem.norm_weight();

    // converge the start point at fixed parameter
    let (mut z, _, _) = newton_correct(
        problem,
        z_start,
        Constraint::FixedParam,
        settings.newton_tol,
        settings.newton_max_iter,
    )?;

    let mut tangent = match initial_tangent {
        Some(t) => {
            let n = weighted_norm(xi, &t[..problem.dim()], t[problem.dim()]);
            let mut t: Vec<f64> = t.iter().map(|v| v / n).collect();
            if direction < 0.0 {
                t.iter_mut().for_each(|v| *v = -*v);
            }
            t
        }
        None => {
            let mut t = compute_tangent(problem, &z, param, None)?;
            if direction < 0.0 {
                t.iter_mut().for_each(|v| *v = -*v);
            }
            t
        }
    };

    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut stability = if settings.track_stability {
        let s = problem.stability(&z, settings.n_eigs, None)?;
        warm = Some(s.vectors.clone());
        Some(s)
    } else {
        None
    };
    let mut index: Option<usize> = if settings.track_stability {
        problem.absolute_index(&z, settings.tol_eig)?
    } else {
        None
    };

    let mut branch = Branch {
        param_name: problem.param_names()[param].to_string(),
        param_index: param,
        points: vec![make_point(problem, z.clone(), tangent.clone(), stability.as_ref(), index)],
        events: Vec::new(),
        stop_reason: StopReason::MaxSteps,
    };

    let mut ds = settings.ds0.min(settings.ds_max);
    let mut successes = 0usize;
    let (pmin, pmax) = settings.param_range;

    for _step in 0..settings.max_steps {
        let p = problem.get_param(param);
        // clamp the step to land on a parameter bound
        let mut ds_step = ds;
        let mut hits_bound = false;
        if tangent[problem.dim()].abs() > 1e-14 {
            let to_bound = if tangent[problem.dim()] > 0.0 {
                (pmax - p) / tangent[problem.dim()]
            } else {
                (pmin - p) / tangent[problem.dim()]
            };
            if to_bound <= 0.0 {
                branch.stop_reason = StopReason::ParamBound;
                break;
            }
            if to_bound < ds_step {
                ds_step = to_bound;
                hits_bound = true;
            }
        }

        let dim = problem.dim();
        let z_pred: Vec<f64> = z
            .iter()
            .zip(tangent[..dim].iter())
            .map(|(zi, ti)| zi + ds_step * ti)
            .collect();
        let p_pred = p + ds_step * tangent[dim];
        problem.set_param(param, p_pred);

        let corrected = newton_correct(
            problem,
            &z_pred,
            Constraint::Arclength {
                param,
                tangent: &tangent,
                z_ref: &z_pred,
                p_ref: p_pred,
            },
            settings.newton_tol,
            settings.newton_max_iter,
        );

        let (z_new, _p_new) = match corrected {
            Ok((z_new, p_new, _)) => (z_new, p_new),
            Err(_e) => {
                problem.set_param(param, p);
                successes = 0;
                ds *= 0.5;
                if ds < settings.ds_min {
                    branch.stop_reason =
                        StopReason::CorrectorFailure(format!("step underflow at {p:.6}"));
                    break;
                }
                continue;
            }
        };

        let new_tangent = match compute_tangent(problem, &z_new, param, Some(&tangent)) {
            Ok(t) => t,
            Err(_) => {
                // singular exactly on a bifurcation: nudge by halving ds
                problem.set_param(param, p);
                ds *= 0.5;
                if ds < settings.ds_min {
                    branch.stop_reason =
                        StopReason::CorrectorFailure(format!("singular tangent at {p:.6}"));
                    break;
                }
                continue;
            }
        };

        let new_stability = if settings.track_stability {
            let s = problem.stability(&z_new, settings.n_eigs, warm.as_deref())?;
            warm = Some(s.vectors.clone());
            Some(s)
        } else {
            None
        };

        // incremental Morse index from eigenvalue sign changes
        let mut new_index = index;
        if let (Some(prev_s), Some(new_s), Some(ix)) =
            (stability.as_ref(), new_stability.as_ref(), index)
        {
            let mut delta: i64 = 0;
            for (a, b) in prev_s.eigs.iter().zip(new_s.eigs.iter()) {
                if *a >= 0.0 && *b < 0.0 {
                    delta += 1;
                } else if *a < 0.0 && *b >= 0.0 {
                    delta -= 1;
                }
            }
            new_index = Some((ix as i64 + delta).max(0) as usize);
        }

        // event detection between the previous and the new point
        if settings.track_stability {
            let prev_point = branch.points.last().unwrap().clone();
            let new_point = make_point(
                problem,
                z_new.clone(),
                new_tangent.clone(),
                new_stability.as_ref(),
                new_index,
            );
            let mut events = detect_events(problem, param, &prev_point, &new_point, settings)?;
            for ev in events.drain(..) {
                let mut rec = ev;
                rec.after_step = branch.points.len() - 1;
                branch.events.push(rec);
            }
            // detection may have moved parameters around; restore
            problem.set_param(param, new_point.params[param]);
            branch.points.push(new_point);
        } else {
            let new_point = make_point(
                problem,
                z_new.clone(),
                new_tangent.clone(),
                None,
                None,
            );
            branch.points.push(new_point);
        }

        z = z_new;
        tangent = new_tangent;
        stability = new_stability;
        index = new_index;

        if hits_bound {
            branch.stop_reason = StopReason::ParamBound;
            break;
        }

        successes += 1;
        if successes >= 3 {
            ds = (ds * 1.3).min(settings.ds_max);
            successes = 0;
        }

        // adaptive discretization (mesh refinement during eps-continuation)
        if settings.allow_adaptation && problem.maybe_adapt(&mut z)? {
            let (z_re, _, _) = newton_correct(
                problem,
                &z,
                Constraint::FixedParam,
                settings.newton_tol,
                settings.newton_max_iter,
            )?;
            z = z_re;
            // tangent and eigenvectors live on the old discretization
            let dim = problem.dim();
            let sign = if tangent[tangent.len() - 1] >= 0.0 { 1.0 } else { -1.0 };
            let mut t0 = vec![0.0; dim + 1];
            t0[dim] = sign;
            tangent = compute_tangent(problem, &z, param, Some(&t0))?;
            warm = None;
            if settings.track_stability {
                let s = problem.stability(&z, settings.n_eigs, None)?;
                warm = Some(s.vectors.clone());
                stability = Some(s);
            }
        }
    }
    Ok(branch)
}

/// Classify and refine the events between two consecutive converged points:
/// a tangent-parameter sign flip is a fold; an eigenvalue sign change
/// without one is a simple branch point. Bisection refines the location to
/// `tol_event` in arclength and stores the kernel vector.
pub fn detect_events<P: Problem + ?Sized>(
    problem: &mut P,
    param: usize,
    a: &BranchPoint,
    b: &BranchPoint,
    settings: &ContinuationSettings,
) -> Result<Vec<BranchPointRecord>, ContinuationError> {
    let dim = problem.dim();
    let fold_flip = a.tangent[dim] * b.tangent[dim] < 0.0;
    let crossings: Vec<usize> = a
        .eigs
        .iter()
        .zip(b.eigs.iter())
        .enumerate()
        .filter(|(_, (x, y))| (**x < 0.0) != (**y < 0.0))
        .map(|(i, _)| i)
        .collect();
    if !fold_flip && crossings.is_empty() {
        return Ok(Vec::new());
    }

    let interval = (a.params[param], b.params[param]);
    let mut records = Vec::new();

    if fold_flip {
        // baseline sign from the endpoint with the clearer signal
        let m0 = if a.tangent[dim].abs() >= b.tangent[dim].abs() {
            a.tangent[dim]
        } else {
            -b.tangent[dim]
        };
        let (point, _slot_eigs) = bisect_monitor(problem, param, a, b, settings, m0, |pr, z, t| {
            let tang = compute_tangent(pr, z, param, Some(t))?;
            Ok(tang[pr.dim()])
        })?;
        // at a fold the z-part of the tangent spans the kernel
        let tang = compute_tangent(problem, &point.z, param, Some(&a.tangent))?;
        let mut kernel = tang[..dim].to_vec();
        let kn = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
        if kn > 0.0 {
            kernel.iter_mut().for_each(|v| *v /= kn);
        }
        let mut point = point;
        point.event = Some(EventKind::Fold);
        records.push(BranchPointRecord {
            kind: EventKind::Fold,
            param_value: point.params[param],
            point,
            kernel,
            detection_interval: interval,
            after_step: 0,
        });
        // an index change accompanying a quadratic fold is the fold itself
        if crossings.len() <= 1 {
            return Ok(records);
        }
    }

    // branch points: bisect the crossing eigenvalue(s)
    let mut located: Vec<(BranchPointRecord, f64)> = Vec::new();
    for &slot in &crossings {
        if fold_flip && crossings.len() == 1 {
            break;
        }
        let (point, stab) = bisect_monitor(problem, param, a, b, settings, |pr, z, _t| {
            let s = pr.stability(z, settings.n_eigs, None)?;
            Ok(s.eigs.get(slot).copied().unwrap_or(f64::NAN))
        })?;
        let stab = match stab {
            Some(s) => s,
            None => problem.stability(&point.z, settings.n_eigs, None)?,
        };
        let near_zero = stab
            .eigs
            .iter()
            .filter(|e| e.abs() <= settings.tol_eig.max(1e-4))
            .count();
        let kind = if near_zero > 1 {
            EventKind::Unresolved
        } else {
            EventKind::SimpleBp
        };
        let kernel = stab.vectors.get(slot).cloned().unwrap_or_default();
        let pv = point.params[param];
        let mut point = point;
        point.event = Some(kind);
        located.push((
            BranchPointRecord {
                kind,
                param_value: pv,
                point,
                kernel,
                detection_interval: interval,
                after_step: 0,
            },
            pv,
        ));
    }
    // merge coincident locations as unresolved multi-crossings
    located.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
    let mut i = 0;
    while i < located.len() {
        let mut rec = located[i].0.clone();
        let mut j = i + 1;
        while j < located.len()
            && (located[j].1 - located[i].1).abs()
                <= 1e-6 * (1.0 + located[i].1.abs())
        {
            rec.kind = EventKind::Unresolved;
            rec.point.event = Some(EventKind::Unresolved);
            j += 1;
        }
        records.push(rec);
        i = j;
    }
    Ok(records)
}

/// Bisection along the secant between two accepted points, correcting each
/// trial on the hyperplane orthogonal to the secant, driven by a scalar
/// monitor with a sign change.
fn bisect_monitor<P: Problem + ?Sized>(
    problem: &mut P,
    param: usize,
    a: &BranchPoint,
    b: &BranchPoint,
    settings: &ContinuationSettings,
    mut monitor: impl FnMut(&mut P, &[f64], &[f64]) -> Result<f64, ContinuationError>,
) -> Result<(BranchPoint, Option<Stability>), ContinuationError> {
    let xi = problem.norm_weight();
    let dz: Vec<f64> = b.z.iter().zip(a.z.iter()).map(|(x, y)| x - y).collect();
    let dp = b.params[param] - a.params[param];
    let seg = weighted_norm(xi, &dz, dp);
    let mut secant: Vec<f64> = dz.iter().map(|v| v / seg).collect();
    secant.push(dp / seg);

    let eval = |pr: &mut P,
                t: f64,
                monitor: &mut dyn FnMut(&mut P, &[f64], &[f64]) -> Result<f64, ContinuationError>|
     -> Result<(f64, Vec<f64>, f64), ContinuationError> {
        let z_ref: Vec<f64> = a.z.iter().zip(dz.iter()).map(|(z0, d)| z0 + t * d).collect();
        let p_ref = a.params[param] + t * dp;
        pr.set_param(param, p_ref);
        let (zc, pc, _) = newton_correct(
            pr,
            &z_ref,
            Constraint::Arclength {
                param,
                tangent: &secant,
                z_ref: &z_ref,
                p_ref,
            },
            settings.newton_tol,
            settings.newton_max_iter,
        )?;
        let m = monitor(pr, &zc, &secant)?;
        Ok((m, zc, pc))
    };

    let m0 = monitor(problem, &a.z, &a.tangent)?;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut sign_lo = m0 > 0.0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..60 {
        if (hi - lo) * seg <= settings.tol_event {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match eval(problem, mid, &mut monitor) {
            Ok((m, zc, pc)) => {
                if (m > 0.0) == sign_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
                let _ = sign_lo;
                best = Some((zc, pc));
                // keep sign_lo consistent if lo moved
                if lo == mid {
                    sign_lo = m > 0.0;
                }
            }
            Err(_) => {
                // corrector trouble mid-interval: shrink toward the far end
                hi = 0.5 * (hi + lo);
            }
        }
    }
    let (zc, pc) = match best {
        Some(x) => x,
        None => {
            return Err(ContinuationError::EventLocation(
                "no bisection iterate converged".into(),
            ))
        }
    };
    problem.set_param(param, pc);
    let stab = if settings.track_stability {
        Some(problem.stability(&zc, settings.n_eigs, None)?)
    } else {
        None
    };
    let tangent = compute_tangent(problem, &zc, param, Some(&secant))?;
    let index = stab
        .as_ref()
        .map(|s| s.eigs.iter().filter(|&&e| e < 0.0).count());
    let point = make_point(problem, zc, tangent, stab.as_ref(), index);
    Ok((point, stab))
}

/// A converged seed on a bifurcating branch.
#[derive(Debug, Clone)]
pub struct Seed {
    pub z: Vec<f64>,
    pub param_value: f64,
    /// Direction away from the branch point (length `dim + 1`).
    pub tangent: Vec<f64>,
}

/// Branch switching at a simple branch point: kernel predictors `z ± delta
/// phi` (plus tangent-mixed predictors for transcritical points), corrected
/// at perturbed arclength. Only predictors that converge to states off the
/// parent branch are returned.
pub fn switch_branch<P: Problem + ?Sized>(
    problem: &mut P,
    record: &BranchPointRecord,
    param: usize,
    settings: &ContinuationSettings,
) -> Result<Vec<Seed>, ContinuationError> {
    let dim = problem.dim();
    let xi = problem.norm_weight();
    if record.kernel.is_empty() {
        return Err(ContinuationError::EventLocation(
            "branch point record has no kernel".into(),
        ));
    }
    let mut phi = record.kernel.clone();
    let n = weighted_norm(xi, &phi, 0.0);
    phi.iter_mut().for_each(|v| *v /= n);
    let t_old = &record.point.tangent;
    let delta = settings.switch_delta_factor * settings.ds0;

    // candidate directions in (z, p): pure kernel and kernel +- old tangent
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for s in [1.0, -1.0] {
        let mut d: Vec<f64> = phi.iter().map(|v| s * v).collect();
        d.push(0.0);
        dirs.push(d);
        let mut mixed: Vec<f64> = phi
            .iter()
            .zip(t_old[..dim].iter())
            .map(|(a, b)| s * a + b)
            .collect();
        mixed.push(t_old[dim]);
        let mn = weighted_norm(xi, &mixed[..dim], mixed[dim]);
        mixed.iter_mut().for_each(|v| *v /= mn);
        dirs.push(mixed);
    }

    let z_star = &record.point.z;
    let p_star = record.param_value;
    let mut seeds: Vec<Seed> = Vec::new();
    for dir in dirs {
        let z_pred: Vec<f64> = z_star
            .iter()
            .zip(dir[..dim].iter())
            .map(|(z, d)| z + delta * d)
            .collect();
        let p_pred = p_star + delta * dir[dim];
        problem.set_param(param, p_pred);
        let Ok((zc, pc, _)) = newton_correct(
            problem,
            &z_pred,
            Constraint::Arclength {
                param,
                tangent: &dir,
                z_ref: &z_pred,
                p_ref: p_pred,
            },
            settings.newton_tol,
            settings.newton_max_iter,
        ) else {
            continue;
        };
        // distance from the parent branch: remove the parent-tangent
        // component of the displacement and measure what is left
        let dz: Vec<f64> = zc.iter().zip(z_star.iter()).map(|(a, b)| a - b).collect();
        let dpv = pc - p_star;
        let along = weighted_dot(xi, &dz, dpv, &t_old[..dim], t_old[dim]);
        let total2 = xi * dz.iter().map(|v| v * v).sum::<f64>() + dpv * dpv;
        let perp = (total2 - along * along).max(0.0).sqrt();
        if perp <= settings.tol_distinct {
            continue;
        }
        // dedupe
        let dup = seeds.iter().any(|s| {
            let d: Vec<f64> = s.z.iter().zip(zc.iter()).map(|(a, b)| a - b).collect();
            weighted_norm(xi, &d, s.param_value - pc) <= settings.tol_distinct
        });
        if dup {
            continue;
        }
        let mut tangent: Vec<f64> = dz.iter().map(|v| v / (total2.sqrt())).collect();
        tangent.push(dpv / total2.sqrt());
        seeds.push(Seed {
            z: zc,
            param_value: pc,
            tangent,
        });
    }
    problem.set_param(param, p_star);
    if seeds.is_empty() {
        return Err(ContinuationError::AllPredictorsFellBack);
    }
    Ok(seeds)
}
