//! Semi-analytic reference values and scalar model problems.
//!
//! * Interface lengths on circular cones: the tip diameter `l1`, the
//!   winding interface `l2` (root solve on the flattened sector), and the
//!   horizontal circle `l3`.
//! * Neumann eigenvalues of the flat unit disk from Bessel-derivative
//!   roots, and the masses where the homogeneous branch bifurcates.
//! * The elementary steady-bifurcation normal forms (fold, transcritical,
//!   pitchforks, quintic, cusp) as [`Problem`] instances, which double as
//!   closed-form oracles for the continuation engine.

use crate::continuation::{BpSymmetry, ContinuationError, Problem, Stability};
use crate::linalg::bordered::DenseSolve;
use crate::linalg::LinearSolve;
use nalgebra::DMatrix;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no root bracketed for l2 at h = {0}")]
    NoRoot(f64),
    #[error("unknown normal form `{0}`")]
    UnknownNormalForm(String),
}

/// How a reference value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    RootSolve,
    EigenSolve,
}

/// A reference quantity with its inputs and method tag.
#[derive(Debug, Clone)]
pub struct OracleValue {
    pub name: &'static str,
    pub value: f64,
    pub inputs: Vec<(&'static str, f64)>,
    pub method: Method,
    /// Residual of the defining equation after re-substitution (root
    /// solves only).
    pub residual: f64,
}

/// Length of the tip interface along the short semi axis: the double slant
/// height `2 sqrt(1 + h^2)`.
pub fn l1(h: f64) -> OracleValue {
    OracleValue {
        name: "l1",
        value: 2.0 * (1.0 + h * h).sqrt(),
        inputs: vec![("h", h)],
        method: Method::ClosedForm,
        residual: 0.0,
    }
}

/// Length of the horizontal circular interface: `sqrt(2) pi`, attained at
/// height `(1 - 1/sqrt(2)) h`.
pub fn l3() -> OracleValue {
    OracleValue {
        name: "l3",
        value: 2.0f64.sqrt() * PI,
        inputs: vec![],
        method: Method::ClosedForm,
        residual: 0.0,
    }
}

/// Parameter-space height of the `l3` circle on a cone of height `h`.
pub fn l3_height(h: f64) -> f64 {
    (1.0 - 1.0 / 2.0f64.sqrt()) * h
}

/// Area-halving condition for the winding interface on the flattened
/// circular sector of radius `S = sqrt(1 + h^2)` and angle `2 pi / S`:
/// `A1(beta) + A2(beta) - alpha S^2 / 4` with
/// `A1 = r1^2/2 (2 beta - sin 2 beta)`, `A2 = S^2/2 (pi - 2 beta - sin 2
/// beta)`, `r1 = S cot beta`.
pub fn l2_area_mismatch(h: f64, beta: f64) -> f64 {
    let s2 = 1.0 + h * h;
    let s = s2.sqrt();
    let alpha = 2.0 * PI / s;
    let r1 = s / beta.tan();
    let a1 = 0.5 * r1 * r1 * (2.0 * beta - (2.0 * beta).sin());
    let a2 = 0.5 * s2 * (PI - 2.0 * beta - (2.0 * beta).sin());
    a1 + a2 - alpha * s2 / 4.0
}

/// Length of the winding interface on the circular cone of height `h`,
/// solved by bisection of the area-halving condition on
/// `beta in [1e-6, pi/2 - 1e-6]`. A failed bracket is reported, never
/// silently widened.
pub fn l2(h: f64) -> Result<OracleValue, OracleError> {
    let (mut lo, mut hi) = (1e-6, PI / 2.0 - 1e-6);
    let (flo, fhi) = (l2_area_mismatch(h, lo), l2_area_mismatch(h, hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(OracleError::NoRoot(h));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = l2_area_mismatch(h, mid);
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let beta = 0.5 * (lo + hi);
    let s = (1.0 + h * h).sqrt();
    let r1 = s / beta.tan();
    Ok(OracleValue {
        name: "l2",
        value: 2.0 * beta * r1,
        inputs: vec![("h", h), ("beta", beta)],
        method: Method::RootSolve,
        residual: l2_area_mismatch(h, beta).abs(),
    })
}

/// Bessel function of the first kind by power series (adequate for the
/// root ranges used here, `x <= 12`).
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(n as i32);
    for k in 1..=n {
        term /= k as f64;
    }
    let mut sum = term;
    let x2 = -half * half;
    for k in 1..60 {
        term *= x2 / (k as f64 * (k as f64 + n as f64));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-30) {
            break;
        }
    }
    sum
}

/// Derivative `J_n'(x) = (J_{n-1}(x) - J_{n+1}(x)) / 2`, with
/// `J_0' = -J_1`.
pub fn bessel_j_prime(n: u32, x: f64) -> f64 {
    if n == 0 {
        -bessel_j(1, x)
    } else {
        0.5 * (bessel_j(n - 1, x) - bessel_j(n + 1, x))
    }
}

/// Positive roots of `J_n'` up to `x_max`, by scan and bisection.
pub fn bessel_j_prime_roots(n: u32, x_max: f64) -> Vec<f64> {
    let mut roots = Vec::new();
    let step = 0.01;
    let mut x0 = 0.05; // skip the trivial root of J_n' at 0 for n != 1
    let mut f0 = bessel_j_prime(n, x0);
    while x0 < x_max {
        let x1 = x0 + step;
        let f1 = bessel_j_prime(n, x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0 * f1 < 0.0 {
            let (mut lo, mut hi) = (x0, x1);
            let mut flo = f0;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let fm = bessel_j_prime(n, mid);
                if flo * fm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        f0 = f1;
    }
    roots
}

/// The `count` smallest nonzero Neumann eigenvalues of the unit disk:
/// squared roots of the Bessel-derivative functions, with angular modes
/// `n >= 1` double.
pub fn disk_neumann_eigenvalues(count: usize) -> Vec<f64> {
    let x_max = 14.0;
    let mut nus: Vec<f64> = Vec::new();
    for n in 0..=12u32 {
        for r in bessel_j_prime_roots(n, x_max) {
            let nu = r * r;
            nus.push(nu);
            if n >= 1 {
                nus.push(nu); // cos and sin modes
            }
        }
    }
    nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nus.truncate(count);
    nus
}

/// Masses on the homogeneous branch where nontrivial branches bifurcate:
/// `m_k = sqrt((1 - eps^2 nu_k) / 3)` for each eigenvalue with
/// `eps^2 nu_k < 1` (the linearization `3 m^2 - 1 + eps^2 nu_k` vanishes
/// on the mean-zero subspace).
pub fn trivial_branch_bps(eps: f64, nus: &[f64]) -> Vec<f64> {
    nus.iter()
        .filter(|&&nu| eps * eps * nu < 1.0)
        .map(|&nu| ((1.0 - eps * eps * nu) / 3.0).sqrt())
        .collect()
}

/// Scalar bifurcation model problem `f(u, p) = 0` with analytic
/// derivatives, driven through the same engine as the FEM system.
pub struct ScalarProblem {
    pub name: &'static str,
    params: Vec<f64>,
    param_names: Vec<&'static str>,
    f: fn(f64, &[f64]) -> f64,
    fu: fn(f64, &[f64]) -> f64,
    fuu: fn(f64, &[f64]) -> f64,
    fp: fn(f64, &[f64], usize) -> f64,
    odd_symmetry: bool,
}

impl ScalarProblem {
    pub fn solution(&self, z: &[f64]) -> f64 {
        z[0]
    }

    /// Enable the odd-symmetry projectors used by branch-point curve
    /// continuation (valid for forms odd in `u`).
    pub fn with_odd_symmetry(mut self) -> Self {
        self.odd_symmetry = true;
        self
    }
}

/// The normal-form registry: `fold` (`mu - u^2`), `transcritical`
/// (`mu u + u^2`), `pitchfork-super` (`mu u - u^3`), `pitchfork-sub`
/// (`mu u + u^3`), `quintic` (`mu u + u^3 - u^5`), and `cusp`
/// (`-4 u^3 + 2 mu1 u - mu2`).
pub fn normal_form(name: &str) -> Result<ScalarProblem, OracleError> {
    let (f, fu, fuu, fp, param_names): (
        fn(f64, &[f64]) -> f64,
        fn(f64, &[f64]) -> f64,
        fn(f64, &[f64]) -> f64,
        fn(f64, &[f64], usize) -> f64,
        Vec<&'static str>,
    ) = match name {
        "fold" => (
            |u, p| p[0] - u * u,
            |u, _| -2.0 * u,
            |_, _| -2.0,
            |_, _, _| 1.0,
            vec!["mu"],
        ),
        "transcritical" => (
            |u, p| p[0] * u + u * u,
            |u, p| p[0] + 2.0 * u,
            |_, _| 2.0,
            |u, _, _| u,
            vec!["mu"],
        ),
        "pitchfork-super" => (
            |u, p| p[0] * u - u * u * u,
            |u, p| p[0] - 3.0 * u * u,
            |u, _| -6.0 * u,
            |u, _, _| u,
            vec!["mu"],
        ),
        "pitchfork-sub" => (
            |u, p| p[0] * u + u * u * u,
            |u, p| p[0] + 3.0 * u * u,
            |u, _| 6.0 * u,
            |u, _, _| u,
            vec!["mu"],
        ),
        "quintic" => (
            |u, p| p[0] * u + u.powi(3) - u.powi(5),
            |u, p| p[0] + 3.0 * u * u - 5.0 * u.powi(4),
            |u, _| 6.0 * u - 20.0 * u.powi(3),
            |u, _, _| u,
            vec!["mu"],
        ),
        "cusp" => (
            |u, p| -4.0 * u.powi(3) + 2.0 * p[0] * u - p[1],
            |u, p| -12.0 * u * u + 2.0 * p[0],
            |u, _| -24.0 * u,
            |u, _, i| if i == 0 { 2.0 * u } else { -1.0 },
            vec!["mu1", "mu2"],
        ),
        other => return Err(OracleError::UnknownNormalForm(other.to_string())),
    };
    Ok(ScalarProblem {
        name: match name {
            "fold" => "fold",
            "transcritical" => "transcritical",
            "pitchfork-super" => "pitchfork-super",
            "pitchfork-sub" => "pitchfork-sub",
            "quintic" => "quintic",
            _ => "cusp",
        },
        params: vec![0.0; param_names.len()],
        param_names,
        f,
        fu,
        fuu,
        fp,
        odd_symmetry: false,
    })
}

/// Pitchfork with a symmetry-preserving unfolding,
/// `f = (mu + beta) u - u^3`: the branch-point locus is the line
/// `mu + beta = 0`.
pub fn pitchfork_symmetric_unfolding() -> ScalarProblem {
    ScalarProblem {
        name: "pitchfork-unfolded",
        params: vec![0.0, 0.0],
        param_names: vec!["mu", "beta"],
        f: |u, p| (p[0] + p[1]) * u - u * u * u,
        fu: |u, p| p[0] + p[1] - 3.0 * u * u,
        fuu: |u, _| -6.0 * u,
        fp: |u, _, _| u,
        odd_symmetry: false,
    }
    .with_odd_symmetry()
}

impl Problem for ScalarProblem {
    fn dim(&self) -> usize {
        1
    }

    fn param_names(&self) -> &[&'static str] {
        &self.param_names
    }

    fn get_param(&self, idx: usize) -> f64 {
        self.params[idx]
    }

    fn set_param(&mut self, idx: usize, value: f64) {
        self.params[idx] = value;
    }

    fn residual(&mut self, z: &[f64]) -> Result<Vec<f64>, ContinuationError> {
        Ok(vec![(self.f)(z[0], &self.params)])
    }

    fn jac_vec(&mut self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, ContinuationError> {
        Ok(vec![(self.fu)(z[0], &self.params) * v[0]])
    }

    fn factor(
        &mut self,
        z: &[f64],
        cols: &[Vec<f64>],
        rows: &[Vec<f64>],
        corner: &DMatrix<f64>,
    ) -> Result<Box<dyn LinearSolve + Send + Sync>, ContinuationError> {
        let k = cols.len();
        let mut m = DMatrix::zeros(1 + k, 1 + k);
        m[(0, 0)] = (self.fu)(z[0], &self.params);
        for (j, c) in cols.iter().enumerate() {
            m[(0, 1 + j)] = c[0];
        }
        for (i, r) in rows.iter().enumerate() {
            m[(1 + i, 0)] = r[0];
        }
        for i in 0..k {
            for j in 0..k {
                m[(1 + i, 1 + j)] = corner[(i, j)];
            }
        }
        let solver = DenseSolve::new(m).map_err(ContinuationError::Linalg)?;
        Ok(Box::new(solver))
    }

    fn param_derivative(
        &mut self,
        z: &[f64],
        param: usize,
    ) -> Result<Vec<f64>, ContinuationError> {
        Ok(vec![(self.fp)(z[0], &self.params, param)])
    }

    fn jac_derivative_operator(
        &mut self,
        z: &[f64],
        v: &[f64],
    ) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>, ContinuationError> {
        let c = (self.fuu)(z[0], &self.params) * v[0];
        Ok(Box::new(move |x: &[f64]| vec![c * x[0]]))
    }

    fn second_derivative_contraction(
        &mut self,
        z: &[f64],
        psi: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>, ContinuationError> {
        Ok(vec![(self.fuu)(z[0], &self.params) * psi[0] * v[0]])
    }

    fn jac_vec_param_derivative(
        &mut self,
        z: &[f64],
        v: &[f64],
        param: usize,
    ) -> Result<Vec<f64>, ContinuationError> {
        // d f_u / d p via a small central difference on the analytic f_u
        let p0 = self.params[param];
        let dp = 1e-7 * (1.0 + p0.abs());
        self.params[param] = p0 + dp;
        let a = (self.fu)(z[0], &self.params);
        self.params[param] = p0 - dp;
        let b = (self.fu)(z[0], &self.params);
        self.params[param] = p0;
        Ok(vec![(a - b) / (2.0 * dp) * v[0]])
    }

    fn stability(
        &mut self,
        z: &[f64],
        _k: usize,
        _warm: Option<&[Vec<f64>]>,
    ) -> Result<Stability, ContinuationError> {
        // energy Hessian of the gradient system du/dt = f is -f_u
        Ok(Stability {
            eigs: vec![-(self.fu)(z[0], &self.params)],
            vectors: vec![vec![1.0]],
        })
    }

    fn absolute_index(
        &mut self,
        z: &[f64],
        tol_eig: f64,
    ) -> Result<Option<usize>, ContinuationError> {
        let e = -(self.fu)(z[0], &self.params);
        if e.abs() <= tol_eig {
            return Ok(None);
        }
        Ok(Some(usize::from(e < 0.0)))
    }

    fn norm_weight(&self) -> f64 {
        1.0
    }

    fn residual_norm(&self, r: &[f64]) -> f64 {
        r.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    fn observables(&mut self, z: &[f64]) -> (f64, f64) {
        (0.0, z[0])
    }

    fn bp_symmetry(&self) -> Option<BpSymmetry> {
        if !self.odd_symmetry {
            return None;
        }
        Some(BpSymmetry {
            project_state: Box::new(|z: &mut [f64]| z[0] = 0.0),
            project_kernel: Box::new(|_v: &mut [f64]| {}),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_values() {
        assert_eq!(l1(0.0).value, 2.0);
        assert!((l1(1.0).value - 2.0 * 2.0f64.sqrt()).abs() < 1e-14);
        assert!((l1(3.0).value - 2.0 * 10.0f64.sqrt()).abs() < 1e-14);
        assert!((l1(3.0).value - 6.32).abs() < 0.01);
    }

    #[test]
    fn l3_value() {
        assert!((l3().value - 4.442882938).abs() < 1e-8);
        assert!((l3_height(2.0) - (1.0 - 1.0 / 2.0f64.sqrt()) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn l2_matches_reported_value_at_h1() {
        let v = l2(1.0).unwrap();
        assert!((v.value - 2.71).abs() < 0.01, "l2(1) = {}", v.value);
        assert!(v.residual <= 1e-10, "residual {}", v.residual);
    }

    #[test]
    fn l2_degenerates_to_diameter_for_small_h() {
        let v = l2(0.01).unwrap();
        assert!((v.value - 2.0).abs() < 1e-3, "l2(0.01) = {}", v.value);
    }

    #[test]
    fn l2_below_l1_everywhere() {
        let mut h = 0.1;
        while h <= 5.0 {
            let v2 = l2(h).unwrap();
            assert!(v2.residual <= 1e-10);
            assert!(v2.value < l1(h).value, "h={h}: {} !< {}", v2.value, l1(h).value);
            h += 0.1;
        }
    }

    #[test]
    fn ordering_at_h1() {
        let (v1, v2, v3) = (l1(1.0).value, l2(1.0).unwrap().value, l3().value);
        assert!(v2 < v1 && v1 < v3, "{v2} < {v1} < {v3}");
    }

    /// `l1 = l3` at `h = sqrt(pi^2/2 - 1)`; `l1 < l3` below, `>` above.
    #[test]
    fn l1_l3_crossing() {
        let hc = (PI * PI / 2.0 - 1.0).sqrt();
        assert!((l1(hc).value - l3().value).abs() < 1e-12);
        assert!((hc - 1.973).abs() < 1e-3);
        assert!(l1(hc - 0.1).value < l3().value);
        assert!(l1(hc + 0.1).value > l3().value);
    }

    #[test]
    fn bessel_derivative_roots_match_literature() {
        // j'_{1,1}, j'_{2,1}, j'_{0,2}, j'_{3,1}
        let r1 = bessel_j_prime_roots(1, 4.0);
        assert!((r1[0] - 1.8411837813).abs() < 1e-8, "{}", r1[0]);
        let r2 = bessel_j_prime_roots(2, 4.0);
        assert!((r2[0] - 3.0542369282).abs() < 1e-8, "{}", r2[0]);
        let r0 = bessel_j_prime_roots(0, 5.0);
        assert!((r0[0] - 3.8317059702).abs() < 1e-8, "{}", r0[0]);
        let r3 = bessel_j_prime_roots(3, 5.0);
        assert!((r3[0] - 4.2011889412).abs() < 1e-8, "{}", r3[0]);
    }

    #[test]
    fn disk_spectrum_ordering_and_multiplicity() {
        let nus = disk_neumann_eigenvalues(8);
        // double dipole, double (n=2), single (0,2), double (n=3), ...
        let expect = [
            3.389_958_6,
            3.389_958_6,
            9.328_363_3,
            9.328_363_3,
            14.681_970_6,
            14.681_970_6,
            17.649_988_6,
            17.649_988_6,
        ];
        for (got, want) in nus.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 2e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn trivial_branch_bp_masses() {
        // flat unit disk at eps = 0.3: first BP mass
        let nus = disk_neumann_eigenvalues(4);
        let bps = trivial_branch_bps(0.3, &nus);
        assert!((bps[0] - 0.481).abs() < 1e-3, "{}", bps[0]);
        // eps >= 1/sqrt(nu_1) leaves no subcritical eigenvalue
        let none = trivial_branch_bps(0.6, &nus[..2]);
        assert!(none.is_empty());
    }

    #[test]
    fn normal_form_registry() {
        for name in [
            "fold",
            "transcritical",
            "pitchfork-super",
            "pitchfork-sub",
            "quintic",
            "cusp",
        ] {
            let mut p = normal_form(name).unwrap();
            let r = p.residual(&[0.1]).unwrap();
            assert_eq!(r.len(), 1);
        }
        assert!(matches!(
            normal_form("hopf"),
            Err(OracleError::UnknownNormalForm(_))
        ));
    }

    #[test]
    fn fold_solutions_and_quintic_folds() {
        let mut fold = normal_form("fold").unwrap();
        fold.set_param(0, 0.25);
        // u = +- sqrt(mu)
        assert!(fold.residual(&[0.5]).unwrap()[0].abs() < 1e-15);
        assert!(fold.residual(&[-0.5]).unwrap()[0].abs() < 1e-15);

        // quintic folds at (u, mu) = (+-1/sqrt2, -1/4)
        let mut q = normal_form("quintic").unwrap();
        q.set_param(0, -0.25);
        let u = 1.0 / 2.0f64.sqrt();
        assert!(q.residual(&[u]).unwrap()[0].abs() < 1e-15);
        assert!((q.fu)(u, &[-0.25]).abs() < 1e-15);
    }

    #[test]
    fn cusp_has_three_solutions_between_fold_curves() {
        let mut c = normal_form("cusp").unwrap();
        c.set_param(0, 0.5); // mu1 > 0
        c.set_param(1, 0.0); // mu2 between the fold curves
        // -4u^3 + u = 0: u = 0, +-1/2
        for u in [0.0, 0.5, -0.5] {
            assert!(c.residual(&[u]).unwrap()[0].abs() < 1e-15);
        }
        // middle solution unstable, outer ones stable
        assert_eq!(c.absolute_index(&[0.0], 1e-9).unwrap(), Some(1));
        assert_eq!(c.absolute_index(&[0.5], 1e-9).unwrap(), Some(0));
    }

    /// Finite-difference cross-check of the analytic derivatives wired
    /// into each normal form.
    #[test]
    fn normal_form_derivatives_consistent() {
        for name in ["fold", "transcritical", "pitchfork-super", "quintic", "cusp"] {
            let mut p = normal_form(name).unwrap();
            for i in 0..p.param_names().len() {
                p.set_param(i, 0.3 + 0.1 * i as f64);
            }
            let (u, d) = (0.37, 1e-6);
            let r0 = p.residual(&[u]).unwrap()[0];
            let r1 = p.residual(&[u + d]).unwrap()[0];
            let fd = (r1 - r0) / d;
            let jv = p.jac_vec(&[u], &[1.0]).unwrap()[0];
            assert!((fd - jv).abs() < 1e-5, "{name}: {fd} vs {jv}");
            for i in 0..p.param_names().len() {
                let p0 = p.get_param(i);
                p.set_param(i, p0 + d);
                let rp = p.residual(&[u]).unwrap()[0];
                p.set_param(i, p0);
                let fdp = (rp - r0) / d;
                let ap = p.param_derivative(&[u], i).unwrap()[0];
                assert!((fdp - ap).abs() < 1e-5, "{name} param {i}");
            }
        }
    }
}
