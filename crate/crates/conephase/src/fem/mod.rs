//! P1 finite elements for the mass-constrained Allen-Cahn problem on the
//! cone metric (or on a flat auxiliary domain).
//!
//! Discretized system, with `W(u) = (u^2 - 1)^2 / 4`:
//!
//! ```text
//!   F_i(u, lambda) = eps^2 (K u)_i + \int W'(u_h) phi_i - lambda (M 1)_i = 0,
//!   q(u)           = (1ᵀ M u) / area - m = 0,
//! ```
//!
//! where `K` carries the inverse-metric-weighted gradient inner product and
//! `M` the metric area element. The nonlinearity is evaluated at quadrature
//! points of the P1 interpolant (consistent Galerkin, not mass lumping:
//! lumping shifts bifurcation points noticeably at eps around 0.1), and the
//! energy shares the same quadrature rule so the discrete energy gradient
//! equals the residual field part exactly.

pub mod levelset;

pub use levelset::{level_set_length, LevelSet};

use crate::geometry::{self, ConeParams};
use crate::linalg::{
    reverse_cuthill_mckee, shift_invert_smallest, Bordered, CsrMatrix, LinalgError,
    LinearSolve,
};
use crate::linalg::eigen::ShiftInvertOptions;
use crate::linalg::sparse::SparsityPattern;
use crate::mesh::Mesh;
use std::sync::Arc;
use thiserror::Error;

/// Normalization `sigma = int_{-1}^{1} sqrt(W/2) = sqrt(2)/3`.
pub const SIGMA: f64 = 0.47140452079103173; // sqrt(2)/3

/// Shift for the constrained-Hessian eigensolver: the pencil is bounded
/// below by `min W'' = -1`, so -1.25 sits strictly under the spectrum.
pub const EIG_SHIFT: f64 = -1.25;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("degenerate triangle {0} (non-positive area)")]
    DegenerateTriangle(usize),
    #[error("field length {got} does not match node count {want}")]
    FieldLength { got: usize, want: usize },
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
    #[error("Newton did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("near-zero Hessian eigenvalue {0:.3e} prevents a Morse-index decision")]
    IndeterminateIndex(f64),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}

/// The surface carrying the energy: a cone over the unit disk, or a flat
/// domain (identity metric) for interface-profile calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Cone(ConeParams),
    Flat,
}

impl Surface {
    fn metric_at(&self, x: f64, y: f64) -> (f64, f64, f64, f64) {
        match self {
            Surface::Flat => (1.0, 0.0, 1.0, 1.0),
            Surface::Cone(p) => {
                let m = geometry::metric(p, x, y).expect("quadrature point is interior");
                (m.e, m.f, m.g, m.det)
            }
        }
    }

    pub fn metric_sample(&self, x: f64, y: f64) -> geometry::MetricSample {
        match self {
            Surface::Flat => geometry::MetricSample {
                e: 1.0,
                f: 0.0,
                g: 1.0,
                det: 1.0,
            },
            Surface::Cone(p) => geometry::metric(p, x, y).expect("point is interior"),
        }
    }
}

/// One critical-point candidate.
#[derive(Debug, Clone)]
pub struct State {
    pub u: Vec<f64>,
    pub lambda: f64,
    pub m: f64,
    pub eps: f64,
    pub cone: ConeParams,
}

/// Degree-4 Dunavant rule on the reference triangle: 6 strictly interior
/// points, weights normalized to sum 1.
const N_QUAD: usize = 6;
const QUAD: [([f64; 3], f64); N_QUAD] = {
    const A1: f64 = 0.108_103_018_168_070;
    const B1: f64 = 0.445_948_490_915_965;
    const W1: f64 = 0.223_381_589_678_011;
    const A2: f64 = 0.816_847_572_980_459;
    const B2: f64 = 0.091_576_213_509_771;
    const W2: f64 = 0.109_951_743_655_322;
    [
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Per-triangle quadrature cache: metric weights and basis gradients.
struct TriQuad {
    nodes: [usize; 3],
    /// `w_q * sqrt(det_q) * area_T` for each quadrature point
    w: [f64; N_QUAD],
    /// P1 basis gradients in parameter coordinates
    grad: [[f64; 2]; 3],
}

/// Assembled operators for one mesh/surface pair.
pub struct DiscreteOperators {
    pub surface: Surface,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    /// `M 1`: the (dense) vector of nodal masses.
    pub mass_vec: Vec<f64>,
    /// Total surface area = sum of all mass entries.
    pub area: f64,
    pub pattern: Arc<SparsityPattern>,
    /// RCM permutation (`perm[old] = new`) and resulting bandwidth.
    pub perm: Vec<usize>,
    pub bandwidth: usize,
    quad: Vec<TriQuad>,
    n_nodes: usize,
}

/// Assemble stiffness/mass operators for the given mesh and surface.
pub fn assemble(mesh: &Mesh, surface: Surface) -> Result<DiscreteOperators, FemError> {
    let n = mesh.n_nodes();
    let pattern = SparsityPattern::from_triangles(n, &mesh.triangles);
    let mut stiffness = CsrMatrix::zeros(pattern.clone());
    let mut mass = CsrMatrix::zeros(pattern.clone());
    let mut quad = Vec::with_capacity(mesh.n_triangles());

    for (ti, t) in mesh.triangles.iter().enumerate() {
        let [pa, pb, pc] = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
        let area2 = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        if area2 <= 0.0 {
            return Err(FemError::DegenerateTriangle(ti));
        }
        let area = 0.5 * area2;
        // P1 gradients: grad phi_a = (yb - yc, xc - xb) / (2 area), cyclic
        let grad = [
            [(pb[1] - pc[1]) / area2, (pc[0] - pb[0]) / area2],
            [(pc[1] - pa[1]) / area2, (pa[0] - pc[0]) / area2],
            [(pa[1] - pb[1]) / area2, (pb[0] - pa[0]) / area2],
        ];
        let mut w = [0.0; N_QUAD];
        let mut k_e = [[0.0f64; 3]; 3];
        let mut m_e = [[0.0f64; 3]; 3];
        for (q, (bary, wq)) in QUAD.iter().enumerate() {
            let x = bary[0] * pa[0] + bary[1] * pb[0] + bary[2] * pc[0];
            let y = bary[0] * pa[1] + bary[1] * pb[1] + bary[2] * pc[1];
            let (me, mf, mg, det) = surface.metric_at(x, y);
            let sq = det.sqrt();
            let wt = wq * area;
            w[q] = wt * sq;
            // inverse metric: [g, -f; -f, e] / det
            let c = wt / sq;
            for i in 0..3 {
                for j in 0..3 {
                    let gi = grad[i];
                    let gj = grad[j];
                    k_e[i][j] += c
                        * (mg * gi[0] * gj[0] - mf * (gi[0] * gj[1] + gi[1] * gj[0])
                            + me * gi[1] * gj[1]);
                    m_e[i][j] += wt * sq * bary[i] * bary[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                stiffness.add(t[i], t[j], k_e[i][j]);
                mass.add(t[i], t[j], m_e[i][j]);
            }
        }
        quad.push(TriQuad { nodes: *t, w, grad });
    }

    let mass_vec = mass.row_sums();
    let area = mass.sum_all();
    let perm = reverse_cuthill_mckee(&pattern);
    let bandwidth = stiffness.bandwidth_under(&perm);
    Ok(DiscreteOperators {
        surface,
        stiffness,
        mass,
        mass_vec,
        area,
        pattern,
        perm,
        bandwidth,
        quad,
        n_nodes: n,
    })
}

#[inline]
fn w_prime(u: f64) -> f64 {
    u * (u * u - 1.0)
}

#[inline]
fn w_double_prime(u: f64) -> f64 {
    3.0 * u * u - 1.0
}

#[inline]
fn w_potential(u: f64) -> f64 {
    let d = u * u - 1.0;
    0.25 * d * d
}

impl DiscreteOperators {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    fn check_len(&self, u: &[f64]) -> Result<(), FemError> {
        if u.len() != self.n_nodes {
            return Err(FemError::FieldLength {
                got: u.len(),
                want: self.n_nodes,
            });
        }
        Ok(())
    }

    /// Quadrature of `f(u_h) * phi_i` over the surface.
    fn assemble_nonlinear_vec(&self, u: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes];
        for tq in &self.quad {
            let [i0, i1, i2] = tq.nodes;
            let uv = [u[i0], u[i1], u[i2]];
            for (q, (bary, _)) in QUAD.iter().enumerate() {
                let uq = bary[0] * uv[0] + bary[1] * uv[1] + bary[2] * uv[2];
                let fw = f(uq) * tq.w[q];
                out[i0] += fw * bary[0];
                out[i1] += fw * bary[1];
                out[i2] += fw * bary[2];
            }
        }
        out
    }

    /// Quadrature of `f(u_h) phi_i phi_j` (a weighted mass matrix).
    pub fn weighted_mass(&self, u: &[f64], f: impl Fn(f64) -> f64) -> CsrMatrix {
        let mut out = CsrMatrix::zeros(self.pattern.clone());
        for tq in &self.quad {
            let [i0, i1, i2] = tq.nodes;
            let uv = [u[i0], u[i1], u[i2]];
            let mut e = [[0.0f64; 3]; 3];
            for (q, (bary, _)) in QUAD.iter().enumerate() {
                let uq = bary[0] * uv[0] + bary[1] * uv[1] + bary[2] * uv[2];
                let fw = f(uq) * tq.w[q];
                for i in 0..3 {
                    for j in 0..=i {
                        e[i][j] += fw * bary[i] * bary[j];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    let v = if j <= i { e[i][j] } else { e[j][i] };
                    out.add(tq.nodes[i], tq.nodes[j], v);
                }
            }
        }
        out
    }

    /// Quadrature of `f(u_h, v_h) phi_i phi_j` for two nodal fields.
    pub fn weighted_mass2(
        &self,
        u: &[f64],
        v: &[f64],
        f: impl Fn(f64, f64) -> f64,
    ) -> CsrMatrix {
        let mut out = CsrMatrix::zeros(self.pattern.clone());
        for tq in &self.quad {
            let [i0, i1, i2] = tq.nodes;
            let uv = [u[i0], u[i1], u[i2]];
            let vv = [v[i0], v[i1], v[i2]];
            let mut e = [[0.0f64; 3]; 3];
            for (q, (bary, _)) in QUAD.iter().enumerate() {
                let uq = bary[0] * uv[0] + bary[1] * uv[1] + bary[2] * uv[2];
                let vq = bary[0] * vv[0] + bary[1] * vv[1] + bary[2] * vv[2];
                let fw = f(uq, vq) * tq.w[q];
                for i in 0..3 {
                    for j in 0..=i {
                        e[i][j] += fw * bary[i] * bary[j];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    let w = if j <= i { e[i][j] } else { e[j][i] };
                    out.add(tq.nodes[i], tq.nodes[j], w);
                }
            }
        }
        out
    }

    /// Quadrature of `f(u_h)` over the surface.
    fn integrate(&self, u: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        let mut s = 0.0;
        for tq in &self.quad {
            let uv = [u[tq.nodes[0]], u[tq.nodes[1]], u[tq.nodes[2]]];
            for (q, (bary, _)) in QUAD.iter().enumerate() {
                let uq = bary[0] * uv[0] + bary[1] * uv[1] + bary[2] * uv[2];
                s += f(uq) * tq.w[q];
            }
        }
        s
    }

    /// Volume average `<u>`.
    pub fn mean(&self, u: &[f64]) -> f64 {
        let dot: f64 = self.mass_vec.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        dot / self.area
    }

    /// Per-triangle interface indicator `int |grad u|_g^2` (metric gradient).
    pub fn interface_indicator(&self, u: &[f64]) -> Vec<f64> {
        self.quad
            .iter()
            .map(|tq| {
                let du = [
                    u[tq.nodes[1]] - u[tq.nodes[0]],
                    u[tq.nodes[2]] - u[tq.nodes[0]],
                ];
                let gx = du[0] * tq.grad[1][0] + du[1] * tq.grad[2][0];
                let gy = du[0] * tq.grad[1][1] + du[1] * tq.grad[2][1];
                // metric-weighted |grad|^2 integrated with the cached weights
                let mut s = 0.0;
                for q in 0..N_QUAD {
                    // inverse metric applied approximately via cached sqrt(det):
                    // the indicator only ranks triangles, so the parameter-plane
                    // gradient against the area weight is sufficient.
                    s += (gx * gx + gy * gy) * tq.w[q];
                }
                s
            })
            .collect()
    }
}

/// Residual of the discrete system at `(u, lambda)` for mass `m` and
/// interface width `eps`: field equations and constraint scalar.
pub fn residual(
    u: &[f64],
    lambda: f64,
    m: f64,
    eps: f64,
    ops: &DiscreteOperators,
) -> Result<(Vec<f64>, f64), FemError> {
    ops.check_len(u)?;
    let mut field = ops.assemble_nonlinear_vec(u, w_prime);
    ops.stiffness.matvec_add(eps * eps, u, &mut field);
    for (fi, mi) in field.iter_mut().zip(ops.mass_vec.iter()) {
        *fi -= lambda * mi;
    }
    let q = ops.mean(u) - m;
    Ok((field, q))
}

/// Energy `E_eps(u) = (1/2 sigma) [ (eps/2) uᵀKu + (1/eps) int W(u) ]`.
pub fn energy(u: &[f64], eps: f64, ops: &DiscreteOperators) -> Result<f64, FemError> {
    ops.check_len(u)?;
    let ku = ops.stiffness.apply(u);
    let grad: f64 = u.iter().zip(ku.iter()).map(|(a, b)| a * b).sum();
    let pot = ops.integrate(u, w_potential);
    Ok((0.5 * eps * grad + pot / eps) / (2.0 * SIGMA))
}

/// Hessian field block `A = eps^2 K + M_{W''(u)}`.
pub fn hessian(u: &[f64], eps: f64, ops: &DiscreteOperators) -> Result<CsrMatrix, FemError> {
    ops.check_len(u)?;
    let mw = ops.weighted_mass(u, w_double_prime);
    let mut a = CsrMatrix::zeros(ops.pattern.clone());
    a.set_linear_combination(eps * eps, &ops.stiffness, 1.0, &mw);
    Ok(a)
}

/// Directional derivative of the Hessian applied to `v`:
/// `(d/du A(u)[w]) v = int W'''(u) w v phi_i`, used by the fold system.
pub fn hessian_derivative_vec(
    u: &[f64],
    v: &[f64],
    w: &[f64],
    ops: &DiscreteOperators,
) -> Result<Vec<f64>, FemError> {
    ops.check_len(u)?;
    ops.check_len(v)?;
    ops.check_len(w)?;
    let mut out = vec![0.0; ops.n_nodes];
    for tq in &ops.quad {
        let [i0, i1, i2] = tq.nodes;
        let uv = [u[i0], u[i1], u[i2]];
        let vv = [v[i0], v[i1], v[i2]];
        let wv = [w[i0], w[i1], w[i2]];
        for (q, (bary, _)) in QUAD.iter().enumerate() {
            let uq = bary[0] * uv[0] + bary[1] * uv[1] + bary[2] * uv[2];
            let vq = bary[0] * vv[0] + bary[1] * vv[1] + bary[2] * vv[2];
            let wq = bary[0] * wv[0] + bary[1] * wv[1] + bary[2] * wv[2];
            let fw = 6.0 * uq * vq * wq * tq.w[q];
            out[i0] += fw * bary[0];
            out[i1] += fw * bary[1];
            out[i2] += fw * bary[2];
        }
    }
    Ok(out)
}

/// Factor the bordered Jacobian
/// `[A, -M1; (M1)ᵀ/area, 0]` plus `extra` border columns/rows, with one
/// refinement step driven by the exact sparse matvec.
///
/// Extra columns have length `n + 1` (field part plus their entry in the
/// constraint row); extra rows have length `n + 1` (u part plus their
/// lambda coefficient). Solution/rhs layout: `[u; lambda; extras]`.
pub fn factor_bordered(
    a: &CsrMatrix,
    ops: &DiscreteOperators,
    extra_cols: Vec<Vec<f64>>,
    extra_rows: Vec<Vec<f64>>,
    extra_corner: nalgebra::DMatrix<f64>,
) -> Result<Bordered, FemError> {
    let n = ops.n_nodes;
    let k_extra = extra_cols.len();
    debug_assert_eq!(extra_rows.len(), k_extra);
    let band = a.to_band(&ops.perm, ops.bandwidth);
    let lu = band.factor()?;
    let lu_permuted = PermutedSolve {
        inner: lu,
        perm: ops.perm.clone(),
    };

    let k = 1 + k_extra;
    let mut cols = Vec::with_capacity(k);
    let mut rows = Vec::with_capacity(k);
    let mut corner = nalgebra::DMatrix::zeros(k, k);
    cols.push(ops.mass_vec.iter().map(|v| -v).collect::<Vec<f64>>());
    rows.push(ops.mass_vec.iter().map(|v| v / ops.area).collect::<Vec<f64>>());
    for (j, c) in extra_cols.into_iter().enumerate() {
        debug_assert_eq!(c.len(), n + 1);
        corner[(0, 1 + j)] = c[n]; // constraint-row entry of this column
        cols.push(c[..n].to_vec());
    }
    for (i, r) in extra_rows.into_iter().enumerate() {
        debug_assert_eq!(r.len(), n + 1);
        corner[(1 + i, 0)] = r[n]; // lambda coefficient of this row
        rows.push(r[..n].to_vec());
    }
    for i in 0..k_extra {
        for j in 0..k_extra {
            corner[(1 + i, 1 + j)] = extra_corner[(i, j)];
        }
    }
    let a_csr = a.clone();
    let mv: MatVecBox = Box::new(move |x: &[f64]| a_csr.apply(x));
    Ok(Bordered::new(Box::new(lu_permuted), cols, rows, corner)?.with_refinement(mv))
}

type MatVecBox = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Banded solver conjugated by the RCM permutation.
struct PermutedSolve {
    inner: crate::linalg::BandLu,
    perm: Vec<usize>,
}

impl LinearSolve for PermutedSolve {
    fn n(&self) -> usize {
        self.perm.len()
    }
    fn solve_in_place(&self, b: &mut [f64]) {
        let n = b.len();
        let mut pb = vec![0.0; n];
        for (old, &new) in self.perm.iter().enumerate() {
            pb[new] = b[old];
        }
        self.inner.solve_in_place(&mut pb);
        for (old, &new) in self.perm.iter().enumerate() {
            b[old] = pb[new];
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

/// Mesh-independent residual scale: mean nodal mass converts the algebraic
/// residual into a function-space sup norm.
pub fn residual_norm(field: &[f64], q: f64, ops: &DiscreteOperators) -> f64 {
    let ms = ops.area / ops.n_nodes as f64;
    let fmax = field.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    (fmax / ms).max(q.abs())
}

/// Newton iteration at fixed `(m, eps)` from the initial guess, correcting
/// `(u, lambda)` together through the bordered Jacobian.
pub fn newton_fixed_mass(
    u0: &[f64],
    lambda0: f64,
    m: f64,
    eps: f64,
    ops: &DiscreteOperators,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, f64, usize), FemError> {
    let mut u = u0.to_vec();
    let mut lambda = lambda0;
    for iter in 0..opts.max_iter {
        let (field, q) = residual(&u, lambda, m, eps, ops)?;
        let rn = residual_norm(&field, q, ops);
        if rn <= opts.tol {
            return Ok((u, lambda, iter));
        }
        let a = hessian(&u, eps, ops)?;
        let solver = factor_bordered(&a, ops, vec![], vec![], nalgebra::DMatrix::zeros(0, 0))?;
        let mut rhs = field;
        rhs.push(q);
        for v in rhs.iter_mut() {
            *v = -*v;
        }
        solver.solve_in_place(&mut rhs);
        lambda += rhs[ops.n_nodes];
        for (ui, di) in u.iter_mut().zip(rhs.iter()) {
            *ui += di;
        }
    }
    let (field, q) = residual(&u, lambda, m, eps, ops)?;
    let rn = residual_norm(&field, q, ops);
    if rn <= opts.tol {
        Ok((u, lambda, opts.max_iter))
    } else {
        Err(FemError::NoConvergence {
            iters: opts.max_iter,
            residual: rn,
        })
    }
}

/// Smallest eigenvalues of the constrained Hessian pencil
/// `(A, M)` restricted to `{v : (M1)ᵀ v = 0}`.
pub fn constrained_hessian_eigs(
    u: &[f64],
    eps: f64,
    ops: &DiscreteOperators,
    k: usize,
    warm: Option<&[Vec<f64>]>,
) -> Result<crate::linalg::EigenPairs, FemError> {
    let a = hessian(u, eps, ops)?;
    // A - tau M, bordered by the mass vector
    let mut shifted = CsrMatrix::zeros(ops.pattern.clone());
    shifted.set_linear_combination(1.0, &a, -EIG_SHIFT, &ops.mass);
    let solver = factor_bordered(
        &shifted,
        ops,
        vec![],
        vec![],
        nalgebra::DMatrix::zeros(0, 0),
    )?;
    // the lambda border in factor_bordered is -M1 / (M1)ᵀ/area, which is the
    // same constraint subspace as the eigenproblem needs
    let pairs = shift_invert_smallest(
        &a,
        &ops.mass,
        Some(&ops.mass_vec),
        &solver,
        EIG_SHIFT,
        k,
        warm,
        &ShiftInvertOptions::default(),
    )?;
    Ok(pairs)
}

/// Number of negative eigenvalues of the constrained Hessian. Eigenvalues
/// within `tol_eig` of zero make the index indeterminate.
pub fn morse_index(state: &State, ops: &DiscreteOperators, tol_eig: f64) -> Result<usize, FemError> {
    let mut k = 8usize;
    loop {
        let pairs = constrained_hessian_eigs(&state.u, state.eps, ops, k, None)?;
        if let Some(&near) = pairs
            .values
            .iter()
            .find(|v| v.abs() <= tol_eig)
        {
            return Err(FemError::IndeterminateIndex(near));
        }
        let negatives = pairs.values.iter().filter(|&&v| v < 0.0).count();
        if negatives < pairs.values.len() || pairs.values.len() >= ops.n_nodes - 1 {
            return Ok(negatives);
        }
        k *= 2; // every tracked eigenvalue was negative: widen the window
        if k > 128 {
            return Ok(negatives);
        }
    }
}

#[cfg(test)]
mod tests;
