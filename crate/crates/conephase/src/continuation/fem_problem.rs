//! The constrained Allen-Cahn FEM system as a continuation problem.
//!
//! The unknown vector is `z = [u_1 .. u_n, lambda]`; parameters are
//! `(m, eps, h, a)`. Changing `h` or `a` re-assembles the operators for the
//! new metric (the parameter domain stays the unit disk, so the mesh is
//! reused). During eps-continuation the problem can adaptively refine its
//! mesh toward the interface and transfer the field.

use super::problem::{BpSymmetry, Problem, Stability};
use super::ContinuationError;
use crate::fem::{self, DiscreteOperators, State, Surface};
use crate::geometry::ConeParams;
use crate::linalg::LinearSolve;
use crate::mesh::{self, Mesh, RefineOptions};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    M = 0,
    Eps = 1,
    H = 2,
    A = 3,
}

pub const PARAM_NAMES: [&str; 4] = ["m", "eps", "h", "a"];

/// Interface classification at `m = 0` from the zero level set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterfaceType {
    /// Passes through (within mesh size of) the tip.
    T1,
    /// Boundary-to-boundary interface avoiding the tip.
    T2,
    /// Closed loop around the tip.
    T3,
    Other,
}

impl InterfaceType {
    pub fn as_str(&self) -> &'static str {
        match self {
            InterfaceType::T1 => "T1",
            InterfaceType::T2 => "T2",
            InterfaceType::T3 => "T3",
            InterfaceType::Other => "other",
        }
    }
}

pub struct FemProblem {
    mesh: Mesh,
    params: [f64; 4],
    ops: Option<DiscreteOperators>,
    /// Refinement policy for eps-continuation.
    pub element_cap: usize,
    pub refine_fraction: f64,
    pub interface_width_factor: f64,
    pub max_adapt_rounds: usize,
}

impl FemProblem {
    pub fn new(mesh: Mesh, h: f64, a: f64, m: f64, eps: f64) -> Result<Self, ContinuationError> {
        ConeParams::new(h, a).map_err(fem::FemError::Geometry)?;
        Ok(Self {
            mesh,
            params: [m, eps, h, a],
            ops: None,
            element_cap: mesh::DEFAULT_ELEMENT_CAP,
            refine_fraction: 0.2,
            interface_width_factor: 1.5,
            max_adapt_rounds: 4,
        })
    }

    pub fn cone(&self) -> ConeParams {
        ConeParams {
            h: self.params[2],
            a: self.params[3],
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn ops(&mut self) -> Result<&DiscreteOperators, ContinuationError> {
        if self.ops.is_none() {
            let ops = fem::assemble(&self.mesh, Surface::Cone(self.cone()))?;
            self.ops = Some(ops);
        }
        Ok(self.ops.as_ref().unwrap())
    }

    fn split<'z>(&self, z: &'z [f64]) -> (&'z [f64], f64) {
        let n = self.mesh.n_nodes();
        (&z[..n], z[n])
    }

    /// Homogeneous state `u = m` with `lambda = W'(m)`.
    pub fn trivial_state(&self, m: f64) -> Vec<f64> {
        let n = self.mesh.n_nodes();
        let mut z = vec![m; n + 1];
        z[n] = m * m * m - m;
        z
    }

    pub fn snapshot(&self, z: &[f64]) -> State {
        let (u, lambda) = self.split(z);
        State {
            u: u.to_vec(),
            lambda,
            m: self.params[0],
            eps: self.params[1],
            cone: self.cone(),
        }
    }

    pub fn classify(&mut self, z: &[f64]) -> Result<InterfaceType, ContinuationError> {
        let z = z.to_vec();
        let (u, _) = self.split(&z);
        let surface = Surface::Cone(self.cone());
        Ok(classify_interface(u, &self.mesh, &surface))
    }

    /// Mirror node map over an axis; None when the mesh lost exact symmetry
    /// (e.g. after refinement).
    fn mirror_map(&self, flip_x: bool) -> Option<Vec<usize>> {
        let norm0 = |v: f64| if v == 0.0 { 0.0 } else { v };
        let lookup: std::collections::HashMap<(u64, u64), usize> = self
            .mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| ((norm0(p[0]).to_bits(), norm0(p[1]).to_bits()), i))
            .collect();
        let mut map = Vec::with_capacity(self.mesh.n_nodes());
        for p in &self.mesh.nodes {
            let q = if flip_x { [-p[0], p[1]] } else { [p[0], -p[1]] };
            map.push(*lookup.get(&(norm0(q[0]).to_bits(), norm0(q[1]).to_bits()))?);
        }
        Some(map)
    }

    /// Interface resolution check: largest mesh size along the zero level
    /// set, or None when there is no interface.
    fn interface_mesh_size(&self, u: &[f64]) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for t in &self.mesh.triangles {
            let (a, b, c) = (u[t[0]], u[t[1]], u[t[2]]);
            let lo = a.min(b).min(c);
            let hi = a.max(b).max(c);
            if lo < 0.0 && hi >= 0.0 {
                let h = self.mesh.longest_edge_of(t);
                worst = Some(worst.map_or(h, |w: f64| w.max(h)));
            }
        }
        worst
    }
}

/// Classifier used for branch labels at `m = 0`: tip passage within local
/// mesh size means T1, a closed loop winding once around the origin is T3,
/// an open boundary-to-boundary interface avoiding the tip is T2.
pub fn classify_interface(u: &[f64], mesh: &Mesh, surface: &Surface) -> InterfaceType {
    let ls = fem::level_set_length(u, 0.0, mesh, surface);
    if ls.is_empty() {
        return InterfaceType::Other;
    }
    // local mesh size at the origin
    let origin = (0..mesh.n_nodes())
        .min_by(|&i, &j| {
            let ri = mesh.nodes[i][0].powi(2) + mesh.nodes[i][1].powi(2);
            let rj = mesh.nodes[j][0].powi(2) + mesh.nodes[j][1].powi(2);
            ri.partial_cmp(&rj).unwrap()
        })
        .unwrap();
    let mut local_h = f64::INFINITY;
    for t in &mesh.triangles {
        if t.contains(&origin) {
            local_h = local_h.min(mesh.longest_edge_of(t));
        }
    }
    if ls.min_distance_to_origin() <= local_h {
        return InterfaceType::T1;
    }
    if ls
        .winding_around_origin()
        .iter()
        .any(|w| matches!(w, Some(w) if w.abs() == 1))
    {
        return InterfaceType::T3;
    }
    let ends = ls.open_endpoints();
    if ends.len() == 2
        && ends
            .iter()
            .all(|p| (p[0] * p[0] + p[1] * p[1]).sqrt() > 1.0 - 0.05)
    {
        return InterfaceType::T2;
    }
    InterfaceType::Other
}

impl Problem for FemProblem {
    fn dim(&self) -> usize {
        self.mesh.n_nodes() + 1
    }

    fn param_names(&self) -> &[&'static str] {
        &PARAM_NAMES
    }

    fn get_param(&self, idx: usize) -> f64 {
        self.params[idx]
    }

    fn set_param(&mut self, idx: usize, value: f64) {
        if self.params[idx] != value && idx >= 2 {
            self.ops = None; // metric changed
        }
        self.params[idx] = value;
    }

    fn residual(&mut self, z: &[f64]) -> Result<Vec<f64>, ContinuationError> {
        let [m, eps, ..] = self.params;
        let z = z.to_vec();
        let ops = self.ops()?;
        let n = ops.n_nodes();
        let (field, q) = fem::residual(&z[..n], z[n], m, eps, ops)?;
        let mut out = field;
        out.push(q);
        Ok(out)
    }

    fn jac_vec(&mut self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, ContinuationError> {
        let eps = self.params[1];
        let z = z.to_vec();
        let v = v.to_vec();
        let ops = self.ops()?;
        let n = ops.n_nodes();
        let a = fem::hessian(&z[..n], eps, ops)?;
        let mut out = a.apply(&v[..n]);
        for (oi, mi) in out.iter_mut().zip(ops.mass_vec.iter()) {
            *oi -= v[n] * mi;
        }
        let q_dot: f64 = ops
            .mass_vec
            .iter()
            .zip(v[..n].iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / ops.area;
        out.push(q_dot);
        Ok(out)
    }

    fn factor(
        &mut self,
        z: &[f64],
        cols: &[Vec<f64>],
        rows: &[Vec<f64>],
        corner: &DMatrix<f64>,
    ) -> Result<Box<dyn LinearSolve + Send + Sync>, ContinuationError> {
        let eps = self.params[1];
        let z = z.to_vec();
        let ops = self.ops()?;
        let n = ops.n_nodes();
        let a = fem::hessian(&z[..n], eps, ops)?;
        let solver = fem::factor_bordered(&a, ops, cols.to_vec(), rows.to_vec(), corner.clone())?;
        Ok(Box::new(solver))
    }

    fn jac_derivative_operator(
        &mut self,
        z: &[f64],
        v: &[f64],
    ) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>, ContinuationError> {
        let z = z.to_vec();
        let v = v.to_vec();
        let ops = self.ops()?;
        let n = ops.n_nodes();
        // D_ij = int W'''(u) v phi_i phi_j, acting on the u-part only
        let d = ops.weighted_mass2(&z[..n], &v[..n], |uq, vq| 6.0 * uq * vq);
        Ok(Box::new(move |x: &[f64]| {
            let mut out = d.apply(&x[..d.n()]);
            out.push(0.0);
            out
        }))
    }

    fn second_derivative_contraction(
        &mut self,
        z: &[f64],
        psi: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>, ContinuationError> {
        let z = z.to_vec();
        let ops = self.ops()?;
        let n = ops.n_nodes();
        let mut out = fem::hessian_derivative_vec(&z[..n], &psi[..n], &v[..n], ops)?;
        out.push(0.0);
        Ok(out)
    }

    fn left_kernel_from_right(&self, v: &[f64]) -> Vec<f64> {
        // [A, -M1; M1ᵀ/area, 0] has left kernel (v_u, -nu * area) for right
        // kernel (v_u, nu)
        let n = self.mesh.n_nodes();
        let area = self.ops.as_ref().map_or(1.0, |o| o.area);
        let mut out = v.to_vec();
        out[n] = -v[n] * area;
        out
    }

    fn stability(
        &mut self,
        z: &[f64],
        k: usize,
        warm: Option<&[Vec<f64>]>,
    ) -> Result<Stability, ContinuationError> {
        let eps = self.params[1];
        let z = z.to_vec();
        let ops = self.ops()?;
        let n = ops.n_nodes();
        let warm_stripped: Option<Vec<Vec<f64>>> = warm.map(|w| {
            w.iter()
                .filter(|v| v.len() == n + 1 || v.len() == n)
                .map(|v| v[..n.min(v.len())].to_vec())
                .collect()
        });
        let pairs =
            fem::constrained_hessian_eigs(&z[..n], eps, ops, k, warm_stripped.as_deref())?;
        let vectors = pairs
            .vectors
            .into_iter()
            .map(|mut v| {
                v.push(0.0); // lambda-component of kernel candidates
                v
            })
            .collect();
        Ok(Stability {
            eigs: pairs.values,
            vectors,
        })
    }

    fn absolute_index(
        &mut self,
        z: &[f64],
        tol_eig: f64,
    ) -> Result<Option<usize>, ContinuationError> {
        let eps = self.params[1];
        let zc = z.to_vec();
        let mut k = 8usize;
        loop {
            let ops = self.ops()?;
            let n = ops.n_nodes();
            let pairs = fem::constrained_hessian_eigs(&zc[..n], eps, ops, k, None)?;
            if pairs.values.iter().any(|v| v.abs() <= tol_eig) {
                return Ok(None);
            }
            let negatives = pairs.values.iter().filter(|&&v| v < 0.0).count();
            if negatives < pairs.values.len() {
                return Ok(Some(negatives));
            }
            k *= 2;
            if k > 64 {
                return Ok(None);
            }
        }
    }

    fn norm_weight(&self) -> f64 {
        1.0 / self.dim() as f64
    }

    fn residual_norm(&self, r: &[f64]) -> f64 {
        let n = self.mesh.n_nodes();
        match &self.ops {
            Some(ops) => fem::residual_norm(&r[..n], r[n], ops),
            None => r.iter().fold(0.0f64, |a, &v| a.max(v.abs())),
        }
    }

    fn validate_for_continuation(&self) -> Result<(), ContinuationError> {
        if self.params[3] <= 1.0 {
            return Err(ContinuationError::InvalidProblem(
                "continuation requires an elliptic cone (a > 1): at a = 1 the O(2) \
                 symmetry makes angular branch points double"
                    .into(),
            ));
        }
        Ok(())
    }

    fn observables(&mut self, z: &[f64]) -> (f64, f64) {
        let eps = self.params[1];
        let z = z.to_vec();
        let Ok(ops) = self.ops() else {
            return (f64::NAN, f64::NAN);
        };
        let n = ops.n_nodes();
        let energy = fem::energy(&z[..n], eps, ops).unwrap_or(f64::NAN);
        (z[n], energy)
    }

    fn maybe_adapt(&mut self, z: &mut Vec<f64>) -> Result<bool, ContinuationError> {
        let eps = self.params[1];
        let mut adapted = false;
        for _ in 0..self.max_adapt_rounds {
            let n = self.mesh.n_nodes();
            let u = z[..n].to_vec();
            let lambda = z[n];
            let Some(h_loc) = self.interface_mesh_size(&u) else {
                break;
            };
            if eps >= self.interface_width_factor * h_loc {
                break;
            }
            if self.mesh.n_triangles() >= self.element_cap {
                break;
            }
            let indicator = self.ops()?.interface_indicator(&u);
            let opts = RefineOptions {
                element_cap: self.element_cap,
                project_to_circle: true,
            };
            let fine = match mesh::refine_with_options(
                &self.mesh,
                &indicator,
                self.refine_fraction,
                opts,
            ) {
                Ok(m) => m,
                Err(mesh::MeshError::ElementCap { .. }) => break,
                Err(e) => return Err(e.into()),
            };
            let mut u_new = mesh::transfer(&u, &self.mesh, &fine)?;
            self.mesh = fine;
            self.ops = None;
            u_new.push(lambda);
            *z = u_new;
            adapted = true;
        }
        Ok(adapted)
    }

    fn bp_symmetry(&self) -> Option<BpSymmetry> {
        // gamma_1 gamma_3: u -> -u(-x, y). Valid at m = 0 for b1-family
        // branches (tip interface along the y axis).
        let mirror = self.mirror_map(true)?;
        let n = self.mesh.n_nodes();
        let mirror2 = mirror.clone();
        Some(BpSymmetry {
            project_state: Box::new(move |z: &mut [f64]| {
                let u = z[..n].to_vec();
                for i in 0..n {
                    z[i] = 0.5 * (u[i] - u[mirror[i]]);
                }
                z[n] = 0.0; // lambda is gamma_3-odd
            }),
            project_kernel: Box::new(move |v: &mut [f64]| {
                let u = v[..n].to_vec();
                for i in 0..n {
                    v[i] = 0.5 * (u[i] + u[mirror2[i]]);
                }
            }),
        })
    }
}
