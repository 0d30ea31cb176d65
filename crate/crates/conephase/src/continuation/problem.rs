//! The residual/Jacobian provider abstraction shared by the scalar normal
//! forms and the FEM system.

use super::ContinuationError;
use crate::linalg::LinearSolve;
use nalgebra::DMatrix;

/// Stability data at a converged point: the smallest eigenvalues of the
/// constrained Hessian and their eigenvectors (z-space, lambda padded).
#[derive(Debug, Clone, Default)]
pub struct Stability {
    pub eigs: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Symmetry projectors used by branch-point curve continuation: project the
/// state onto the symmetry-fixed subspace and the kernel onto its
/// complement, which removes the null directions of the extended system at
/// a pitchfork.
pub struct BpSymmetry {
    pub project_state: Box<dyn Fn(&mut [f64]) + Send + Sync>,
    pub project_kernel: Box<dyn Fn(&mut [f64]) + Send + Sync>,
}

/// A continuation problem: residual, Jacobian solves with borders, and
/// parameter bookkeeping. `z` is the full unknown vector (for the FEM
/// system the Lagrange multiplier is its last entry).
pub trait Problem {
    fn dim(&self) -> usize;

    fn param_names(&self) -> &[&'static str];
    fn get_param(&self, idx: usize) -> f64;
    fn set_param(&mut self, idx: usize, value: f64);

    fn residual(&mut self, z: &[f64]) -> Result<Vec<f64>, ContinuationError>;

    /// Exact Jacobian-vector product at `z`.
    fn jac_vec(&mut self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, ContinuationError>;

    /// Factor the Jacobian `dR/dz` at `z` with `k` extra border
    /// columns/rows (each of length `dim`) and the `k x k` corner. The
    /// returned solver has dimension `dim + k`.
    fn factor(
        &mut self,
        z: &[f64],
        cols: &[Vec<f64>],
        rows: &[Vec<f64>],
        corner: &DMatrix<f64>,
    ) -> Result<Box<dyn LinearSolve + Send + Sync>, ContinuationError>;

    /// `d residual / d param` (central differences by default).
    fn param_derivative(
        &mut self,
        z: &[f64],
        param: usize,
    ) -> Result<Vec<f64>, ContinuationError> {
        let p0 = self.get_param(param);
        let dp = 1e-6 * (1.0 + p0.abs());
        self.set_param(param, p0 + dp);
        let rp = self.residual(z)?;
        self.set_param(param, p0 - dp);
        let rm = self.residual(z)?;
        self.set_param(param, p0);
        Ok(rp
            .iter()
            .zip(rm.iter())
            .map(|(a, b)| (a - b) / (2.0 * dp))
            .collect())
    }

    /// Linear operator `x -> (d/dz J(z) x) v` (the second derivative of the
    /// residual contracted with the kernel `v`), used by the extended
    /// fold/branch-point systems.
    fn jac_derivative_operator(
        &mut self,
        z: &[f64],
        v: &[f64],
    ) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>, ContinuationError>;

    /// `d (J(z) v) / d param` (central differences by default).
    fn jac_vec_param_derivative(
        &mut self,
        z: &[f64],
        v: &[f64],
        param: usize,
    ) -> Result<Vec<f64>, ContinuationError> {
        let p0 = self.get_param(param);
        let dp = 1e-6 * (1.0 + p0.abs());
        self.set_param(param, p0 + dp);
        let jp = self.jac_vec(z, v)?;
        self.set_param(param, p0 - dp);
        let jm = self.jac_vec(z, v)?;
        self.set_param(param, p0);
        Ok(jp
            .iter()
            .zip(jm.iter())
            .map(|(a, b)| (a - b) / (2.0 * dp))
            .collect())
    }

    /// Smallest constrained-Hessian eigenvalues at a converged point.
    fn stability(
        &mut self,
        z: &[f64],
        k: usize,
        warm: Option<&[Vec<f64>]>,
    ) -> Result<Stability, ContinuationError>;

    /// Absolute Morse index (count of negative constrained-Hessian
    /// eigenvalues), when the problem can determine it.
    fn absolute_index(&mut self, z: &[f64], tol_eig: f64)
        -> Result<Option<usize>, ContinuationError>;

    /// Weight of the z-part in the arclength norm
    /// `|dZ|^2 = w |dz|^2 + dp^2` (mesh-size independent for FEM).
    fn norm_weight(&self) -> f64 {
        1.0 / self.dim() as f64
    }

    /// Problem-scaled residual norm driving Newton convergence.
    fn residual_norm(&self, r: &[f64]) -> f64;

    /// Reject configurations the engine cannot handle (e.g. the circular
    /// cone, whose O(2) symmetry makes angular branch points double).
    fn validate_for_continuation(&self) -> Result<(), ContinuationError> {
        Ok(())
    }

    /// `(lambda, energy)`-style observables for branch records.
    fn observables(&mut self, z: &[f64]) -> (f64, f64);

    /// Optionally adapt the discretization after an accepted step (mesh
    /// refinement during eps-continuation). Returns true when `z` was
    /// rebuilt on a new discretization; the engine then re-converges.
    fn maybe_adapt(&mut self, _z: &mut Vec<f64>) -> Result<bool, ContinuationError> {
        Ok(false)
    }

    /// Symmetry projectors for branch-point curve continuation.
    fn bp_symmetry(&self) -> Option<BpSymmetry> {
        None
    }

    /// Left near-null vector of the Jacobian from the right one. For the
    /// FEM system the bordered Jacobian is symmetric up to the border
    /// scaling, so this is a cheap algebraic map; scalar problems are
    /// self-adjoint outright.
    fn left_kernel_from_right(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    /// Gradient in `z` of the scalar `psi' J(z) v` with `psi`, `v` frozen
    /// (the second derivative of the residual contracted with both kernel
    /// vectors). Exact in both the FEM system and the normal forms.
    fn second_derivative_contraction(
        &mut self,
        z: &[f64],
        psi: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>, ContinuationError>;
}
