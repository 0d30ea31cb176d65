//! Small self-contained linear algebra kernels used by the FEM and the
//! continuation engine: CSR matrices for products, banded LU (partial
//! pivoting) for factorizations after reverse Cuthill-McKee ordering,
//! bordered block elimination for constraint/arclength borders, and a
//! shift-invert block subspace iteration for the constrained Hessian pencil.

pub mod banded;
pub mod bordered;
pub mod eigen;
pub mod rcm;
pub mod sparse;

pub use banded::{BandLu, BandMatrix};
pub use bordered::{Bordered, LinearSolve};
pub use eigen::{shift_invert_smallest, EigenPairs};
pub use rcm::reverse_cuthill_mckee;
pub use sparse::CsrMatrix;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular matrix encountered at pivot {0}")]
    Singular(usize),
    #[error("eigensolver failed to converge after {0} iterations")]
    NoEigConvergence(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
