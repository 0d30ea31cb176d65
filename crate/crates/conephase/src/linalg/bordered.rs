//! Block elimination for bordered linear systems
//!
//! ```text
//!   [ A   B ] [x]   [f]
//!   [ Cᵀ  D ] [y] = [g]
//! ```
//!
//! where `A` is solvable through any [`LinearSolve`] (banded LU for the FEM,
//! dense for scalar normal forms) and `B`, `C` are a handful of dense border
//! columns/rows (Lagrange multiplier, continuation parameter, arclength).
//! An optional full-system matvec enables one step of iterative refinement,
//! which keeps the solve accurate when `A` is nearly singular close to
//! bifurcation points while the bordered system itself is well conditioned.

use super::LinalgError;
use nalgebra::DMatrix;

pub trait LinearSolve {
    fn n(&self) -> usize;
    fn solve_in_place(&self, b: &mut [f64]);
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

impl LinearSolve for super::banded::BandLu {
    fn n(&self) -> usize {
        super::banded::BandLu::n(self)
    }
    fn solve_in_place(&self, b: &mut [f64]) {
        super::banded::BandLu::solve_in_place(self, b)
    }
}

/// Dense LU wrapper for small (normal-form) problems.
pub struct DenseSolve {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl DenseSolve {
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = m.nrows();
        let lu = m.lu();
        if lu.determinant() == 0.0 {
            return Err(LinalgError::Singular(0));
        }
        Ok(Self { lu, n })
    }
}

impl LinearSolve for DenseSolve {
    fn n(&self) -> usize {
        self.n
    }
    fn solve_in_place(&self, b: &mut [f64]) {
        let rhs = nalgebra::DVector::from_column_slice(b);
        let x = self.lu.solve(&rhs).expect("checked nonsingular at factor time");
        b.copy_from_slice(x.as_slice());
    }
}

type MatVec = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Factored bordered system over a core solver plus `k` borders.
pub struct Bordered {
    core: Box<dyn LinearSolve + Send + Sync>,
    cols: Vec<Vec<f64>>,
    rows: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    schur: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    corner: DMatrix<f64>,
    full_matvec: Option<MatVec>,
}

impl Bordered {
    /// `cols[j]`, `rows[j]` have core length; `corner` is `k x k`.
    pub fn new(
        core: Box<dyn LinearSolve + Send + Sync>,
        cols: Vec<Vec<f64>>,
        rows: Vec<Vec<f64>>,
        corner: DMatrix<f64>,
    ) -> Result<Self, LinalgError> {
        let k = cols.len();
        if rows.len() != k || corner.nrows() != k || corner.ncols() != k {
            return Err(LinalgError::Dimension(format!(
                "border mismatch: {} cols, {} rows, corner {}x{}",
                k,
                rows.len(),
                corner.nrows(),
                corner.ncols()
            )));
        }
        let w: Vec<Vec<f64>> = cols.iter().map(|c| core.solve(c)).collect();
        // Schur complement S = D - Cᵀ W
        let mut schur = corner.clone();
        for (jj, wj) in w.iter().enumerate() {
            for (ii, row) in rows.iter().enumerate() {
                let dot: f64 = row.iter().zip(wj.iter()).map(|(a, b)| a * b).sum();
                schur[(ii, jj)] -= dot;
            }
        }
        let lu = schur.lu();
        if lu.determinant() == 0.0 {
            return Err(LinalgError::Singular(core.n()));
        }
        Ok(Self {
            core,
            cols,
            rows,
            w,
            schur: lu,
            corner,
            full_matvec: None,
        })
    }

    /// Install a full-system matvec for one step of iterative refinement.
    pub fn with_refinement(mut self, matvec: MatVec) -> Self {
        self.full_matvec = Some(matvec);
        self
    }

    pub fn k(&self) -> usize {
        self.cols.len()
    }

    fn solve_once(&self, b: &mut [f64]) {
        let n = self.core.n();
        let k = self.k();
        let (bf, bg) = b.split_at_mut(n);
        self.core.solve_in_place(bf);
        let mut rhs = nalgebra::DVector::zeros(k);
        for i in 0..k {
            let dot: f64 = self.rows[i].iter().zip(bf.iter()).map(|(a, b)| a * b).sum();
            rhs[i] = bg[i] - dot;
        }
        let y = self.schur.solve(&rhs).expect("schur nonsingular");
        for j in 0..k {
            let yj = y[j];
            if yj != 0.0 {
                for (xi, wi) in bf.iter_mut().zip(self.w[j].iter()) {
                    *xi -= yj * wi;
                }
            }
            bg[j] = yj;
        }
    }

    /// Full bordered matvec (used in refinement and available to callers).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.core.n();
        let k = self.k();
        let mut y = match &self.full_matvec {
            Some(mv) => mv(&x[..n]),
            None => panic!("matvec requires with_refinement"),
        };
        debug_assert_eq!(y.len(), n);
        for j in 0..k {
            let xj = x[n + j];
            if xj != 0.0 {
                for (yi, cj) in y.iter_mut().zip(self.cols[j].iter()) {
                    *yi += xj * cj;
                }
            }
        }
        for i in 0..k {
            let mut s: f64 = self.rows[i].iter().zip(x[..n].iter()).map(|(a, b)| a * b).sum();
            for j in 0..k {
                s += self.corner[(i, j)] * x[n + j];
            }
            y.push(s);
        }
        y
    }
}

impl LinearSolve for Bordered {
    fn n(&self) -> usize {
        self.core.n() + self.k()
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        if self.full_matvec.is_none() {
            self.solve_once(b);
            return;
        }
        let rhs = b.to_vec();
        self.solve_once(b);
        // one step of iterative refinement on the full system
        let ax = self.matvec(b);
        let mut r: Vec<f64> = rhs.iter().zip(ax.iter()).map(|(a, b)| a - b).collect();
        self.solve_once(&mut r);
        for (xi, ri) in b.iter_mut().zip(r.iter()) {
            *xi += ri;
        }
    }
}
