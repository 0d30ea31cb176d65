//! Compressed sparse row matrices with a fixed symmetric sparsity pattern.
//!
//! The FEM assembles several matrices (stiffness, mass, weighted mass) over
//! the same mesh connectivity, so the pattern is built once from the element
//! graph and matrices are filled by binary search into each row slice.

use super::banded::BandMatrix;
use std::sync::Arc;

/// Shared sparsity pattern (row pointers + sorted column indices).
#[derive(Debug)]
pub struct SparsityPattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern with an entry `(i, j)` for every pair of nodes sharing a
    /// triangle (including the diagonal).
    pub fn from_triangles(n_nodes: usize, triangles: &[[usize; 3]]) -> Arc<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for t in triangles {
            for &i in t {
                for &j in t {
                    adj[i].push(j);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
            col_idx.extend_from_slice(list);
            row_ptr.push(col_idx.len());
        }
        Arc::new(Self {
            n: n_nodes,
            row_ptr,
            col_idx,
        })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }
}

/// CSR matrix over a shared pattern.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub pattern: Arc<SparsityPattern>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            vals: vec![0.0; nnz],
        }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    #[inline]
    fn entry_index(&self, i: usize, j: usize) -> usize {
        let lo = self.pattern.row_ptr[i];
        let hi = self.pattern.row_ptr[i + 1];
        let row = &self.pattern.col_idx[lo..hi];
        lo + row.binary_search(&j).expect("entry outside sparsity pattern")
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.entry_index(i, j);
        self.vals[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.pattern.row_ptr[i];
        let hi = self.pattern.row_ptr[i + 1];
        match self.pattern.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn fill_zero(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(y.len(), n);
        for i in 0..n {
            let mut s = 0.0;
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                s += self.vals[k] * x[self.pattern.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.matvec(x, &mut y);
        y
    }

    /// y = alpha * A x (accumulating into y).
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n() {
            let mut s = 0.0;
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                s += self.vals[k] * x[self.pattern.col_idx[k]];
            }
            y[i] += alpha * s;
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.vals[self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1]]
                    .iter()
                    .sum()
            })
            .collect()
    }

    pub fn sum_all(&self) -> f64 {
        self.vals.iter().sum()
    }

    /// Linear combination over the shared pattern: `self = a*x + b*y`.
    pub fn set_linear_combination(&mut self, a: f64, x: &CsrMatrix, b: f64, y: &CsrMatrix) {
        debug_assert!(Arc::ptr_eq(&self.pattern, &x.pattern));
        debug_assert!(Arc::ptr_eq(&self.pattern, &y.pattern));
        for (v, (xv, yv)) in self.vals.iter_mut().zip(x.vals.iter().zip(y.vals.iter())) {
            *v = a * xv + b * yv;
        }
    }

    /// Maximum of |perm[i] - perm[j]| over structural entries.
    pub fn bandwidth_under(&self, perm: &[usize]) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                let j = self.pattern.col_idx[k];
                let (pi, pj) = (perm[i], perm[j]);
                bw = bw.max(pi.abs_diff(pj));
            }
        }
        bw
    }

    /// Banded copy under the node permutation `perm[old] = new`.
    pub fn to_band(&self, perm: &[usize], bandwidth: usize) -> BandMatrix {
        let mut band = BandMatrix::zeros(self.n(), bandwidth, bandwidth);
        for i in 0..self.n() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                let j = self.pattern.col_idx[k];
                band.add(perm[i], perm[j], self.vals[k]);
            }
        }
        band
    }
}
