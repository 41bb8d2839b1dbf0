//! Compressed-sparse-column matrix, sized for embedded QP use.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Sparse matrix in compressed-column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    /// Column start offsets, length `ncols + 1`.
    pub indptr: Vec<usize>,
    /// Row index of each stored entry.
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; ncols + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates and
    /// dropping exact zeros. Entries end up sorted by row within columns.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            by_col[c].push((r, v));
        }
        let mut indptr = Vec::with_capacity(ncols + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for col in &mut by_col {
            col.sort_unstable_by_key(|&(r, _)| r);
            let mut iter = col.iter().peekable();
            while let Some(&(r, mut v)) = iter.next() {
                while let Some(&&(r2, v2)) = iter.peek() {
                    if r2 == r {
                        v += v2;
                        iter.next();
                    } else {
                        break;
                    }
                }
                if v != 0.0 {
                    indices.push(r);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let triplets = (0..m.ncols()).flat_map(|c| {
            (0..m.nrows()).filter_map(move |r| {
                let v = m[(r, c)];
                (v != 0.0).then_some((r, c, v))
            })
        });
        Self::from_triplets(m.nrows(), m.ncols(), triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            for k in self.indptr[c]..self.indptr[c + 1] {
                m[(self.indices[k], c)] += self.data[k];
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        y.fill(0.0);
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.indptr[c]..self.indptr[c + 1] {
                y[self.indices[k]] += self.data[k] * xc;
            }
        }
    }

    /// `y = A' x`.
    pub fn mul_vec_transpose(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for c in 0..self.ncols {
            let mut acc = 0.0;
            for k in self.indptr[c]..self.indptr[c + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[c] = acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.indices {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let indptr = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        let mut cursor = indptr.clone();
        for c in 0..self.ncols {
            for k in self.indptr[c]..self.indptr[c + 1] {
                let r = self.indices[k];
                let dst = cursor[r];
                indices[dst] = c;
                data[dst] = self.data[k];
                cursor[r] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            data,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let t = self.transpose();
        if t.indptr != self.indptr || t.indices != self.indices {
            // Patterns may differ only through explicit zeros; fall back to
            // a dense comparison for small matrices, otherwise reject.
            if self.nrows <= 512 {
                let d = self.to_dense();
                return (&d - d.transpose()).amax() <= tol;
            }
            return false;
        }
        self.data
            .iter()
            .zip(&t.data)
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Per-column infinity norms.
    pub fn col_inf_norms(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.ncols);
        for c in 0..self.ncols {
            let mut m = 0.0f64;
            for k in self.indptr[c]..self.indptr[c + 1] {
                m = m.max(self.data[k].abs());
            }
            out[c] = m;
        }
    }

    /// Per-row infinity norms.
    pub fn row_inf_norms(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.nrows);
        out.fill(0.0);
        for k in 0..self.nnz() {
            let r = self.indices[k];
            out[r] = out[r].max(self.data[k].abs());
        }
    }

    /// In-place `A <- diag(left) A diag(right)`.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        debug_assert_eq!(left.len(), self.nrows);
        debug_assert_eq!(right.len(), self.ncols);
        for c in 0..self.ncols {
            for k in self.indptr[c]..self.indptr[c + 1] {
                self.data[k] *= left[self.indices[k]] * right[c];
            }
        }
    }

    pub fn scale_values(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_round_trip_and_duplicates_sum() {
        let m = CscMatrix::from_triplets(3, 2, vec![(0, 0, 1.0), (2, 1, 4.0), (0, 0, 2.0)]);
        assert_eq!(m.nnz(), 2);
        let d = m.to_dense();
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(2, 1)], 4.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let dense = DMatrix::from_row_slice(3, 4, &[
            1.0, 0.0, -2.0, 0.0, //
            0.0, 3.0, 0.0, 1.0, //
            5.0, 0.0, 0.0, -1.0,
        ]);
        let sparse = CscMatrix::from_dense(&dense);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let mut y = DVector::zeros(3);
        sparse.mul_vec(&x, &mut y);
        assert_eq!(y, &dense * &x);

        let z = DVector::from_vec(vec![2.0, -1.0, 0.25]);
        let mut w = DVector::zeros(4);
        sparse.mul_vec_transpose(&z, &mut w);
        assert_eq!(w, dense.transpose() * z);
    }

    #[test]
    fn transpose_is_involutive() {
        let dense = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, -1.0, 4.0]);
        let m = CscMatrix::from_dense(&dense);
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().to_dense(), dense.transpose());
    }
}
