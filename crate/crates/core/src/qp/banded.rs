//! Symmetric banded matrix with in-place Cholesky factorization.
//!
//! Stage-ordered receding-horizon KKT matrices are block banded; storing the
//! lower band directly gives an `O(n b^2)` factorization that degrades
//! gracefully to dense Cholesky when the band is full.

use crate::error::{CoreError, Result};

/// Lower band of a symmetric matrix, column-major within the band:
/// entry `(j + r, j)` for `r in 0..=half_bandwidth` lives at `j * (hbw+1) + r`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    hbw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let hbw = half_bandwidth.min(n.saturating_sub(1));
        Self {
            n,
            hbw,
            data: vec![0.0; n * (hbw + 1)],
        }
    }

    pub fn reset(&mut self, n: usize, half_bandwidth: usize) {
        let hbw = half_bandwidth.min(n.saturating_sub(1));
        self.n = n;
        self.hbw = hbw;
        self.data.clear();
        self.data.resize(n * (hbw + 1), 0.0);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hbw
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row >= col && row - col <= self.hbw);
        col * (self.hbw + 1) + (row - col)
    }

    /// Accumulates `v` at `(i, j)`; coordinates may be given in either order.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (row, col) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(row, col);
        self.data[k] += v;
    }

    /// In-place lower Cholesky `M = L L'`. Fails if the matrix is not
    /// numerically positive definite.
    pub fn cholesky_in_place(&mut self) -> Result<()> {
        let w = self.hbw + 1;
        for j in 0..self.n {
            let start = j.saturating_sub(self.hbw);
            let mut diag = self.data[j * w];
            for k in start..j {
                // L[j, k]
                let l_jk = self.data[k * w + (j - k)];
                diag -= l_jk * l_jk;
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(CoreError::QpFailure(format!(
                    "KKT matrix not positive definite at pivot {j} ({diag:.3e})"
                )));
            }
            let l_jj = diag.sqrt();
            self.data[j * w] = l_jj;

            let row_end = (j + self.hbw).min(self.n - 1);
            for i in (j + 1)..=row_end {
                let mut s = self.data[j * w + (i - j)];
                let kstart = i.saturating_sub(self.hbw).max(start);
                for k in kstart..j {
                    s -= self.data[k * w + (i - k)] * self.data[k * w + (j - k)];
                }
                self.data[j * w + (i - j)] = s / l_jj;
            }
        }
        Ok(())
    }

    /// Solves `L L' x = b` in place using a previously computed factor.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let w = self.hbw + 1;
        // Forward: L y = b.
        for j in 0..self.n {
            let start = j.saturating_sub(self.hbw);
            let mut s = b[j];
            for k in start..j {
                s -= self.data[k * w + (j - k)] * b[k];
            }
            b[j] = s / self.data[j * w];
        }
        // Backward: L' x = y.
        for j in (0..self.n).rev() {
            let row_end = (j + self.hbw).min(self.n - 1);
            let mut s = b[j];
            for i in (j + 1)..=row_end {
                s -= self.data[j * w + (i - j)] * b[i];
            }
            b[j] = s / self.data[j * w];
        }
    }
}
