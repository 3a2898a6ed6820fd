//! Minimal CSR sparse matrix with the two products the GCN needs:
//! `A · X` and `Aᵀ · X` against dense right-hand sides.

use ndarray::Array2;

/// Square sparse matrix in compressed sparse row form.
///
/// Rows are stored in index order and column indices within a row are
/// strictly increasing, so iteration order (and therefore floating-point
/// summation order) is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Triplets are sorted and must
    /// not contain duplicate coordinates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        debug_assert!(
            triplets
                .windows(2)
                .all(|w| (w[0].0, w[0].1) != (w[1].0, w[1].1)),
            "duplicate coordinate in CSR triplets"
        );
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            debug_assert!(r < n && c < n);
            indptr[r + 1] += 1;
            indices.push(c);
            data.push(v);
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Entries of one row as (column, value) pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.data[lo..hi].iter().copied())
    }

    /// Dense materialization, for tests and tiny graphs.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// `self · rhs` with a dense `n×k` right-hand side.
    pub fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n, rhs.nrows(), "csr matmul dimension mismatch");
        let k = rhs.ncols();
        let mut out = Array2::zeros((self.n, k));
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                let src = rhs.row(c);
                let mut dst = out.row_mut(r);
                for j in 0..k {
                    dst[j] += v * src[j];
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose. Scatter order is
    /// fixed by the CSR layout, so results are reproducible.
    pub fn matmul_transposed(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n, rhs.nrows(), "csr matmul_t dimension mismatch");
        let k = rhs.ncols();
        let mut out = Array2::zeros((self.n, k));
        for r in 0..self.n {
            let src = rhs.row(r);
            for (c, v) in self.row(r) {
                let mut dst = out.row_mut(c);
                for j in 0..k {
                    dst[j] += v * src[j];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_matches_dense() {
        let m = CsrMatrix::from_triplets(3, vec![(0, 1, 2.0), (1, 0, -1.0), (2, 2, 3.0)]);
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let got = m.matmul(&x);
        let want = m.to_dense().dot(&x);
        assert_eq!(got, want);
    }

    #[test]
    fn transposed_matmul_matches_dense_transpose() {
        let m = CsrMatrix::from_triplets(3, vec![(0, 1, 2.0), (0, 2, 0.5), (2, 0, -1.0)]);
        let x = array![[1.0], [2.0], [3.0]];
        let got = m.matmul_transposed(&x);
        let want = m.to_dense().t().dot(&x);
        assert_eq!(got, want);
    }

    #[test]
    fn row_iteration_is_sorted() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (0, 0, 2.0)]);
        let cols: Vec<usize> = m.row(0).map(|(c, _)| c).collect();
        assert_eq!(cols, vec![0, 1]);
    }
}
