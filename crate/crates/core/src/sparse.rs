//! Weighted compressed-sparse-row matrices, used for normalized adjacency
//! and bag-of-words feature matrices on the sparse forward path.

use crate::dense::DenseMat;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles a matrix from per-row `(column, value)` lists. Columns within
    /// a row must be strictly increasing.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for &(c, v) in row {
                debug_assert!(c < cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Keeps the nonzero entries of a dense matrix.
    pub fn from_dense(m: &DenseMat) -> Self {
        let rows = (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self::from_rows(m.cols(), rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut out = DenseMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    /// `self · b`.
    pub fn matmul(&self, b: &DenseMat) -> DenseMat {
        assert_eq!(self.cols, b.rows(), "spmm inner dimension mismatch");
        let mut out = DenseMat::zeros(self.rows, b.cols());
        for i in 0..self.rows {
            let out_row = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (o, &x) in out_row.iter_mut().zip(b.row(j)) {
                    *o += v * x;
                }
            }
        }
        out
    }

    /// `selfᵀ · b`.
    pub fn transpose_matmul(&self, b: &DenseMat) -> DenseMat {
        let mut out = DenseMat::zeros(self.cols, b.cols());
        self.transpose_matmul_acc(b, &mut out);
        out
    }

    /// `out += selfᵀ · b`.
    pub fn transpose_matmul_acc(&self, b: &DenseMat, out: &mut DenseMat) {
        assert_eq!(self.rows, b.rows(), "spmm inner dimension mismatch");
        assert_eq!(out.shape(), (self.cols, b.cols()), "spmm output shape mismatch");
        for i in 0..self.rows {
            let b_row = b.row(i);
            for (j, v) in self.row(i) {
                for (o, &x) in out.row_mut(j).iter_mut().zip(b_row) {
                    *o += v * x;
                }
            }
        }
    }
}
