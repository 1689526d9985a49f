//! Compressed sparse row matrices used as constant propagation operators.

use rayon::prelude::*;

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &Matrix) -> Self {
        let mut indptr = Vec::with_capacity(m.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            rows: m.rows(),
            cols: m.cols(),
            indptr,
            indices,
            values,
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<_> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Data(format!("triplet ({r},{c}) outside {rows}x{cols}")));
            }
        }
        sorted.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Rebuilds from raw CSR arrays, checking every structural invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::Data(format!("invalid CSR arrays: {m}")));
        if indptr.len() != rows + 1 || indptr[0] != 0 || indptr[rows] != indices.len() {
            return bad("row pointer does not span the entries");
        }
        if indices.len() != values.len() {
            return bad("index and value arrays differ in length");
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return bad("row pointer decreases");
            }
            let span = &indices[indptr[r]..indptr[r + 1]];
            if span.windows(2).any(|w| w[0] >= w[1]) || span.last().is_some_and(|&c| c >= cols) {
                return bad("column indices unsorted or out of range");
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CSR values".into()));
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// `(indptr, indices, values)`.
    pub fn csr_parts(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.indptr, &self.indices, &self.values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` pairs of row `r`, in column order.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                m.set(r, c, v);
            }
        }
        m
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                triplets.push((c, r, v));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, &triplets).expect("indices in range")
    }

    /// `self * dense`. Rows are independent, so the parallel split does not
    /// change any output bit.
    pub fn matmul_dense(&self, dense: &Matrix) -> Result<Matrix> {
        if self.cols != dense.rows() {
            return Err(Error::dim("spmm", self.shape(), dense.shape()));
        }
        let d = dense.cols();
        let mut out = vec![0.0; self.rows * d];
        if d == 0 {
            return Ok(Matrix::from_raw(self.rows, 0, out));
        }
        let kernel = |(r, out_row): (usize, &mut [f64])| {
            for (c, v) in self.row_entries(r) {
                for (o, &x) in out_row.iter_mut().zip(dense.row(c)) {
                    *o += v * x;
                }
            }
        };
        if self.nnz() * d >= 1 << 15 {
            out.par_chunks_mut(d).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(d).enumerate().for_each(kernel);
        }
        Ok(Matrix::from_raw(self.rows, d, out))
    }
}

/// A sparse operator together with its transpose, as needed for the
/// backward pass of `A * X`.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    pub forward: SparseMatrix,
    pub adjoint: SparseMatrix,
}

impl SparseOperator {
    pub fn new(forward: SparseMatrix) -> Self {
        let adjoint = forward.transpose();
        SparseOperator { forward, adjoint }
    }

    pub fn from_dense(m: &Matrix) -> Self {
        SparseOperator::new(SparseMatrix::from_dense(m))
    }

    pub fn size(&self) -> usize {
        self.forward.rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_and_product() {
        let m = Matrix::from_rows(&[vec![0.0, 2.0, 0.0], vec![1.0, 0.0, -1.0]]).unwrap();
        let s = SparseMatrix::from_dense(&m);
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.to_dense(), m);
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(s.matmul_dense(&x).unwrap(), m.matmul(&x).unwrap());
        assert_eq!(s.transpose().to_dense(), m.transpose());
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let s = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(s.to_dense().get(0, 1), 3.0);
        assert_eq!(s.nnz(), 2);
    }
}
