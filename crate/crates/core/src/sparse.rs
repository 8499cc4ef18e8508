//! Compressed sparse row matrices, used for the normalized graph adjacency.

use crate::error::{Error, Result};
use crate::tensor::{axpy, Matrix, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T = f32> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::Input(format!(
                "sparse entry ({r}, {c}) outside {rows}x{cols}"
            )));
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("nonempty") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map_or(T::zero(), |(_, v)| v)
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.rows() != self.cols {
            return Err(Error::shape("sparse product", (self.cols, x.cols()), x.shape()));
        }
        let mut out = Matrix::zeros(self.rows, x.cols());
        for i in 0..self.rows {
            let orow = out.row_mut(i);
            for (j, a) in self.row(i) {
                axpy(a, x.row(j), orow);
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`.
    pub fn spmm_transpose(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.rows() != self.rows {
            return Err(Error::shape("sparse transpose product", (self.rows, x.cols()), x.shape()));
        }
        let mut out = Matrix::zeros(self.cols, x.cols());
        for i in 0..self.rows {
            for (j, a) in self.row(i) {
                axpy(a, x.row(i), out.row_mut(j));
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_summed_and_products_match_dense() {
        let a = CsrMatrix::from_triplets(
            2,
            3,
            vec![(0, 2, 1.0f64), (1, 0, 2.0), (0, 2, 0.5), (1, 1, -1.0)],
        )
        .unwrap();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 2), 1.5);
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let dense = a.to_dense();
        assert_eq!(a.spmm(&x).unwrap(), crate::tensor::matmul_nn(&dense, &x).unwrap());
        let y = Matrix::from_rows(&[vec![1.0], vec![-2.0]]).unwrap();
        assert_eq!(
            a.spmm_transpose(&y).unwrap(),
            crate::tensor::matmul_tn(&dense, &y).unwrap()
        );
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, vec![(2, 0, 1.0f32)]).is_err());
    }
}
