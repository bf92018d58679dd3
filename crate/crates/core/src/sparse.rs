//! Compressed sparse row storage.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;

use crate::error::SolverError;
use crate::par;

/// CSR matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut data: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: d.to_vec(),
        }
    }

    /// Dense-to-sparse conversion keeping entries with |a| > drop_tol.
    pub fn from_dense(a: &DMatrix<f64>, drop_tol: f64) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)].abs() > drop_tol {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.data.len()
    }
    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn values(&self) -> &[f64] {
        &self.data
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.data[s..e])
    }

    /// Position of entry (i, j) in the value array, if structurally present.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e].binary_search(&j).ok().map(|k| s + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.data[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, SolverError> {
        if x.len() != self.ncols {
            return Err(SolverError::DimensionMismatch { expected: self.ncols, got: x.len() });
        }
        Ok(par::map_range(self.nrows, |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(|(&j, &a)| a * x[j]).sum()
        }))
    }

    /// y = Aᵀ x. Scatter is sequential so the summation order is fixed.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>, SolverError> {
        if x.len() != self.nrows {
            return Err(SolverError::DimensionMismatch { expected: self.nrows, got: x.len() });
        }
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                y[j] += a * xi;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                t.push((j, i, a));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                d[(i, j)] += a;
            }
        }
        d
    }

    /// Hash of the sparsity structure only (not the values).
    pub fn pattern_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.nrows.hash(&mut h);
        self.ncols.hash(&mut h);
        self.indptr.hash(&mut h);
        self.indices.hash(&mut h);
        h.finish()
    }

    /// max |A − Aᵀ| over structural entries, plus entries missing from the mirror.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                m = m.max((a - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Lower-triangular part (including diagonal) column pattern of row i.
    pub fn lower_row_pattern(&self, i: usize) -> Vec<usize> {
        self.row(i).0.iter().copied().filter(|&j| j <= i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_spmv_is_identity() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(CsrMatrix::identity(3).spmv(&x).unwrap(), x);
    }

    #[test]
    fn diag_two() {
        let a = CsrMatrix::from_diagonal(&[2.0, 2.0]);
        assert_eq!(a.spmv(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn random_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Vec::new();
        for _ in 0..12 {
            t.push((rng.gen_range(0..5), rng.gen_range(0..5), rng.gen_range(-1.0..1.0)));
        }
        let a = CsrMatrix::from_triplets(5, 5, &t);
        let d = a.to_dense();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = a.spmv(&x).unwrap();
        let yt = a.spmv_transpose(&x).unwrap();
        let xv = nalgebra::DVector::from_vec(x);
        let yd = &d * &xv;
        let ytd = d.transpose() * &xv;
        for i in 0..5 {
            assert!((y[i] - yd[i]).abs() < 1e-14);
            assert!((yt[i] - ytd[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 1.0), (0, 2, 2.0)]);
        assert_eq!(a.row(0).0, &[0, 2]);
        assert_eq!(a.get(0, 2), 3.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = CsrMatrix::identity(3);
        assert!(a.spmv(&[1.0]).is_err());
        assert!(a.spmv_transpose(&[1.0]).is_err());
    }
}
