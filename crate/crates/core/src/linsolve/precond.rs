use nalgebra::{DMatrix, DVector};

use super::{cg, LinearOperator, Preconditioner, SolverConfig};
use crate::error::SolverError;
use crate::par;
use crate::sparse::CsrMatrix;

/// `P = I`.
pub struct IdentityPrecond;

impl Preconditioner for IdentityPrecond {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

/// Inverse-diagonal scaling.
#[derive(Debug, Clone)]
pub struct JacobiPrecond {
    inv_diag: Vec<f64>,
}

impl JacobiPrecond {
    pub fn new(diag: &[f64]) -> Result<Self, SolverError> {
        if let Some((i, &d)) = diag.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(SolverError::NonPositiveDiagonal { index: i, value: d });
        }
        Ok(Self { inv_diag: diag.iter().map(|d| 1.0 / d).collect() })
    }
}

impl Preconditioner for JacobiPrecond {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(&self.inv_diag).map(|(a, b)| a * b).collect()
    }
}

/// Factored sparse approximate inverse `A⁻¹ ≈ SᵀS`, with `S` lower
/// triangular on the pattern of `A`.
///
/// Row i of S solves the local system `A[J,J] g = e_i` on its lower pattern
/// `J` and is scaled by `1/√gᵢ`. If a local system breaks down the
/// preconditioner falls back to Jacobi and sets `fell_back`.
#[derive(Debug, Clone)]
pub struct SparseInversePrecond {
    s: CsrMatrix,
    st: CsrMatrix,
    fallback: Option<JacobiPrecond>,
    pub fell_back: bool,
}

impl SparseInversePrecond {
    pub fn new(a: &CsrMatrix) -> Result<Self, SolverError> {
        let n = a.nrows();
        let rows: Vec<Option<Vec<(usize, f64)>>> = par::map_range(n, |i| {
            let pat = a.lower_row_pattern(i);
            let k = pat.len();
            if pat.last() != Some(&i) {
                return None;
            }
            let local = DMatrix::from_fn(k, k, |r, c| a.get(pat[r], pat[c]));
            let mut e = DVector::zeros(k);
            e[k - 1] = 1.0;
            let g = local.cholesky()?.solve(&e);
            let gi = g[k - 1];
            if !(gi > 0.0) || !g.iter().all(|v| v.is_finite()) {
                return None;
            }
            let s = 1.0 / gi.sqrt();
            Some(pat.iter().zip(g.iter()).map(|(&j, &v)| (j, v * s)).collect())
        });
        if rows.iter().any(Option::is_none) {
            log::warn!("sparse inverse construction broke down; falling back to Jacobi");
            let jac = JacobiPrecond::new(&a.diagonal())?;
            let empty = CsrMatrix::from_triplets(n, n, &[]);
            return Ok(Self { s: empty.clone(), st: empty, fallback: Some(jac), fell_back: true });
        }
        let triplets: Vec<(usize, usize, f64)> = rows
            .into_iter()
            .enumerate()
            .flat_map(|(i, r)| r.unwrap().into_iter().map(move |(j, v)| (i, j, v)))
            .collect();
        let s = CsrMatrix::from_triplets(n, n, &triplets);
        let st = s.transpose();
        Ok(Self { s, st, fallback: None, fell_back: false })
    }

    pub fn factor(&self) -> &CsrMatrix {
        &self.s
    }
}

impl Preconditioner for SparseInversePrecond {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        if let Some(j) = &self.fallback {
            return j.apply(r);
        }
        let y = self.s.spmv(r).expect("dimension");
        self.st.spmv(&y).expect("dimension")
    }
}

/// Exact inverse through a dense factorisation (desk-scale oracle).
pub enum DenseInverse {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl DenseInverse {
    /// Cholesky when SPD, LU otherwise.
    pub fn new(a: &DMatrix<f64>) -> Self {
        match a.clone().cholesky() {
            Some(c) if (a - a.transpose()).amax() <= 1e-12 * a.amax() => DenseInverse::Cholesky(c),
            _ => DenseInverse::Lu(a.clone().lu()),
        }
    }

    pub fn from_operator(op: &dyn LinearOperator) -> Self {
        Self::new(&super::to_dense(op))
    }
}

impl Preconditioner for DenseInverse {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(r);
        let x = match self {
            DenseInverse::Cholesky(c) => c.solve(&b),
            DenseInverse::Lu(l) => l.solve(&b).unwrap_or_else(|| DVector::from_element(r.len(), f64::NAN)),
        };
        x.as_slice().to_vec()
    }
}

/// `A⁻¹` applied by an inner Jacobi-preconditioned CG solve.
pub struct CgInverse<'a> {
    pub op: &'a CsrMatrix,
    jacobi: JacobiPrecond,
    cfg: SolverConfig,
}

impl<'a> CgInverse<'a> {
    pub fn new(op: &'a CsrMatrix, tol: f64) -> Result<Self, SolverError> {
        Ok(Self { op, jacobi: JacobiPrecond::new(&op.diagonal())?, cfg: SolverConfig::default().with_tol(tol) })
    }
}

impl Preconditioner for CgInverse<'_> {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        match cg(self.op, r, &self.jacobi, &self.cfg) {
            Ok((x, _)) => x,
            Err(_) => cg(self.op, r, &IdentityPrecond, &self.cfg).map(|(x, _)| x).unwrap_or_else(|_| vec![f64::NAN; r.len()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::cg;

    #[test]
    fn jacobi_scales_and_rejects() {
        let j = JacobiPrecond::new(&[4.0, 4.0]).unwrap();
        assert_eq!(j.apply(&[1.0, 2.0]), vec![0.25, 0.5]);
        assert!(JacobiPrecond::new(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn sparse_inverse_of_diagonal_is_exact() {
        let a = CsrMatrix::from_diagonal(&[4.0, 9.0, 0.25]);
        let p = SparseInversePrecond::new(&a).unwrap();
        assert!(!p.fell_back);
        let s = p.factor();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15 && (s.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.apply(&[4.0, 9.0, 0.25]), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn sparse_inverse_helps_tridiagonal() {
        let n = 10;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + i as f64));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let cfg = SolverConfig::default();
        let (_, plain) = cg(&a, &rhs, &IdentityPrecond, &cfg).unwrap();
        let p = SparseInversePrecond::new(&a).unwrap();
        let (_, pre) = cg(&a, &rhs, &p, &cfg).unwrap();
        assert!(pre.converged);
        assert!(pre.iterations() < plain.iterations(), "{} vs {}", pre.iterations(), plain.iterations());
        for k in 0..5 {
            let x: Vec<f64> = (0..n).map(|i| ((i * 3 + k) as f64).sin()).collect();
            assert!(crate::vecops::dot(&x, &p.apply(&x)) > 0.0);
        }
    }

    #[test]
    fn falls_back_on_indefinite_pattern() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        let p = SparseInversePrecond::new(&a).unwrap();
        assert!(p.fell_back);
    }
}
