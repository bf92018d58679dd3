//! Krylov solvers, preconditioners and the semi-implicit baseline.

mod cg;
mod coupling;
mod gmres;
mod precond;
mod semi_implicit;
mod woodbury;

pub use cg::cg;
pub use coupling::{matfree_contact_apply, CouplingBlock, CouplingSet};
pub use gmres::gmres;
pub use precond::{
    CgInverse, DenseInverse, IdentityPrecond, JacobiPrecond, SparseInversePrecond,
};
pub use semi_implicit::semi_implicit;
pub use woodbury::{InnerSolve, WoodburyConfig, WoodburyPrecond};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::sparse::CsrMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 2000;
pub const DEFAULT_RESTART: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cg,
    Gmres,
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondKind {
    None,
    Jacobi,
    SparseInverse,
    Woodbury,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub precond: PrecondKind,
    pub tol: f64,
    pub max_iter: usize,
    pub gmres_restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Cg,
            precond: PrecondKind::Jacobi,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            gmres_restart: DEFAULT_RESTART,
        }
    }
}

impl SolverConfig {
    pub fn new(method: Method, precond: PrecondKind) -> Self {
        Self { method, precond, ..Self::default() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// Outcome of one linear solve. The last history entry is the true relative
/// residual `‖b − A x‖/‖b‖` of the returned iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub wall_time: f64,
    /// Elapsed seconds at each history entry.
    #[serde(default)]
    pub time_history: Vec<f64>,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.residual_history.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }
}

/// A square linear operator.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, x: &[f64]) -> Vec<f64>;
    fn diagonal(&self) -> Vec<f64>;
}

/// An (approximate) inverse application `r ↦ P r`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.spmv(x).expect("operator dimension")
    }
    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.spmv_transpose(x).expect("operator dimension")
    }
    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self * DVector::from_column_slice(x)).as_slice().to_vec()
    }
    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        (self.tr_mul(&DVector::from_column_slice(x))).as_slice().to_vec()
    }
    fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows()).map(|i| self[(i, i)]).collect()
    }
}

/// View of an operator's transpose.
pub struct Transposed<'a, T: ?Sized>(pub &'a T);

impl<T: LinearOperator + ?Sized> LinearOperator for Transposed<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply_transpose(x)
    }
    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply(x)
    }
    fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal()
    }
}

/// Materialise an operator column by column.
pub fn to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let cols = crate::par::map_range(n, |j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        op.apply(&e)
    });
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Dense LU solve; `None` if the matrix is singular.
pub fn dense_solve(a: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    a.clone().lu().solve(&DVector::from_column_slice(rhs)).map(|x| x.as_slice().to_vec())
}

/// Solve with CG or GMRES according to `cfg.method`.
pub fn krylov(
    op: &dyn LinearOperator,
    rhs: &[f64],
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    match cfg.method {
        Method::Cg => cg(op, rhs, precond, cfg),
        Method::Gmres => gmres(op, rhs, precond, cfg),
        Method::SemiImplicit => Err(SolverError::NonFinite("semi-implicit requires an explicit split; use semi_implicit()")),
    }
}

pub(crate) fn relres(op: &dyn LinearOperator, x: &[f64], rhs: &[f64], bnorm: f64) -> (Vec<f64>, f64) {
    let ax = op.apply(x);
    let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let n = crate::vecops::norm2(&r) / bnorm;
    (r, n)
}
