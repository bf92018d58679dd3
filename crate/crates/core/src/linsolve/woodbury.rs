//! `(A + h²JᵀKJ)⁻¹ = A⁻¹ − h²A⁻¹Jᵀ(K⁻¹ + h²JA⁻¹Jᵀ)⁻¹JA⁻¹`.
//!
//! The Delassus operator `JA⁻¹Jᵀ` is assembled densely once (one `A⁻¹`
//! application per coupling row); each application then costs two `A⁻¹`
//! applications plus a small dense solve in coupling space.

use nalgebra::{DMatrix, DVector};

use super::{cg, gmres, CouplingSet, IdentityPrecond, Preconditioner, SolverConfig, DEFAULT_TOL};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolve {
    /// CG when the coupling-space matrix is symmetric, GMRES otherwise.
    Krylov,
    /// Dense LU.
    Lu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WoodburyConfig {
    pub inner: InnerSolve,
    pub inner_tol: f64,
    /// Build the preconditioner of `(A + h²JᵀKJ)ᵀ` (for adjoint solves).
    pub transpose: bool,
}

impl Default for WoodburyConfig {
    fn default() -> Self {
        Self { inner: InnerSolve::Krylov, inner_tol: 0.1 * DEFAULT_TOL, transpose: false }
    }
}

impl WoodburyConfig {
    pub fn for_outer_tol(tol: f64) -> Self {
        Self { inner_tol: 0.1 * tol, ..Self::default() }
    }
}

pub struct WoodburyPrecond<'a> {
    base: &'a dyn Preconditioner,
    j: DMatrix<f64>,
    y: DMatrix<f64>,
    schur: DMatrix<f64>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    symmetric: bool,
    h2: f64,
    cfg: WoodburyConfig,
    /// Set when a singular `K` block had to be regularised.
    pub regularized: bool,
}

impl<'a> WoodburyPrecond<'a> {
    pub fn new(base: &'a dyn Preconditioner, coupling: &CouplingSet, cfg: WoodburyConfig) -> Self {
        let m = coupling.total_rows();
        let h2 = coupling.h * coupling.h;
        let j = coupling.j_dense();
        let mut schur = DMatrix::zeros(m, m);
        let mut regularized = false;
        let mut row = 0;
        for b in &coupling.blocks {
            let r = b.rows();
            let k = if cfg.transpose { b.k.transpose() } else { b.k.clone() };
            let kinv = k.clone().try_inverse().filter(|i| i.iter().all(|v| v.is_finite())).unwrap_or_else(|| {
                regularized = true;
                (k + DMatrix::identity(r, r) * 1e-12).try_inverse().unwrap_or_else(|| DMatrix::identity(r, r) * 1e12)
            });
            schur.view_mut((row, row), (r, r)).copy_from(&kinv);
            row += r;
        }
        let cols: Vec<Vec<f64>> = par::map_range(m, |c| {
            let jt: Vec<f64> = j.row(c).iter().copied().collect();
            base.apply(&jt)
        });
        let n = coupling.n;
        let y = DMatrix::from_fn(n, m, |i, c| cols[c][i]);
        schur += &j * &y * h2;
        let symmetric = m == 0 || (&schur - schur.transpose()).amax() <= 1e-12 * schur.amax();
        let lu = (cfg.inner == InnerSolve::Lu).then(|| schur.clone().lu());
        Self { base, j, y, schur, lu, symmetric, h2, cfg, regularized }
    }

    /// Dense `JA⁻¹Jᵀ`.
    pub fn delassus(&self) -> DMatrix<f64> {
        &self.j * &self.y
    }

    fn inner_solve(&self, t: &DVector<f64>) -> DVector<f64> {
        if let Some(lu) = &self.lu {
            return lu.solve(t).unwrap_or_else(|| DVector::from_element(t.len(), f64::NAN));
        }
        let cfg = SolverConfig { tol: self.cfg.inner_tol, ..SolverConfig::default() };
        let res = if self.symmetric {
            cg(&self.schur, t.as_slice(), &IdentityPrecond, &cfg)
        } else {
            gmres(&self.schur, t.as_slice(), &IdentityPrecond, &cfg)
        };
        match res {
            Ok((x, rep)) if rep.converged => DVector::from_vec(x),
            _ => self.schur.clone().lu().solve(t).unwrap_or_else(|| DVector::from_element(t.len(), f64::NAN)),
        }
    }
}

impl Preconditioner for WoodburyPrecond<'_> {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let u = self.base.apply(r);
        if self.j.nrows() == 0 {
            return u;
        }
        let uv = DVector::from_vec(u);
        let t = &self.j * &uv;
        let z = self.inner_solve(&t);
        let out = uv - &self.y * z * self.h2;
        out.as_slice().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CouplingBlock, DenseInverse};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        b.transpose() * &b + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn no_coupling_is_base_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = spd(9, &mut rng);
        let base = DenseInverse::new(&a);
        let w = WoodburyPrecond::new(&base, &CouplingSet::new(0.1, 9), WoodburyConfig::default());
        let r: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(w.apply(&r), base.apply(&r));
    }

    #[test]
    fn matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let a = spd(n, &mut rng);
        let base = DenseInverse::new(&a);
        let mut set = CouplingSet::new(0.05, n);
        for v in 0..10 {
            let rows = if v % 2 == 0 { 1 } else { 3 };
            let j = DMatrix::from_fn(rows, 3, |_, _| rng.gen_range(-1.0..1.0));
            let k = DMatrix::from_fn(rows, rows, |r, c| if r == c { rng.gen_range(1.0..1e4) } else { rng.gen_range(-10.0..10.0) });
            set.blocks.push(CouplingBlock { vertex: v, j, k });
        }
        let full = &a + set.to_dense();
        let inv = full.clone().try_inverse().unwrap();
        for &transpose in &[false, true] {
            let cfg = WoodburyConfig { inner: InnerSolve::Lu, transpose, ..WoodburyConfig::default() };
            let w = WoodburyPrecond::new(&base, &set, cfg);
            let target = if transpose { inv.transpose() } else { inv.clone() };
            let r = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let got = DVector::from_vec(w.apply(r.as_slice()));
            let want = &target * &r;
            assert!((got - &want).norm() <= 1e-8 * want.norm());
        }
    }

    #[test]
    fn singular_block_is_regularized() {
        let a = DMatrix::<f64>::identity(3, 3);
        let base = DenseInverse::new(&a);
        let mut set = CouplingSet::new(1.0, 3);
        set.blocks.push(CouplingBlock { vertex: 0, j: DMatrix::identity(3, 3), k: DMatrix::zeros(3, 3) });
        let w = WoodburyPrecond::new(&base, &set, WoodburyConfig::default());
        assert!(w.regularized);
        let out = w.apply(&[1.0, 2.0, 3.0]);
        assert!(out.iter().zip([1.0, 2.0, 3.0]).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
