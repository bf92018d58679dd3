use std::time::Instant;

use super::{relres, LinearOperator, Preconditioner, SolveReport, SolverConfig};
use crate::error::SolverError;
use crate::vecops::{axpy, dot, norm2, xpby};

/// Preconditioned conjugate gradients from a zero initial guess.
///
/// On apparent convergence the true residual is recomputed; if it is still
/// above tolerance the iteration restarts from it.
pub fn cg(
    op: &dyn LinearOperator,
    rhs: &[f64],
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    let start = Instant::now();
    let n = op.dim();
    if rhs.len() != n {
        return Err(SolverError::DimensionMismatch { expected: n, got: rhs.len() });
    }
    let bnorm = norm2(rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        let report = SolveReport { residual_history: vec![0.0], converged: true, diverged: false, wall_time: 0.0, time_history: vec![0.0] };
        return Ok((x, report));
    }
    let mut r = rhs.to_vec();
    let mut z = precond.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut hist = vec![1.0];
    let mut times = vec![0.0];
    let mut converged = false;
    for it in 1..=cfg.max_iter {
        let ap = op.apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::Indefinite { iteration: it, curvature: pap });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            return Err(SolverError::NonFinite("cg residual"));
        }
        hist.push(rel);
        times.push(start.elapsed().as_secs_f64());
        if rel <= cfg.tol {
            let (rt, trel) = relres(op, &x, rhs, bnorm);
            *hist.last_mut().unwrap() = trel;
            if trel <= cfg.tol {
                converged = true;
                break;
            }
            r = rt;
            z = precond.apply(&r);
            p = z.clone();
            rz = dot(&r, &z);
            continue;
        }
        z = precond.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        xpby(&z, beta, &mut p);
    }
    if !converged {
        let (_, trel) = relres(op, &x, rhs, bnorm);
        *hist.last_mut().unwrap() = trel;
    }
    let report = SolveReport {
        residual_history: hist,
        time_history: times,
        converged,
        diverged: false,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::super::{IdentityPrecond, JacobiPrecond};
    use super::*;
    use crate::sparse::CsrMatrix;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let (x, rep) = cg(&a, &b, &IdentityPrecond, &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations(), 1);
        assert!(rep.converged);
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_vs_dense() {
        let d: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let a = CsrMatrix::from_diagonal(&d);
        let b: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let (x, rep) = cg(&a, &b, &IdentityPrecond, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        for i in 0..10 {
            assert!((x[i] - b[i] / d[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobi_exact_on_diagonal() {
        let a = CsrMatrix::from_diagonal(&[1.0, 1e6]);
        let j = JacobiPrecond::new(&a.diagonal()).unwrap();
        let (_, rep) = cg(&a, &[1.0, 1.0], &j, &SolverConfig::default()).unwrap();
        assert!(rep.iterations() <= 2 && rep.converged);
    }

    #[test]
    fn jacobi_not_worse_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = DMatrix::from_fn(50, 50, |_, _| rng.gen_range(-1.0..1.0));
        let scales = DVector::from_fn(50, |i, _| 10f64.powf(i as f64 / 12.0));
        let s = DMatrix::from_diagonal(&scales);
        let a = &s * (b.transpose() * &b + DMatrix::identity(50, 50) * 50.0) * &s;
        let csr = CsrMatrix::from_dense(&a, 0.0);
        let rhs: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = SolverConfig::default();
        let (_, plain) = cg(&csr, &rhs, &IdentityPrecond, &cfg).unwrap();
        let (x, jac) = cg(&csr, &rhs, &JacobiPrecond::new(&csr.diagonal()).unwrap(), &cfg).unwrap();
        assert!(jac.converged);
        assert!(jac.iterations() <= plain.iterations());
        let (_, t) = relres(&csr, &x, &rhs, norm2(&rhs));
        assert!((t - jac.final_residual()).abs() <= 1e-12);
    }

    #[test]
    fn indefinite_is_flagged() {
        let a = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        let err = cg(&a, &[1.0, 1.0], &IdentityPrecond, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, SolverError::Indefinite { .. }));
    }
}
