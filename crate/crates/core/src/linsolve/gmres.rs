use std::time::Instant;

use super::{relres, LinearOperator, Preconditioner, SolveReport, SolverConfig};
use crate::error::SolverError;
use crate::vecops::{axpy, dot, norm2, scale};

/// Restarted, right-preconditioned GMRES(m) from a zero initial guess.
///
/// The preconditioned directions are stored, so the preconditioner may vary
/// between applications (flexible variant). A restart cycle that fails to
/// reduce the true residual is reported as stagnation.
pub fn gmres(
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
    let m = cfg.gmres_restart.max(1);
    let mut r = rhs.to_vec();
    let mut beta = bnorm;
    let mut hist = vec![1.0];
    let mut times = vec![0.0];
    let mut total = 0usize;
    let converged;
    loop {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut v0 = r.clone();
        scale(1.0 / beta, &mut v0);
        basis.push(v0);
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && total < cfg.max_iter {
            let zk = precond.apply(&basis[k]);
            let mut w = op.apply(&zk);
            dirs.push(zk);
            for i in 0..=k {
                h[i][k] = dot(&w, &basis[i]);
                axpy(-h[i][k], &basis[i], &mut w);
            }
            // One reorthogonalisation pass keeps the basis orthogonal.
            for i in 0..=k {
                let c = dot(&w, &basis[i]);
                h[i][k] += c;
                axpy(-c, &basis[i], &mut w);
            }
            let wn = norm2(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                return Err(SolverError::NonFinite("gmres: singular Hessenberg column"));
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k += 1;
            let est = g[k].abs() / bnorm;
            if !est.is_finite() {
                return Err(SolverError::NonFinite("gmres residual"));
            }
            hist.push(est);
            times.push(start.elapsed().as_secs_f64());
            if est <= cfg.tol || wn <= 1e-300 {
                break;
            }
            let mut vk = w;
            scale(1.0 / wn, &mut vk);
            basis.push(vk);
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&dirs) {
            axpy(*yi, zi, &mut x);
        }
        let (rt, trel) = relres(op, &x, rhs, bnorm);
        *hist.last_mut().unwrap() = trel;
        if trel <= cfg.tol {
            converged = true;
            break;
        }
        if total >= cfg.max_iter {
            converged = false;
            break;
        }
        let new_beta = trel * bnorm;
        if new_beta >= beta * (1.0 - 1e-12) {
            return Err(SolverError::Stagnated { history: hist });
        }
        beta = new_beta;
        r = rt;
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
    use super::super::{cg, dense_solve, IdentityPrecond, JacobiPrecond};
    use super::*;
    use crate::sparse::CsrMatrix;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_in_one_iteration() {
        let (x, rep) = gmres(&CsrMatrix::identity(4), &[1.0, 2.0, 3.0, 4.0], &IdentityPrecond, &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations(), 1);
        assert!(x.iter().zip([1.0, 2.0, 3.0, 4.0]).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn asymmetric_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let b = [1.0, 3.0];
        let (x, rep) = gmres(&a, &b, &IdentityPrecond, &SolverConfig::default()).unwrap();
        let xd = dense_solve(&a, &b).unwrap();
        assert!(rep.converged);
        assert!((x[0] - xd[0]).abs() < 1e-10 && (x[1] - xd[1]).abs() < 1e-10);
    }

    #[test]
    fn agrees_with_cg_on_spd_and_restarts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = DMatrix::from_fn(60, 60, |_, _| rng.gen_range(-1.0..1.0));
        let a = b.transpose() * &b + DMatrix::identity(60, 60) * 5.0;
        let rhs: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = SolverConfig { gmres_restart: 10, ..SolverConfig::default() };
        let (xg, rg) = gmres(&a, &rhs, &JacobiPrecond::new(a.diagonal().as_slice()).unwrap(), &cfg).unwrap();
        let (xc, _) = cg(&a, &rhs, &IdentityPrecond, &cfg).unwrap();
        assert!(rg.converged);
        let diff = xg.iter().zip(&xc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8);
        let (_, t) = relres(&a, &xg, &rhs, norm2(&rhs));
        assert!((t - rg.final_residual()).abs() <= 1e-12);
    }
}
