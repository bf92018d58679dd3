use std::time::Instant;

use super::{LinearOperator, Preconditioner, SolveReport, SolverConfig};
use crate::vecops::norm2;

/// Fixed-point iteration `x ← A⁻¹(b − (𝒜 − A)x)` from `x = 0`.
///
/// Divergence (residual above 1e6 × initial, 10 consecutive increases, or a
/// non-finite value) is reported through `SolveReport::diverged`.
pub fn semi_implicit(
    a_inv: &dyn Preconditioner,
    a: &dyn LinearOperator,
    op: &dyn LinearOperator,
    rhs: &[f64],
    cfg: &SolverConfig,
) -> (Vec<f64>, SolveReport) {
    let start = Instant::now();
    let n = op.dim();
    let bnorm = norm2(rhs);
    let mut x = vec![0.0; n];
    let mut hist = vec![if bnorm == 0.0 { 0.0 } else { 1.0 }];
    let mut times = vec![0.0];
    let (mut converged, mut diverged) = (bnorm == 0.0, false);
    let mut increases = 0;
    while !converged && !diverged && hist.len() <= cfg.max_iter {
        let ax = a.apply(&x);
        let opx = op.apply(&x);
        let r: Vec<f64> = (0..n).map(|i| rhs[i] - opx[i] + ax[i]).collect();
        x = a_inv.apply(&r);
        let opx = op.apply(&x);
        let res = norm2(&(0..n).map(|i| rhs[i] - opx[i]).collect::<Vec<_>>()) / bnorm;
        let prev = *hist.last().unwrap();
        hist.push(res);
        times.push(start.elapsed().as_secs_f64());
        if !res.is_finite() || res > 1e6 * hist[0] {
            diverged = true;
        } else if res > prev {
            increases += 1;
            diverged = increases >= 10;
        } else {
            increases = 0;
        }
        converged = res <= cfg.tol;
    }
    let report = SolveReport { residual_history: hist, converged, diverged, wall_time: start.elapsed().as_secs_f64(), time_history: times };
    (x, report)
}
