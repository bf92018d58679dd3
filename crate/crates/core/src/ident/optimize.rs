//! Plain gradient descent with a recorded trace.

use serde::{Deserialize, Serialize};

use super::metrics::{metrics, MetricsReport};
use super::problem::{fd_gradient, OptProblem};
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub loss: Vec<f64>,
    pub params: Vec<Vec<f64>>,
    /// Gradient with respect to the original (not log) parameters.
    pub grad_analytic: Vec<Vec<f64>>,
    pub grad_fd: Vec<Option<Vec<f64>>>,
    /// The loss or gradient became non-finite, or a rollout failed; the trace
    /// stops at the last good iterate.
    pub diverged: bool,
    pub failure: Option<String>,
}

impl OptTrace {
    pub fn final_params(&self) -> Option<&[f64]> {
        self.params.last().map(|p| p.as_slice())
    }

    pub fn metrics(&self) -> MetricsReport {
        metrics(&self.loss, &self.grad_analytic, &self.grad_fd)
    }
}

/// Generic descent: `eval` returns (loss, gradient, optional FD gradient) at
/// x; the update is `x ← x − lr·g`, or `ln x ← ln x − lr·x·g` for components
/// flagged in `log_space` (missing flags count as false).
pub fn gradient_descent(
    mut eval: impl FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)>,
    x0: &[f64],
    learning_rate: f64,
    iterations: usize,
    log_space: &[bool],
) -> OptTrace {
    let mut trace = OptTrace::default();
    let mut x = x0.to_vec();
    for it in 0..=iterations {
        let (l, g, fd) = match eval(it, &x) {
            Ok(r) => r,
            Err(e) => {
                trace.diverged = true;
                trace.failure = Some(format!("iteration {it}: {e}"));
                break;
            }
        };
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            trace.diverged = true;
            trace.failure = Some(format!("iteration {it}: non-finite loss or gradient"));
            break;
        }
        trace.loss.push(l);
        trace.params.push(x.clone());
        trace.grad_analytic.push(g.clone());
        trace.grad_fd.push(fd);
        if it == iterations {
            break;
        }
        for (i, (xi, gi)) in x.iter_mut().zip(&g).enumerate() {
            if log_space.get(i).copied().unwrap_or(false) {
                *xi = (xi.ln() - learning_rate * *xi * gi).exp();
            } else {
                *xi -= learning_rate * gi;
            }
        }
    }
    trace
}

/// Runs gradient descent on the problem. Rollout or adjoint failures
/// truncate the trace with `diverged` set.
pub fn optimize(problem: &OptProblem) -> Result<OptTrace> {
    problem.validate()?;
    Ok(gradient_descent(
        |it, x| {
            let (l, g) = problem.loss_and_gradient(x)?;
            let fd = if problem.fd_every > 0 && it % problem.fd_every == 0 {
                Some(fd_gradient(problem, x, problem.eta)?)
            } else {
                None
            };
            Ok((l, g, fd))
        },
        &problem.init,
        problem.learning_rate,
        problem.iterations,
        &problem.log_mask(),
    ))
}
