//! Stage-wise convergence metrics of an optimization trace.
//!
//! With `Δ = L⁰ − L^T`:
//! - `t_p = (1/T) min{i : L⁰ − Lⁱ ≥ pΔ}`
//! - `AUC|S = mean_{i∈S} (Lⁱ − L^T)/Δ`
//! - `MRE|S = mean_{i∈S} ‖g_ana − g_fd‖/(‖g_fd‖ + ε_g)`
//!
//! Stages split the iterations at `t₀.₅` and `t₀.₉`: early `[0, i₅₀]`,
//! middle `(i₅₀, i₉₀]`, late `(i₉₀, T]`.

use serde::{Deserialize, Serialize};

pub const EPS_G: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub t50: f64,
    pub t90: f64,
    pub auc_e: Option<f64>,
    pub auc_m: Option<f64>,
    pub auc_l: Option<f64>,
    pub mre_e: Option<f64>,
    pub mre_m: Option<f64>,
    pub mre_l: Option<f64>,
    /// Set when the loss did not decrease; `t_p` is then reported as 1.
    pub constant_loss: bool,
}

/// Index of the first iterate achieving fraction p of the total decrease.
fn first_reaching(loss: &[f64], p: f64) -> Option<usize> {
    let (l0, lt) = (loss[0], *loss.last()?);
    let total = l0 - lt;
    if !(total > 0.0) {
        return None;
    }
    loss.iter().position(|&l| l0 - l >= p * total)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// `AUC|S` over an index range; `None` if the stage is empty or the loss is constant.
pub fn auc(loss: &[f64], stage: std::ops::Range<usize>) -> Option<f64> {
    let (l0, lt) = (loss[0], *loss.last()?);
    let total = l0 - lt;
    if !(total > 0.0) {
        return None;
    }
    mean(stage.map(|i| (loss[i] - lt) / total))
}

/// Relative error of one gradient pair.
pub fn relative_error(ana: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = ana.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let nfd: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / (nfd + EPS_G)
}

/// `MRE|S` over the iterates of the stage that carry an FD reference.
pub fn mre(ana: &[Vec<f64>], fd: &[Option<Vec<f64>>], stage: std::ops::Range<usize>) -> Option<f64> {
    mean(stage.filter_map(|i| fd.get(i)?.as_ref().map(|f| relative_error(&ana[i], f))))
}

/// Metrics of a trace with `T + 1` loss values. `grads_fd` may be shorter
/// than the trace or hold `None` where no FD reference was computed.
pub fn metrics(loss: &[f64], grads_ana: &[Vec<f64>], grads_fd: &[Option<Vec<f64>>]) -> MetricsReport {
    assert!(!loss.is_empty(), "metrics of an empty trace");
    let t = loss.len() - 1;
    let (i50, i90, constant_loss) = match (first_reaching(loss, 0.5), first_reaching(loss, 0.9)) {
        (Some(a), Some(b)) if t > 0 => (a, b, false),
        _ => (t, t, true),
    };
    let frac = |i: usize| if t == 0 { 1.0 } else { i as f64 / t as f64 };
    let stages = [0..i50 + 1, i50 + 1..i90 + 1, i90 + 1..t + 1];
    let a: Vec<Option<f64>> = stages.iter().map(|s| auc(loss, s.clone())).collect();
    let m: Vec<Option<f64>> = stages.iter().map(|s| mre(grads_ana, grads_fd, s.clone())).collect();
    MetricsReport {
        t50: if constant_loss { 1.0 } else { frac(i50) },
        t90: if constant_loss { 1.0 } else { frac(i90) },
        auc_e: a[0],
        auc_m: a[1],
        auc_l: a[2],
        mre_e: m[0],
        mre_m: m[1],
        mre_l: m[2],
        constant_loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_p_examples() {
        let r = metrics(&[10.0, 5.0, 1.0, 0.0], &[], &[]);
        assert_eq!(r.t50, 1.0 / 3.0);
        assert_eq!(r.t90, 2.0 / 3.0);
        assert!(!r.constant_loss);
    }

    #[test]
    fn auc_example() {
        assert_eq!(auc(&[1.0, 0.5, 0.0], 0..2), Some(0.75));
    }

    #[test]
    fn constant_loss_is_flagged() {
        let r = metrics(&[2.0, 2.0, 2.0], &[], &[]);
        assert!(r.constant_loss);
        assert_eq!((r.t50, r.t90), (1.0, 1.0));
        assert_eq!(r.auc_e, None);
    }
}
