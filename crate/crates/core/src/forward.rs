//! Implicit time stepping: Newton iterations on the coupled residual with a
//! feasibility-preserving line search.

use serde::{Deserialize, Serialize};

use crate::adjoint::{assemble_adjoint_operator, DENSE_FALLBACK_MAX_DOFS};
use crate::contact::{detect_contacts, min_gap, ContactPoint, FrictionRegime};
use crate::elasticity::{internal_force_and_rhs, project_all, ElementProjection};
use crate::error::{Result, SimError};
use crate::linsolve::{self, JacobiPrecond, Method, PrecondKind, SolverConfig};
use crate::scene::Scene;
use crate::state::SimState;
use crate::system::{predict, SystemMatrix};
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    /// Bound on `‖r‖∞ / (h² f_char)`.
    pub tol: f64,
    pub max_iter: usize,
    pub linear_tol: f64,
    /// Minimum fraction of a gap that a single Newton update may keep.
    pub boundary_fraction: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100, linear_tol: 1e-12, boundary_fraction: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardReport {
    /// Scaled residual `‖r‖∞ / (h² f_char)` per Newton iterate.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub contacts: Vec<ContactPoint>,
    pub projections: Vec<ElementProjection>,
    /// Newton systems that needed the dense LU fallback.
    pub dense_fallbacks: usize,
    /// Set when Newton stalled above `tol` but within reach of the residual's
    /// rounding noise at the final iterate, which was then accepted; holds
    /// that noise level (scaled like the residual).
    pub noise_floor: Option<f64>,
}

/// Everything the backward pass needs from one converged step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub q_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub q: Vec<f64>,
    pub contacts: Vec<ContactPoint>,
    pub projections: Vec<ElementProjection>,
    pub iterations: usize,
    pub final_residual: f64,
    /// See [`ForwardReport::noise_floor`].
    pub noise_floor: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// States 0..=T.
    pub states: Vec<SimState>,
    /// `caches[t]` maps state t to state t+1.
    pub caches: Vec<StepCache>,
}

impl Rollout {
    pub fn final_state(&self) -> &SimState {
        self.states.last().expect("rollout has an initial state")
    }
}

/// Force scale used to normalise the residual.
pub fn characteristic_force(scene: &Scene) -> f64 {
    let g = scene.gravity.iter().map(|x| x * x).sum::<f64>().sqrt();
    let m = scene.total_mass();
    let f: f64 = scene.fext.iter().map(|x| x.abs()).sum();
    (m * g + f).max(m)
}

/// Residual, projections and contacts at `q`.
pub fn residual(
    scene: &Scene,
    sys: &SystemMatrix,
    q: &[f64],
    q_bar: &[f64],
    q_hat: &[f64],
) -> Result<(Vec<f64>, Vec<ElementProjection>, Vec<ContactPoint>)> {
    let projections = project_all(scene, sys, q)?;
    let contacts = detect_contacts(scene, q, q_bar);
    let h2 = scene.h * scene.h;
    let (f_int, _) = internal_force_and_rhs(sys, q, q_hat, &projections);
    let mut r: Vec<f64> = (0..q.len()).map(|i| sys.mass[i] * (q[i] - q_hat[i]) - h2 * f_int[i]).collect();
    for b in &scene.bindings {
        for k in 0..3 {
            let lam = -(q[3 * b.vertex + k] - b.target[k]) / b.compliance;
            r[3 * b.vertex + k] -= h2 * lam;
        }
    }
    for cp in &contacts {
        let f = cp.frame.transpose() * cp.lambda;
        for k in 0..3 {
            r[3 * cp.vertex + k] -= h2 * f[k];
        }
    }
    Ok((r, projections, contacts))
}

fn feasible(scene: &Scene, sys: &SystemMatrix, q: &[f64]) -> bool {
    vecops::all_finite(q) && min_gap(scene, q) > 0.0 && project_all(scene, sys, q).is_ok()
}

/// Gaps of every vertex–collider pair.
fn all_gaps(scene: &Scene, q: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(scene.n_verts() * scene.colliders.len());
    for v in 0..scene.n_verts() {
        let x = [q[3 * v], q[3 * v + 1], q[3 * v + 2]];
        for c in &scene.colliders {
            g.push(c.gap_and_normal(x).0);
        }
    }
    g
}

fn newton_direction(
    scene: &Scene,
    sys: &SystemMatrix,
    projections: &[ElementProjection],
    contacts: &[ContactPoint],
    r: &[f64],
    cfg: &ForwardConfig,
    fallbacks: &mut usize,
) -> Result<Vec<f64>> {
    let op = assemble_adjoint_operator(scene, sys, projections, contacts);
    let full = op.assemble_full(sys);
    let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
    let lcfg = SolverConfig {
        method: Method::Gmres,
        precond: PrecondKind::Jacobi,
        tol: cfg.linear_tol,
        max_iter: 500,
        gmres_restart: 100.min(full.nrows().max(1)),
    };
    let attempt = JacobiPrecond::new(&full.diagonal())
        .and_then(|p| linsolve::krylov(&full, &rhs, &p, &lcfg));
    match attempt {
        Ok((x, rep)) if rep.converged && vecops::all_finite(&x) => Ok(x),
        other => {
            if full.nrows() > DENSE_FALLBACK_MAX_DOFS {
                return Err(match other {
                    Err(e) => e.into(),
                    Ok((_, rep)) => linsolve_failure(rep.residual_history),
                });
            }
            *fallbacks += 1;
            linsolve::dense_solve(&full.to_dense(), &rhs)
                .filter(|x| vecops::all_finite(x))
                .ok_or(SimError::NonFinite("singular Newton system"))
        }
    }
}

fn linsolve_failure(history: Vec<f64>) -> SimError {
    SimError::Solver(crate::error::SolverError::NotConverged { history })
}

/// Smoothing multipliers for the continuation fallback, ending at the
/// scene's own value.
const CONTINUATION: [f64; 5] = [1e4, 1e3, 1e2, 1e1, 1.0];

/// A stalled iterate is accepted when its residual is within this factor of
/// the rounding noise measured around it.
const NOISE_FACTOR: f64 = 4.0;

/// Tolerance of the intermediate continuation stages.
const CONTINUATION_TOL: f64 = 1e-6;

/// Advances one step. A non-converged step still returns the last iterate;
/// check `report.converged`.
///
/// The contact rows behave like a barrier (`λ_n δ_n = ε²/2`), and Newton from
/// a poor start can crawl along them. When the plain solve fails, the step is
/// re-solved from the same start with a larger smoothing that is shrunk back
/// to the scene's value, each stage warm-starting the next; the history then
/// holds every stage.
pub fn forward_step(
    scene: &Scene,
    sys: &SystemMatrix,
    state: &SimState,
    cfg: &ForwardConfig,
) -> Result<(SimState, ForwardReport)> {
    let h = scene.h;
    let q_bar = &state.q;
    let q_hat = predict(scene, state);
    let q0 = if feasible(scene, sys, &q_hat) {
        q_hat.clone()
    } else if feasible(scene, sys, q_bar) {
        q_bar.clone()
    } else {
        return Err(SimError::InvalidScene("previous state penetrates a collider or is inverted".into()));
    };

    let mut fallbacks = 0;
    let mut noise_floor = None;
    let mut sol = newton(scene, sys, q0.clone(), q_bar, &q_hat, cfg.tol, cfg, &mut fallbacks)?;
    accept_at_noise_floor(scene, sys, &mut sol, q_bar, &q_hat, &mut noise_floor)?;
    if !sol.converged && scene.eps2 > 0.0 && sol.contacts_seen {
        let mut history = std::mem::take(&mut sol.history);
        let mut iterations = sol.iterations;
        let mut staged = scene.clone();
        let mut q = q0;
        for (i, factor) in CONTINUATION.iter().enumerate() {
            staged.eps2 = scene.eps2 * factor;
            let last = i + 1 == CONTINUATION.len();
            let tol = if last { cfg.tol } else { CONTINUATION_TOL.max(cfg.tol) };
            let stage = newton(if last { scene } else { &staged }, sys, q, q_bar, &q_hat, tol, cfg, &mut fallbacks)?;
            history.extend_from_slice(&stage.history);
            iterations += stage.iterations;
            q = stage.q.clone();
            sol = stage;
        }
        sol.history = history;
        sol.iterations = iterations;
        accept_at_noise_floor(scene, sys, &mut sol, q_bar, &q_hat, &mut noise_floor)?;
    }

    let v: Vec<f64> = sol.q.iter().zip(q_bar).map(|(a, b)| (a - b) / h).collect();
    let next = SimState { q: sol.q, v, step_index: state.step_index + 1 };
    Ok((
        next,
        ForwardReport {
            residual_history: sol.history,
            converged: sol.converged,
            iterations: sol.iterations,
            contacts: sol.contacts,
            projections: sol.projections,
            dense_fallbacks: fallbacks,
            noise_floor,
        },
    ))
}

/// Scaled change of the residual when every coordinate of `q` moves by one
/// ulp in a fixed alternating pattern: the resolution at which the residual
/// can be evaluated there. Stiff contacts (`λ_n / δ_n` large) at positions
/// far from the origin push it above any fixed absolute tolerance.
pub fn residual_noise(scene: &Scene, sys: &SystemMatrix, q: &[f64], q_bar: &[f64], q_hat: &[f64]) -> Result<f64> {
    let scale = scene.h * scene.h * characteristic_force(scene);
    let (r0, _, _) = residual(scene, sys, q, q_bar, q_hat)?;
    let mut worst: f64 = 0.0;
    for sign in [1.0, -1.0] {
        let qp: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let s = if i % 2 == 0 { sign } else { -sign };
                x + s * ulp(x)
            })
            .collect();
        let (rp, _, _) = residual(scene, sys, &qp, q_bar, q_hat)?;
        worst = worst.max(rp.iter().zip(&r0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
    }
    Ok(worst)
}

fn ulp(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1) - x
    }
}

fn accept_at_noise_floor(
    scene: &Scene,
    sys: &SystemMatrix,
    sol: &mut NewtonSolution,
    q_bar: &[f64],
    q_hat: &[f64],
    noise_floor: &mut Option<f64>,
) -> Result<()> {
    if sol.converged {
        return Ok(());
    }
    let last = *sol.history.last().expect("history is never empty");
    let noise = residual_noise(scene, sys, &sol.q, q_bar, q_hat)?;
    if last <= NOISE_FACTOR * noise {
        log::debug!("accepting residual {last:.3e} at rounding noise {noise:.3e}");
        sol.converged = true;
        *noise_floor = Some(noise);
    }
    Ok(())
}

struct NewtonSolution {
    q: Vec<f64>,
    history: Vec<f64>,
    converged: bool,
    iterations: usize,
    contacts: Vec<ContactPoint>,
    projections: Vec<ElementProjection>,
    /// Whether any iterate had an active contact.
    contacts_seen: bool,
}

#[allow(clippy::too_many_arguments)]
fn newton(
    scene: &Scene,
    sys: &SystemMatrix,
    mut q: Vec<f64>,
    q_bar: &[f64],
    q_hat: &[f64],
    tol: f64,
    cfg: &ForwardConfig,
    fallbacks: &mut usize,
) -> Result<NewtonSolution> {
    let scale = scene.h * scene.h * characteristic_force(scene);
    let (mut r, mut projections, mut contacts) = residual(scene, sys, &q, q_bar, q_hat)?;
    let mut contacts_seen = !contacts.is_empty();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let scaled = vecops::norm_inf(&r) / scale;
        history.push(scaled);
        if !scaled.is_finite() {
            return Err(SimError::NonFinite("forward residual"));
        }
        if scaled <= tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;
        let dq = newton_direction(scene, sys, &projections, &contacts, &r, cfg, fallbacks)?;
        let mut accepted = line_search(scene, sys, &q, &dq, &r, q_bar, q_hat, scale, tol, cfg);
        if accepted.is_none() {
            // Iterates can pin a contact on the stick–slip kink, where one
            // one-sided Jacobian gives no descent; retry with the other one.
            if let Some(alt) = flip_kink_regimes(&contacts) {
                let dq = newton_direction(scene, sys, &projections, &alt, &r, cfg, fallbacks)?;
                accepted = line_search(scene, sys, &q, &dq, &r, q_bar, q_hat, scale, tol, cfg);
            }
        }
        match accepted {
            Some((qt, rt, pt, ct)) => {
                q = qt;
                r = rt;
                projections = pt;
                contacts = ct;
                contacts_seen |= !contacts.is_empty();
            }
            None => {
                log::debug!("line search failed at Newton iteration {iterations}");
                break;
            }
        }
    }
    Ok(NewtonSolution { q, history, converged, iterations, contacts, projections, contacts_seen })
}

/// Relative band around the stick–slip boundary `μλ_n‖δ_f‖ = ε²/2` treated as the kink.
const KINK_BAND: f64 = 0.1;

/// Contacts near the stick–slip boundary with their linearisation switched
/// to the other side; `None` if no contact is near it.
fn flip_kink_regimes(contacts: &[ContactPoint]) -> Option<Vec<ContactPoint>> {
    let mut out = contacts.to_vec();
    let mut any = false;
    for cp in &mut out {
        if cp.regime == FrictionRegime::Frictionless || !(cp.delta[0] > 0.0) {
            continue;
        }
        let df = (cp.delta[1] * cp.delta[1] + cp.delta[2] * cp.delta[2]).sqrt();
        let ratio = cp.mu * cp.lambda[0] * df / (0.5 * cp.eps2);
        if (ratio - 1.0).abs() <= KINK_BAND {
            cp.regime = match cp.regime {
                FrictionRegime::Clamped => FrictionRegime::Sliding,
                _ => FrictionRegime::Clamped,
            };
            any = true;
        }
    }
    any.then_some(out)
}

type Accepted = (Vec<f64>, Vec<f64>, Vec<ElementProjection>, Vec<ContactPoint>);

/// Backtracking along `dq`: a fraction-to-boundary cap for half-spaces, then
/// halving until every gap stays positive (and above `boundary_fraction` of
/// its old value unless it grows) and the residual satisfies Armijo.
#[allow(clippy::too_many_arguments)]
fn line_search(
    scene: &Scene,
    sys: &SystemMatrix,
    q: &[f64],
    dq: &[f64],
    r: &[f64],
    q_bar: &[f64],
    q_hat: &[f64],
    scale: f64,
    tol: f64,
    cfg: &ForwardConfig,
) -> Option<Accepted> {
    let gaps0 = all_gaps(scene, q);
    let mut alpha: f64 = 1.0;
    for v in 0..scene.n_verts() {
        for (c, col) in scene.colliders.iter().enumerate() {
            if let crate::scene::ColliderKind::HalfSpace { normal, .. } = col.kind {
                let rate: f64 = (0..3).map(|k| normal[k] * dq[3 * v + k]).sum();
                let g0 = gaps0[v * scene.colliders.len() + c];
                if rate < 0.0 {
                    alpha = alpha.min((1.0 - cfg.boundary_fraction) * g0 / -rate);
                }
            }
        }
    }
    let r_norm = vecops::norm2(r);
    while alpha >= 1e-12 {
        let trial: Vec<f64> = q.iter().zip(dq).map(|(a, d)| a + alpha * d).collect();
        let gaps = all_gaps(scene, &trial);
        let boundary_ok = gaps.iter().zip(&gaps0).all(|(g, g0)| *g > 0.0 && (*g >= cfg.boundary_fraction * g0 || *g >= *g0));
        if boundary_ok {
            if let Ok((rt, pt, ct)) = residual(scene, sys, &trial, q_bar, q_hat) {
                let rt_norm = vecops::norm2(&rt);
                if rt_norm <= (1.0 - 1e-4 * alpha) * r_norm || vecops::norm_inf(&rt) / scale <= tol {
                    return Some((trial, rt, pt, ct));
                }
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Runs `steps` steps, failing on the first step that does not converge.
pub fn rollout(scene: &Scene, sys: &SystemMatrix, initial: &SimState, steps: usize, cfg: &ForwardConfig) -> Result<Rollout> {
    initial.validate()?;
    if initial.n_dofs() != scene.n_dofs() {
        return Err(SimError::DimensionMismatch { expected: scene.n_dofs(), got: initial.n_dofs() });
    }
    let mut states = vec![initial.clone()];
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let cur = states.last().unwrap();
        let (next, rep) = forward_step(scene, sys, cur, cfg).map_err(|e| SimError::StepFailed { step: t, reason: e.to_string() })?;
        if !rep.converged {
            return Err(SimError::StepFailed {
                step: t,
                reason: format!(
                    "Newton did not converge after {} iterations (scaled residual {:.3e})",
                    rep.iterations,
                    rep.residual_history.last().copied().unwrap_or(f64::NAN)
                ),
            });
        }
        caches.push(StepCache {
            q_bar: cur.q.clone(),
            v_bar: cur.v.clone(),
            q: next.q.clone(),
            contacts: rep.contacts,
            projections: rep.projections,
            iterations: rep.iterations,
            final_residual: *rep.residual_history.last().unwrap(),
            noise_floor: rep.noise_floor,
        });
        states.push(next);
    }
    Ok(Rollout { states, caches })
}
