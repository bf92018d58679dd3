//! Adjoint-solver benchmark: one converged step's adjoint system solved with
//! every applicable (method, preconditioner) pair and the semi-implicit
//! baseline.

use serde::{Deserialize, Serialize};

use super::scenes;
use crate::adjoint::{assemble_adjoint_operator, solve_adjoint_with, AdjointOperator, DENSE_FALLBACK_MAX_DOFS};
use crate::error::{Result, SimError};
use crate::forward::{rollout, ForwardConfig};
use crate::linsolve::{
    semi_implicit, CgInverse, DenseInverse, Method, PrecondKind, Preconditioner, SolveReport, SolverConfig, Transposed,
};
use crate::scene::{BindingSpec, Collider, MaterialParams, Scene};
use crate::system::{assemble_system_matrix, SystemMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ContactFree,
    Frictionless,
    Frictional,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "contact_free" => Some(Regime::ContactFree),
            "frictionless" => Some(Regime::Frictionless),
            "frictional" => Some(Regime::Frictional),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::ContactFree => "contact_free",
            Regime::Frictionless => "frictionless",
            Regime::Frictional => "frictional",
        }
    }
}

/// Stiffness of the pinning binding in the ill-conditioned scenes.
pub const STIFF_COMPLIANCE: f64 = 1e-8;

/// Desk-scale scene for a regime. The contact regimes rest a Neo-Hookean
/// cube on a plane with one corner held by a very stiff binding, which makes
/// `𝒜 − A` dominate `A`; the frictional variant slides the cube.
pub fn regime_scene(regime: Regime) -> Scene {
    let mut s = scenes::cube(2, MaterialParams::neohookean(1e5, 0.3));
    if regime == Regime::ContactFree {
        return s;
    }
    s.vertices.iter_mut().for_each(|v| v[2] += 1e-4);
    let mu = if regime == Regime::Frictional { 0.5 } else { 0.0 };
    s.colliders.push(Collider::half_space([0.0, 0.0, 1.0], 0.0, mu));
    let top = s.n_verts() - 1;
    s.bindings.push(BindingSpec { vertex: top, target: s.vertices[top], compliance: STIFF_COMPLIANCE });
    if regime == Regime::Frictional {
        s.initial_velocities = Some(vec![[0.5, 0.2, 0.0]; s.n_verts()]);
    }
    s
}

/// The adjoint operator at the last step of a short rollout.
pub fn converged_operator(scene: &Scene, steps: usize) -> Result<(SystemMatrix, AdjointOperator)> {
    let sys = assemble_system_matrix(scene)?;
    let ro = rollout(scene, &sys, &scene.initial_state(), steps.max(1), &ForwardConfig::default())?;
    let c = ro.caches.last().expect("at least one step");
    let op = assemble_adjoint_operator(scene, &sys, &c.projections, &c.contacts);
    Ok((sys, op))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub solver: String,
    pub precond: String,
    pub report: SolveReport,
    /// Breakdown reported by the solver (e.g. indefinite curvature).
    pub error: Option<String>,
}

fn precond_name(p: PrecondKind) -> &'static str {
    match p {
        PrecondKind::None => "none",
        PrecondKind::Jacobi => "jacobi",
        PrecondKind::SparseInverse => "sparse_inverse",
        PrecondKind::Woodbury => "woodbury",
    }
}

/// Solves `𝒜ᵀz = rhs` with CG (symmetric 𝒜) or GMRES (asymmetric 𝒜) under
/// each preconditioner, then the semi-implicit iteration with exact `A⁻¹`.
pub fn bench_solvers(sys: &SystemMatrix, op: &AdjointOperator, rhs: &[f64], tol: f64, max_iter: usize) -> Vec<BenchRow> {
    let method = if op.symmetric { Method::Cg } else { Method::Gmres };
    let mut precs = vec![PrecondKind::None, PrecondKind::Jacobi, PrecondKind::SparseInverse];
    if !op.coupling.is_empty() {
        precs.push(PrecondKind::Woodbury);
    }
    let mut rows = Vec::new();
    for p in precs {
        let cfg = SolverConfig { method, precond: p, tol, max_iter, ..SolverConfig::default() };
        let solver = if method == Method::Cg { "cg" } else { "gmres" }.to_string();
        let row = match solve_adjoint_with(op, rhs, &cfg) {
            Ok((_, report)) => BenchRow { solver, precond: precond_name(p).into(), report, error: None },
            Err(e) => {
                let history = match &e {
                    crate::error::SolverError::NotConverged { history } | crate::error::SolverError::Stagnated { history } => history.clone(),
                    _ => vec![1.0],
                };
                let report = SolveReport { time_history: vec![0.0; history.len()], residual_history: history, converged: false, diverged: true, wall_time: 0.0 };
                BenchRow { solver, precond: precond_name(p).into(), report, error: Some(e.to_string()) }
            }
        };
        rows.push(row);
    }
    let cfg = SolverConfig { method: Method::SemiImplicit, precond: PrecondKind::None, tol, max_iter, ..SolverConfig::default() };
    let a_inv: Box<dyn Preconditioner + '_> = if sys.n() <= DENSE_FALLBACK_MAX_DOFS {
        Box::new(DenseInverse::new(&sys.a.to_dense()))
    } else {
        match CgInverse::new(&sys.a, 0.1 * tol) {
            Ok(c) => Box::new(c),
            Err(_) => Box::new(DenseInverse::new(&sys.a.to_dense())),
        }
    };
    let (_, report) = semi_implicit(a_inv.as_ref(), &sys.a, &Transposed(op), rhs, &cfg);
    rows.push(BenchRow { solver: "semi_implicit".into(), precond: "exact_a".into(), report, error: None });
    rows
}

/// Deterministic right-hand side for benchmarks.
pub fn bench_rhs(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.5).collect()
}

/// Benchmark of a built-in regime scene.
pub fn bench_regime(regime: Regime, tol: f64, max_iter: usize) -> Result<Vec<BenchRow>> {
    let (sys, op) = converged_operator(&regime_scene(regime), 5)?;
    if regime == Regime::Frictional && op.symmetric {
        return Err(SimError::InvalidScene("frictional regime scene has no sliding contact".into()));
    }
    Ok(bench_solvers(&sys, &op, &bench_rhs(sys.n()), tol, max_iter))
}
