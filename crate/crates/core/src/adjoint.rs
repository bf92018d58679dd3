//! Differential system and adjoint gradients.
//!
//! At a converged step the residual
//! `r = M(q − q̂) + h²Σ wᵢGᵢᵀ(Gᵢq − pᵢ) − h²J_bᵀλ_b − h²J_cᵀλ_c`
//! has Jacobian `𝒜 = A − ΔA + K_b + K_c` in q. With `𝒜ᵀz = ∂L/∂q + (1/h)∂L/∂v`
//! the gradient with respect to any input x is `zᵀK_x`, `K_x = −∂r/∂x`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactPoint, FrictionRegime};
use crate::elasticity::{dp_dparams, lame_jacobian, proj_jacobian, ElementProjection};
use crate::error::{Result, SimError, SolverError};
use crate::forward::{Rollout, StepCache};
use crate::linsolve::{
    self, CouplingBlock, CouplingSet, DenseInverse, IdentityPrecond, JacobiPrecond, LinearOperator,
    Method, PrecondKind, Preconditioner, SolveReport, SolverConfig, SparseInversePrecond, Transposed,
    WoodburyConfig, WoodburyPrecond,
};
use crate::par;
use crate::scene::{ColliderKind, MaterialModel, Scene};
use crate::sparse::CsrMatrix;
use crate::system::SystemMatrix;

/// Largest system for which a dense LU fallback is attempted.
pub const DENSE_FALLBACK_MAX_DOFS: usize = 3000;

/// `𝒜` with `A − ΔA` in CSR and `K_b + K_c` as matrix-free coupling blocks.
#[derive(Debug, Clone)]
pub struct AdjointOperator {
    pub base: CsrMatrix,
    pub coupling: CouplingSet,
    /// False when sliding friction makes `K_c` asymmetric.
    pub symmetric: bool,
}

impl LinearOperator for AdjointOperator {
    fn dim(&self) -> usize {
        self.base.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.base.spmv(x).expect("dimension");
        crate::vecops::axpy(1.0, &self.coupling.apply(x), &mut y);
        y
    }
    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.base.spmv_transpose(x).expect("dimension");
        crate::vecops::axpy(1.0, &self.coupling.apply_transpose(x), &mut y);
        y
    }
    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.base.diagonal();
        crate::vecops::axpy(1.0, &self.coupling.diagonal(), &mut d);
        d
    }
}

impl AdjointOperator {
    /// `𝒜` assembled into the pattern of `A`.
    pub fn assemble_full(&self, sys: &SystemMatrix) -> CsrMatrix {
        let mut m = self.base.clone();
        let h2 = self.coupling.h * self.coupling.h;
        for b in &self.coupling.blocks {
            let vb = b.vertex_block();
            let blk = nalgebra::Matrix3::from_fn(|r, c| vb[(r, c)]);
            sys.add_vertex_block(&mut m, b.vertex, &blk, h2);
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.base.to_dense() + self.coupling.to_dense()
    }

    /// `𝒜` as CSR without a precomputed pattern.
    pub fn to_csr(&self) -> CsrMatrix {
        let b = &self.base;
        let mut t = Vec::with_capacity(b.nnz() + 9 * self.coupling.blocks.len());
        for i in 0..b.nrows() {
            let (cols, vals) = b.row(i);
            t.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
        }
        let h2 = self.coupling.h * self.coupling.h;
        for blk in &self.coupling.blocks {
            let vb = blk.vertex_block();
            for r in 0..3 {
                for c in 0..3 {
                    t.push((3 * blk.vertex + r, 3 * blk.vertex + c, h2 * vb[(r, c)]));
                }
            }
        }
        CsrMatrix::from_triplets(b.nrows(), b.ncols(), &t)
    }
}

/// `h² wᵢ Gᵢᵀ (∂vec P/∂vec F) Gᵢ` for every element.
pub fn delta_a_blocks(sys: &SystemMatrix, projections: &[ElementProjection]) -> Vec<DMatrix<f64>> {
    let h2 = sys.h * sys.h;
    par::map_range(sys.geoms.len(), |e| {
        let g = sys.geoms[e].g_matrix();
        let jac = proj_jacobian(&projections[e].svd, &projections[e].proj);
        g.transpose() * jac.dp_df * g * (h2 * sys.weights[e])
    })
}

/// Coupling blocks for bindings (`E_b⁻¹ I`) and contacts. Contacts without an
/// active friction branch contribute only their normal row.
pub fn coupling_blocks(scene: &Scene, contacts: &[ContactPoint]) -> CouplingSet {
    let mut set = CouplingSet::new(scene.h, scene.n_dofs());
    for b in &scene.bindings {
        set.blocks.push(CouplingBlock {
            vertex: b.vertex,
            j: DMatrix::identity(3, 3),
            k: DMatrix::identity(3, 3) / b.compliance,
        });
    }
    for cp in contacts {
        if cp.regime == FrictionRegime::Sliding {
            let blk = cp.block();
            set.blocks.push(CouplingBlock {
                vertex: cp.vertex,
                j: DMatrix::from_fn(3, 3, |r, c| cp.frame[(r, c)]),
                k: DMatrix::from_fn(3, 3, |r, c| blk.kc[(r, c)]),
            });
        } else {
            set.blocks.push(CouplingBlock {
                vertex: cp.vertex,
                j: DMatrix::from_fn(1, 3, |_, c| cp.frame[(0, c)]),
                k: DMatrix::from_element(1, 1, cp.lambda[0] / cp.delta[0]),
            });
        }
    }
    set
}

pub fn assemble_adjoint_operator(
    scene: &Scene,
    sys: &SystemMatrix,
    projections: &[ElementProjection],
    contacts: &[ContactPoint],
) -> AdjointOperator {
    let blocks = delta_a_blocks(sys, projections);
    let mut base = sys.with_element_blocks(&blocks, -1.0);
    // A curved collider rotates the normal with the vertex: ∂n/∂x = (I − nnᵀ)/ρ.
    // Only the normal force's share is kept; tangential frame rotation is not.
    for cp in contacts {
        if let ColliderKind::Sphere { radius, .. } = scene.colliders[cp.collider].kind {
            let n = cp.frame.row(0).transpose();
            let curv = (Matrix3::identity() - n * n.transpose()) * (cp.lambda[0] / (radius + cp.delta[0]));
            sys.add_vertex_block(&mut base, cp.vertex, &curv, -scene.h * scene.h);
        }
    }
    let symmetric = contacts.iter().all(|c| c.regime != FrictionRegime::Sliding);
    AdjointOperator { base, coupling: coupling_blocks(scene, contacts), symmetric }
}

/// Solves `𝒜ᵀz = rhs` with CG in symmetric regimes and GMRES otherwise;
/// only the preconditioner and tolerances of `cfg` are used.
pub fn solve_adjoint(op: &AdjointOperator, rhs: &[f64], cfg: &SolverConfig) -> std::result::Result<(Vec<f64>, SolveReport), SolverError> {
    let method = if op.symmetric { Method::Cg } else { Method::Gmres };
    let (x, rep) = solve_adjoint_with(op, rhs, &SolverConfig { method, ..*cfg })?;
    if !rep.converged {
        return Err(SolverError::NotConverged { history: rep.residual_history });
    }
    Ok((x, rep))
}

/// One Krylov solve of `𝒜ᵀz = rhs` with exactly the method and
/// preconditioner of `cfg`; non-convergence is reported, not an error.
pub fn solve_adjoint_with(op: &AdjointOperator, rhs: &[f64], cfg: &SolverConfig) -> std::result::Result<(Vec<f64>, SolveReport), SolverError> {
    let opt = Transposed(op);
    match cfg.precond {
        PrecondKind::None => linsolve::krylov(&opt, rhs, &IdentityPrecond, cfg),
        PrecondKind::Jacobi => linsolve::krylov(&opt, rhs, &JacobiPrecond::new(&op.diagonal())?, cfg),
        // The coupling blocks are never assembled, so the sparse inverse only
        // sees (A − ΔA)ᵀ; Woodbury adds the exact coupling correction on top.
        PrecondKind::SparseInverse => linsolve::krylov(&opt, rhs, &SparseInversePrecond::new(&op.base.transpose())?, cfg),
        PrecondKind::Woodbury => {
            let base = SparseInversePrecond::new(&op.base.transpose())?;
            let wcfg = WoodburyConfig { transpose: true, ..WoodburyConfig::for_outer_tol(cfg.tol) };
            linsolve::krylov(&opt, rhs, &WoodburyPrecond::new(&base, &op.coupling, wcfg), cfg)
        }
    }
}

/// `solve_adjoint`, falling back to a dense LU solve on desk-scale systems.
fn solve_adjoint_robust(op: &AdjointOperator, rhs: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
    match solve_adjoint(op, rhs, cfg) {
        Ok((z, _)) => Ok(z),
        Err(e) if op.dim() <= DENSE_FALLBACK_MAX_DOFS => {
            log::warn!("adjoint Krylov solve failed ({e}); using dense LU");
            let z = DenseInverse::new(&op.to_dense().transpose()).apply(rhs);
            if z.iter().all(|v| v.is_finite()) {
                Ok(z)
            } else {
                Err(e.into())
            }
        }
        Err(e) => Err(e.into()),
    }
}

/// `L = ‖q − q*‖²` and its gradient.
pub fn loss_final_state(q_final: &[f64], q_target: &[f64]) -> (f64, Vec<f64>) {
    let d: Vec<f64> = q_final.iter().zip(q_target).map(|(a, b)| a - b).collect();
    (d.iter().map(|x| x * x).sum(), d.iter().map(|x| 2.0 * x).collect())
}

/// Gradients of a rollout loss. Parameter gradients are accumulated over
/// all steps; state gradients refer to the initial state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub dl_dq0: Vec<f64>,
    pub dl_dv0: Vec<f64>,
    /// Per step `t`, the gradient with respect to the external force applied during step t.
    pub dl_dfext_steps: Vec<Vec<f64>>,
    /// Sum over steps: the gradient with respect to a constant external force.
    pub dl_dfext: Vec<f64>,
    /// Per collider.
    pub dl_dmu_friction: Vec<f64>,
    /// Per binding.
    pub dl_deb: Vec<f64>,
    pub dl_ddb: Vec<[f64; 3]>,
    /// Per element, holding the material law fixed.
    pub dl_dw: Vec<f64>,
    /// Per element Young's modulus and Poisson ratio (Neo-Hookean elements).
    pub dl_de_elem: Vec<f64>,
    pub dl_dnu_elem: Vec<f64>,
    /// Per element ARAP stiffness density.
    pub dl_dstiffness_elem: Vec<f64>,
}

impl GradientReport {
    fn zeros(scene: &Scene, n_steps: usize) -> Self {
        let (n, ne) = (scene.n_dofs(), scene.elements.len());
        Self {
            dl_dq0: vec![0.0; n],
            dl_dv0: vec![0.0; n],
            dl_dfext_steps: vec![vec![0.0; n]; n_steps],
            dl_dfext: vec![0.0; n],
            dl_dmu_friction: vec![0.0; scene.colliders.len()],
            dl_deb: vec![0.0; scene.bindings.len()],
            dl_ddb: vec![[0.0; 3]; scene.bindings.len()],
            dl_dw: vec![0.0; ne],
            dl_de_elem: vec![0.0; ne],
            dl_dnu_elem: vec![0.0; ne],
            dl_dstiffness_elem: vec![0.0; ne],
        }
    }

    /// Scene-wide Young's modulus gradient (all elements share E).
    pub fn dl_de(&self) -> f64 {
        self.dl_de_elem.iter().sum()
    }
    pub fn dl_dnu(&self) -> f64 {
        self.dl_dnu_elem.iter().sum()
    }
    pub fn dl_dstiffness(&self) -> f64 {
        self.dl_dstiffness_elem.iter().sum()
    }
}

/// Result of one backward step.
#[derive(Debug, Clone)]
pub struct StepGradient {
    pub z: Vec<f64>,
    pub dl_dqbar: Vec<f64>,
    pub dl_dvbar: Vec<f64>,
}

/// One backward step: solves for z and accumulates `zᵀK_x` into `acc` for the
/// parameters, writing the per-step force gradient into slot `step`.
#[allow(clippy::too_many_arguments)]
pub fn backprop_step(
    scene: &Scene,
    sys: &SystemMatrix,
    cache: &StepCache,
    dl_dq: &[f64],
    dl_dv: &[f64],
    cfg: &SolverConfig,
    acc: &mut GradientReport,
    step: usize,
) -> Result<StepGradient> {
    let h = scene.h;
    let h2 = h * h;
    let n = scene.n_dofs();
    let rhs: Vec<f64> = dl_dq.iter().zip(dl_dv).map(|(a, b)| a + b / h).collect();
    let z = if rhs.iter().all(|v| *v == 0.0) {
        vec![0.0; n]
    } else {
        let op = assemble_adjoint_operator(scene, sys, &cache.projections, &cache.contacts);
        solve_adjoint_robust(&op, &rhs, cfg)?
    };
    let zv = |v: usize| Vector3::new(z[3 * v], z[3 * v + 1], z[3 * v + 2]);

    // State inputs: K_q̄ = M + h²J_cᵀK_cP_fJ_c, K_v̄ = hM, K_f = h²I.
    let mut dl_dqbar: Vec<f64> = (0..n).map(|i| sys.mass[i] * z[i] - dl_dv[i] / h).collect();
    for cp in &cache.contacts {
        if cp.regime != FrictionRegime::Sliding {
            continue;
        }
        let kc = cp.block().kc;
        let pf = nalgebra::Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 1.0));
        let g = cp.frame.transpose() * pf * kc.transpose() * cp.frame * zv(cp.vertex) * h2;
        for r in 0..3 {
            dl_dqbar[3 * cp.vertex + r] += g[r];
        }
    }
    let dl_dvbar: Vec<f64> = (0..n).map(|i| h * sys.mass[i] * z[i]).collect();
    if let Some(slot) = acc.dl_dfext_steps.get_mut(step) {
        *slot = z.iter().map(|v| h2 * v).collect();
    }
    for (g, zi) in acc.dl_dfext.iter_mut().zip(&z) {
        *g += h2 * zi;
    }

    // Bindings: K_db = h²E_b⁻¹J_bᵀ, K_Eb = −h²E_b⁻¹J_bᵀλ_b.
    let q = &cache.q;
    for (k, b) in scene.bindings.iter().enumerate() {
        let zb = zv(b.vertex);
        let x = Vector3::new(q[3 * b.vertex], q[3 * b.vertex + 1], q[3 * b.vertex + 2]);
        let lam = -(x - Vector3::from(b.target)) / b.compliance;
        for r in 0..3 {
            acc.dl_ddb[k][r] += h2 * zb[r] / b.compliance;
        }
        acc.dl_deb[k] += -h2 * zb.dot(&lam) / b.compliance;
    }

    // Friction: K_μ = −h²J_cᵀk_μ.
    for cp in &cache.contacts {
        if cp.regime == FrictionRegime::Sliding {
            let k_mu = cp.block().k_mu;
            acc.dl_dmu_friction[cp.collider] += -h2 * (cp.frame * zv(cp.vertex)).dot(&k_mu);
        }
    }

    // Elements: K_w = h²Gᵀ(p − Gq + w∂p/∂w) and the Lamé chain.
    let per_elem: Vec<(f64, f64, f64, f64)> = par::map_range(sys.geoms.len(), |e| {
        let geom = &sys.geoms[e];
        let ep = &cache.projections[e];
        let zl: Vec<f64> = geom.dofs().iter().map(|&d| z[d]).collect();
        let gz = geom.g_matrix() * DVector::from_vec(zl);
        let pmf = DVector::from_column_slice((&ep.proj.p - &ep.f).as_slice());
        let base = h2 * gz.dot(&pmf);
        let w = sys.weights[e];
        let vol = geom.measure;
        match ep.proj.model {
            MaterialModel::Arap => (base, 0.0, 0.0, base * vol),
            MaterialModel::NeoHookean => {
                let sens = dp_dparams(&ep.svd, &ep.proj);
                let dot = |m: &DMatrix<f64>| gz.dot(&DVector::from_column_slice(m.as_slice()));
                let dl_dw = base + h2 * ep.proj.wt * dot(&sens.dp_dwt);
                let dl_dmu = 2.0 * vol * base + h2 * w * dot(&sens.dp_dmu);
                let dl_dla = h2 * w * dot(&sens.dp_dlambda);
                let mat = &scene.materials[e];
                let jl = lame_jacobian(mat.young, mat.nu);
                let de = dl_dmu * jl[0][0] + dl_dla * jl[1][0];
                let dnu = dl_dmu * jl[0][1] + dl_dla * jl[1][1];
                (dl_dw, de, dnu, 0.0)
            }
        }
    });
    for (e, (dw, de, dnu, dk)) in per_elem.into_iter().enumerate() {
        acc.dl_dw[e] += dw;
        acc.dl_de_elem[e] += de;
        acc.dl_dnu_elem[e] += dnu;
        acc.dl_dstiffness_elem[e] += dk;
    }
    Ok(StepGradient { z, dl_dqbar, dl_dvbar })
}

/// Reverse sweep over a rollout. `dl_dq[t]`, `dl_dv[t]` are the explicit loss
/// gradients with respect to state t (t = 0..=T); empty vectors mean zero.
pub fn backprop_rollout(
    scene: &Scene,
    sys: &SystemMatrix,
    rollout: &Rollout,
    dl_dq: &[Vec<f64>],
    dl_dv: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Result<GradientReport> {
    let n = scene.n_dofs();
    let steps = rollout.caches.len();
    let get = |v: &[Vec<f64>], t: usize| v.get(t).filter(|x| !x.is_empty()).cloned().unwrap_or_else(|| vec![0.0; n]);
    let mut acc = GradientReport::zeros(scene, steps);
    let mut gq = get(dl_dq, steps);
    let mut gv = get(dl_dv, steps);
    for t in (0..steps).rev() {
        let sg = backprop_step(scene, sys, &rollout.caches[t], &gq, &gv, cfg, &mut acc, t)
            .map_err(|e| SimError::StepFailed { step: t, reason: format!("adjoint: {e}") })?;
        gq = crate::vecops::add(&get(dl_dq, t), &sg.dl_dqbar);
        gv = crate::vecops::add(&get(dl_dv, t), &sg.dl_dvbar);
    }
    acc.dl_dq0 = gq;
    acc.dl_dv0 = gv;
    Ok(acc)
}

/// Gradients of `‖q_T − q*‖²` for a rollout.
pub fn backprop_final_state(
    scene: &Scene,
    sys: &SystemMatrix,
    rollout: &Rollout,
    q_target: &[f64],
    cfg: &SolverConfig,
) -> Result<(f64, GradientReport)> {
    let (l, g) = loss_final_state(&rollout.final_state().q, q_target);
    let mut dl_dq = vec![Vec::new(); rollout.caches.len() + 1];
    *dl_dq.last_mut().unwrap() = g;
    Ok((l, backprop_rollout(scene, sys, rollout, &dl_dq, &[], cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_state_loss_examples() {
        assert_eq!(loss_final_state(&[1.0, 2.0], &[1.0, 2.0]), (0.0, vec![0.0, 0.0]));
        assert_eq!(loss_final_state(&[3.0], &[1.0]), (4.0, vec![4.0]));
    }
}
