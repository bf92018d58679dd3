use nalgebra::DMatrix;

use super::projection::{neohookean_density, project, Projection};
use super::svd::{svd_polar, SvdTriple};
use crate::error::{Result, SimError};
use crate::par;
use crate::scene::{MaterialModel, Scene};
use crate::system::{ElementGeom, SystemMatrix};

/// Cached per-element data at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementProjection {
    pub f: DMatrix<f64>,
    pub svd: SvdTriple,
    pub proj: Projection,
}

impl ElementProjection {
    /// Column-stacked `vec(P)`.
    pub fn vec_p(&self) -> &[f64] {
        self.proj.p.as_slice()
    }
}

pub fn project_element(geom: &ElementGeom, material: &crate::scene::MaterialParams, q: &[f64], index: usize) -> Result<ElementProjection> {
    let f = geom.deformation_gradient(q);
    let svd = svd_polar(&f).map_err(|e| match e {
        SimError::InvertedElement(_) => SimError::InvertedElement(index),
        other => other,
    })?;
    let proj = project(&svd, material)?;
    Ok(ElementProjection { f, svd, proj })
}

/// Projections of every element at positions q (parallel over elements).
pub fn project_all(scene: &Scene, sys: &SystemMatrix, q: &[f64]) -> Result<Vec<ElementProjection>> {
    par::try_map_range(sys.geoms.len(), |e| project_element(&sys.geoms[e], &scene.materials[e], q, e))
}

/// `f_int = −Σ wᵢ Gᵢᵀ(Gᵢq − pᵢ)` and `b = M q̂ + h² Σ wᵢ Gᵢᵀ pᵢ`.
pub fn internal_force_and_rhs(
    sys: &SystemMatrix,
    q: &[f64],
    qhat: &[f64],
    projections: &[ElementProjection],
) -> (Vec<f64>, Vec<f64>) {
    let n = q.len();
    let h2 = sys.h * sys.h;
    let locals: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(sys.geoms.len(), |e| {
        let g = &sys.geoms[e];
        let p = projections[e].vec_p();
        let diff: Vec<f64> = projections[e].f.as_slice().iter().zip(p).map(|(f, p)| f - p).collect();
        (g.gt_local(&diff), g.gt_local(p))
    });
    let mut f_int = vec![0.0; n];
    let mut b: Vec<f64> = qhat.iter().zip(&sys.mass).map(|(x, m)| m * x).collect();
    for (e, (gd, gp)) in locals.iter().enumerate() {
        let w = sys.weights[e];
        for (k, dof) in sys.geoms[e].dofs().into_iter().enumerate() {
            f_int[dof] -= w * gd[k];
            b[dof] += h2 * w * gp[k];
        }
    }
    (f_int, b)
}

/// `Σᵢ [ (wᵢ/2)‖Fᵢ − Pᵢ‖² + volᵢ ζ(θᵢ) ]`; its negative gradient is `f_int`.
pub fn elastic_energy(scene: &Scene, sys: &SystemMatrix, q: &[f64]) -> Result<f64> {
    let terms = par::try_map_range(sys.geoms.len(), |e| -> Result<f64> {
        let ep = project_element(&sys.geoms[e], &scene.materials[e], q, e)?;
        let pull = 0.5 * sys.weights[e] * (&ep.f - &ep.proj.p).norm_squared();
        let zeta = match ep.proj.model {
            MaterialModel::Arap => 0.0,
            MaterialModel::NeoHookean => {
                sys.geoms[e].measure * neohookean_density(&ep.proj.theta, ep.proj.mu, ep.proj.lambda)
            }
        };
        Ok(pull + zeta)
    })?;
    Ok(terms.iter().sum())
}
