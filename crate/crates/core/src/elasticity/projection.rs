use nalgebra::{DMatrix, DVector};

use super::svd::SvdTriple;
use crate::error::{Result, SimError};
use crate::scene::{MaterialModel, MaterialParams};

const NEWTON_MAX_ITERS: usize = 50;

/// Projected singular values and derived quantities of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub model: MaterialModel,
    pub theta: DVector<f64>,
    /// `P = U Θ Vᵀ`.
    pub p: DMatrix<f64>,
    /// `W = ∂θ/∂σ`.
    pub w: DMatrix<f64>,
    /// Inverse Hessian of the local objective in θ (Neo-Hookean only).
    pub hess_inv: Option<DMatrix<f64>>,
    /// Lamé parameters and the pull weight w̃ used by the local problem.
    pub mu: f64,
    pub lambda: f64,
    pub wt: f64,
}

pub fn project_arap(svd: &SvdTriple) -> Projection {
    let d = svd.dim();
    Projection {
        model: MaterialModel::Arap,
        theta: DVector::from_element(d, 1.0),
        p: &svd.u * svd.v.transpose(),
        w: DMatrix::zeros(d, d),
        hess_inv: None,
        mu: 0.0,
        lambda: 0.0,
        wt: 0.0,
    }
}

/// `ζ(θ) = ½μ(Σθ² − d) − μ log J + ½λ (log J)²`, with `J = Πθ`.
pub fn neohookean_density(theta: &DVector<f64>, mu: f64, lambda: f64) -> f64 {
    let d = theta.len() as f64;
    let log_j: f64 = theta.iter().map(|t| t.ln()).sum();
    0.5 * mu * (theta.norm_squared() - d) - mu * log_j + 0.5 * lambda * log_j * log_j
}

fn nh_gradient(theta: &DVector<f64>, sigma: &DVector<f64>, mu: f64, lambda: f64, wt: f64) -> DVector<f64> {
    let log_j: f64 = theta.iter().map(|t| t.ln()).sum();
    DVector::from_fn(theta.len(), |i, _| {
        let t = theta[i];
        wt * (t - sigma[i]) + mu * (t - 1.0 / t) + lambda * log_j / t
    })
}

/// Inverse of `H = 𝒟 + λ u uᵀ`, `𝒟 = (w̃ + μ)I + (μ − λ log J)Θ⁻²`, `u = θ⁻¹`,
/// by Sherman–Morrison.
fn nh_hess_inv(theta: &DVector<f64>, mu: f64, lambda: f64, wt: f64) -> DMatrix<f64> {
    let n = theta.len();
    let log_j: f64 = theta.iter().map(|t| t.ln()).sum();
    let d_inv = DVector::from_fn(n, |i, _| 1.0 / (wt + mu + (mu - lambda * log_j) / (theta[i] * theta[i])));
    let u = theta.map(|t| 1.0 / t);
    let du = d_inv.component_mul(&u);
    let denom = 1.0 + lambda * u.dot(&du);
    DMatrix::from_diagonal(&d_inv) - (&du * du.transpose()) * (lambda / denom)
}

/// Solves the Neo-Hookean local problem `g(θ) = 0` by damped Newton from `θ = σ`.
pub fn project_neohookean(svd: &SvdTriple, mu: f64, lambda: f64, wt: f64) -> Result<Projection> {
    let sigma = &svd.sigma;
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(SimError::InvertedElement(usize::MAX));
    }
    let scale = wt.max(mu).max(lambda.abs()).max(1.0);
    let tol = 1e-10 * scale * 1e-3;
    let mut theta = sigma.clone();
    let mut g = nh_gradient(&theta, sigma, mu, lambda, wt);
    let mut gn = g.amax();
    for _ in 0..NEWTON_MAX_ITERS {
        if gn <= tol {
            break;
        }
        let step = -(nh_hess_inv(&theta, mu, lambda, wt) * &g);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &theta + &step * alpha;
            if trial.iter().all(|t| *t > 0.0) {
                let gt = nh_gradient(&trial, sigma, mu, lambda, wt);
                if gt.amax() < gn || alpha < 1e-6 {
                    theta = trial;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        let new_gn = g.amax();
        if !accepted || new_gn >= gn {
            break;
        }
        gn = new_gn;
    }
    if !(gn <= 1e-10 * scale) {
        return Err(SimError::ProjectionNotConverged { residual: gn });
    }
    let hess_inv = nh_hess_inv(&theta, mu, lambda, wt);
    let p = &svd.u * DMatrix::from_diagonal(&theta) * svd.v.transpose();
    Ok(Projection {
        model: MaterialModel::NeoHookean,
        w: &hess_inv * wt,
        hess_inv: Some(hess_inv),
        theta,
        p,
        mu,
        lambda,
        wt,
    })
}

/// Projection for an element's material, with `w̃ = 2μ` for Neo-Hookean.
pub fn project(svd: &SvdTriple, material: &MaterialParams) -> Result<Projection> {
    match material.model {
        MaterialModel::Arap => Ok(project_arap(svd)),
        MaterialModel::NeoHookean => {
            let (mu, lambda) = super::lame_from_young(material.young, material.nu);
            project_neohookean(svd, mu, lambda, 2.0 * mu)
        }
    }
}

/// Sensitivities of `P` with respect to the local-problem parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LameSensitivity {
    /// `∂P/∂μ` with the pull weight tied to `w̃ = 2μ`.
    pub dp_dmu: DMatrix<f64>,
    pub dp_dlambda: DMatrix<f64>,
    /// `∂P/∂w̃` at fixed `μ, λ`.
    pub dp_dwt: DMatrix<f64>,
}

/// `∂θ/∂x = −H⁻¹ ∂g/∂x`, with `∂g/∂μ = 3θ − 2σ − θ⁻¹` (tied weight),
/// `∂g/∂λ = log J · θ⁻¹`, `∂g/∂w̃ = θ − σ`; then `∂P/∂x = U Diag(∂θ/∂x) Vᵀ`.
/// Zero for ARAP.
pub fn dp_dparams(svd: &SvdTriple, proj: &Projection) -> LameSensitivity {
    let (d, dim) = (svd.dim(), svd.u.nrows());
    let Some(hinv) = &proj.hess_inv else {
        let z = DMatrix::zeros(dim, d);
        return LameSensitivity { dp_dmu: z.clone(), dp_dlambda: z.clone(), dp_dwt: z };
    };
    let theta = &proj.theta;
    let sigma = &svd.sigma;
    let log_j: f64 = theta.iter().map(|t| t.ln()).sum();
    let g_mu = DVector::from_fn(d, |i, _| 3.0 * theta[i] - 2.0 * sigma[i] - 1.0 / theta[i]);
    let g_la = theta.map(|t| log_j / t);
    let g_wt = theta - sigma;
    let lift = |gx: DVector<f64>| {
        let dt = -(hinv * gx);
        &svd.u * DMatrix::from_diagonal(&dt) * svd.v.transpose()
    };
    LameSensitivity { dp_dmu: lift(g_mu), dp_dlambda: lift(g_la), dp_dwt: lift(g_wt) }
}
