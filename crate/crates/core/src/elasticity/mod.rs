//! Local projections for ARAP and Neo-Hookean elements and their derivatives.
//!
//! Each element's projection `P` shares the singular basis of its deformation
//! gradient `F = U Σ Vᵀ`: `P = U Θ Vᵀ`, where `θ` minimises
//! `(w̃/2)‖θ − σ‖² + ζ(θ)`. Derivatives are taken of this projection map
//! directly rather than through the Hessian of the energy density.

mod force;
mod jacobian;
mod lame;
mod projection;
mod svd;

pub use force::{
    elastic_energy, internal_force_and_rhs, project_all, project_element, ElementProjection,
};
pub use jacobian::{d_matrix, proj_jacobian, t_matrix, ProjJacobian};
pub use lame::{lame_from_young, lame_jacobian};
pub use projection::{
    dp_dparams, neohookean_density, project, project_arap, project_neohookean, LameSensitivity,
    Projection,
};
pub use svd::{svd_polar, SvdTriple};

/// Relative singular-value gap below which the degenerate limits are used.
pub const TAU_SIGMA: f64 = 1e-6;
