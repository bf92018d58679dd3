//! Differentiable projective-dynamics simulation of deformable bodies with
//! smoothed frictional contact.
//!
//! The forward solver converges one implicit step of the coupled system
//! (elastic projections, soft bindings, Fischer–Burmeister contact rows); the
//! adjoint pass reuses the same linearisation to produce gradients of a loss
//! with respect to initial state, controls and material parameters.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod contact;
pub mod elasticity;
pub mod error;
pub mod forward;
pub mod ident;
pub mod linsolve;
pub mod par;
pub mod scene;
pub mod sparse;
pub mod state;
pub mod system;
pub mod vecops;

pub use error::{Result, SimError, SolverError};
pub use scene::{BindingSpec, Collider, ColliderKind, Element, MaterialModel, MaterialParams, Scene};
pub use sparse::CsrMatrix;
pub use state::SimState;
pub use system::{assemble_system_matrix, predict, SystemMatrix};
pub use forward::{forward_step, rollout, ForwardConfig, ForwardReport, Rollout};
pub use adjoint::{backprop_final_state, backprop_rollout, GradientReport};
