//! Identification harness: parameter selectors, FD oracle, gradient
//! descent, convergence metrics and a library of procedural scenes.

pub mod bench;
pub mod metrics;
pub mod optimize;
pub mod problem;
pub mod scenes;

pub use metrics::{metrics, MetricsReport};
pub use optimize::{gradient_descent, optimize, OptTrace};
pub use problem::{fd_gradient, fd_gradient_fn, OptProblem, Target, Variable, DEFAULT_ETA};
