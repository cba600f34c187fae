//! Optimization kernels used by the controller improvement step.

pub mod lp;
pub mod projection;

pub use lp::{solve as solve_lp, Constraint, LinearProgram, LpError, LpOutcome, Relation};
pub use projection::project_to_simplex;
