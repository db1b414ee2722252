//! Compile constrained optimization problems into analog KKT-solver circuits.
//!
//! The pipeline reads a problem (MPS or an AMPL subset), differentiates it
//! symbolically, compiles the gradient-flow dynamics for one of three dual
//! update methods, and then either synthesizes a SPICE netlist realizing
//! those dynamics or integrates them directly and certifies the settled
//! point against the KKT conditions.

pub mod expr;
pub mod frontends;
pub mod method;
pub mod netlist;
pub mod pipeline;
pub mod poly;
pub mod problem;
pub mod sim;
pub mod verify;

pub use expr::{EvalError, Expr, Func};
pub use problem::{
    differentiate, lagrangian_gradient, normalize, Bounds, GradientSet, Problem, ProblemError,
    RawProblem,
};
