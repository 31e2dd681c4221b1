//! Constrained first-order optimization with Newton-type constraint
//! restoration.
//!
//! The solvers move along `x <- x - eta grad f - Dg^T lambda`, with the
//! multipliers chosen so a linearization of the active constraints is
//! restored exactly at each step. Inequality and box constraints are
//! handled by an active-set loop; minimax objectives by an epigraph
//! reformulation. The `elasticity` module applies the machinery to
//! designing planar materials with negative directional Poisson ratios.

pub mod active_set;
pub mod diagnostics;
pub mod elasticity;
pub mod equality;
pub mod expr;
pub mod minimax;
pub mod model;

pub use active_set::run_active_set;
pub use diagnostics::{
    check_gradient, convergence_report, fit_rate, second_order_probe,
    spectral_radius_iteration_map, ConvergenceReport,
};
pub use equality::{compute_multipliers, equality_step, newton_restore, run_equality,
    steepest_descent};
pub use expr::{parse, Expression};
pub use minimax::{epigraph_reformulate, run_minimax, MinimaxProblem, MinimaxResult};
pub use model::{
    Constraint, ConstraintKind, DeactivationPolicy, Event, IterationRecord, Point, Problem,
    ProblemSpec, ScalarFn, SolveResult, SolverConfig, SolverError, Status,
};
