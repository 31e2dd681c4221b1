//! Minimax problems `min_x max{f_1(x), ..., f_m(x)}` via the epigraph trick:
//! append a new variable `z`, minimize `F(x, z) = z` subject to
//! `f_i(x) <= z`, and hand the result to the active-set solver.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::active_set::run_active_set;
use crate::model::{
    Constraint, ConstraintKind, Point, Problem, ScalarFn, SolveResult, SolverConfig, Status,
};

#[derive(Clone)]
pub struct MinimaxProblem {
    /// Dimension of `x` (the lifted problem has `n + 1` variables).
    pub n: usize,
    pub objectives: Vec<Arc<dyn ScalarFn>>,
    /// Treat the objectives as a cyclic almost-continuum: only per-cluster
    /// leaders activate.
    pub ring: bool,
    /// Constraints on `x` passed through to the lifted problem unchanged.
    pub constraints: Vec<Constraint>,
}

/// `f_i(x) - z` with gradient `(grad f_i(x), -1)`.
struct LiftedObjective {
    n: usize,
    inner: Arc<dyn ScalarFn>,
}

impl ScalarFn for LiftedObjective {
    fn value(&self, xz: &Point) -> f64 {
        let x = xz.rows(0, self.n).into_owned();
        self.inner.value(&x) - xz[self.n]
    }
    fn gradient(&self, xz: &Point) -> Point {
        let x = xz.rows(0, self.n).into_owned();
        let g = self.inner.gradient(&x);
        let mut out = DVector::zeros(self.n + 1);
        out.rows_mut(0, self.n).copy_from(&g);
        out[self.n] = -1.0;
        out
    }
}

/// A function of `x` evaluated in the lifted `(x, z)` space; no z-dependence.
struct LiftedPassThrough {
    n: usize,
    inner: Arc<dyn ScalarFn>,
}

impl ScalarFn for LiftedPassThrough {
    fn value(&self, xz: &Point) -> f64 {
        let x = xz.rows(0, self.n).into_owned();
        self.inner.value(&x)
    }
    fn gradient(&self, xz: &Point) -> Point {
        let x = xz.rows(0, self.n).into_owned();
        let g = self.inner.gradient(&x);
        let mut out = DVector::zeros(self.n + 1);
        out.rows_mut(0, self.n).copy_from(&g);
        out
    }
}

struct Epigraph {
    n: usize,
}

impl ScalarFn for Epigraph {
    fn value(&self, xz: &Point) -> f64 {
        xz[self.n]
    }
    fn gradient(&self, _xz: &Point) -> Point {
        let mut g = DVector::zeros(self.n + 1);
        g[self.n] = 1.0;
        g
    }
}

/// Lift a minimax problem into an `(n + 1)`-dimensional constrained problem.
///
/// Objective `i` becomes constraint `i` (`f_i(x) - z <= 0`); pass-through
/// constraints follow with unchanged meaning. Box constraints keep their
/// variable indices since `z` is appended as coordinate `n + 1`.
pub fn epigraph_reformulate(mp: &MinimaxProblem) -> Problem {
    let n = mp.n;
    let mut problem = Problem::new(n + 1, Arc::new(Epigraph { n }));
    for f in &mp.objectives {
        problem.constraints.push(Constraint::inequality(Arc::new(
            LiftedObjective {
                n,
                inner: Arc::clone(f),
            },
        )));
    }
    for c in &mp.constraints {
        let lifted = match c.kind {
            ConstraintKind::BoxLower { var, bound } => Constraint::box_lower(var, bound),
            ConstraintKind::BoxUpper { var, bound } => Constraint::box_upper(var, bound),
            _ => {
                let inner = LiftedPassThrough {
                    n,
                    inner: constraint_fn(c),
                };
                if c.kind.is_equality() {
                    Constraint::equality(Arc::new(inner))
                } else {
                    Constraint::inequality(Arc::new(inner))
                }
            }
        };
        problem.constraints.push(lifted);
    }
    if mp.ring {
        problem.ring = Some((0..mp.objectives.len()).collect());
    }
    problem
}

fn constraint_fn(c: &Constraint) -> Arc<dyn ScalarFn> {
    struct Wrap(Constraint);
    impl ScalarFn for Wrap {
        fn value(&self, x: &Point) -> f64 {
            self.0.value(x)
        }
        fn gradient(&self, x: &Point) -> Point {
            self.0.gradient(x)
        }
    }
    Arc::new(Wrap(c.clone()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimaxResult {
    pub x: Vec<f64>,
    pub z: f64,
    pub status: Status,
    pub objective_values: Vec<f64>,
    /// Objectives active at the final iterate (0-based).
    pub active_objectives: Vec<usize>,
    /// Recovered multipliers of the lifted objective constraints.
    pub objective_multipliers: Vec<f64>,
    pub solve: SolveResult,
}

/// Reformulate and delegate to the active-set solver. The initial `z` is
/// `max_i f_i(x0)`, so no lifted constraint is violated at the start.
pub fn run_minimax(mp: &MinimaxProblem, x0: &Point, cfg: &SolverConfig) -> MinimaxResult {
    let problem = epigraph_reformulate(mp);
    let z0 = mp
        .objectives
        .iter()
        .map(|f| f.value(x0))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut xz0 = DVector::zeros(mp.n + 1);
    xz0.rows_mut(0, mp.n).copy_from(x0);
    xz0[mp.n] = z0;

    let solve = run_active_set(&problem, &xz0, cfg);
    let x: Vec<f64> = solve.x[..mp.n].to_vec();
    let z = solve.x[mp.n];
    let xp = DVector::from_vec(x.clone());
    let objective_values: Vec<f64> = mp.objectives.iter().map(|f| f.value(&xp)).collect();
    let final_active = solve
        .trace
        .last()
        .map(|r| r.active.clone())
        .unwrap_or_default();
    let active_objectives: Vec<usize> = final_active
        .iter()
        .copied()
        .filter(|&i| i < mp.objectives.len())
        .collect();
    let objective_multipliers = solve.multipliers[..mp.objectives.len()].to_vec();
    MinimaxResult {
        x,
        z,
        status: solve.status,
        objective_values,
        active_objectives,
        objective_multipliers,
        solve,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use approx::assert_relative_eq;

    fn expr_fn(s: &str) -> Arc<dyn ScalarFn> {
        Arc::new(parse(s).unwrap())
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn single_objective_reduces_to_plain_minimization() {
        let mp = MinimaxProblem {
            n: 1,
            objectives: vec![expr_fn("x1^2")],
            ring: false,
            constraints: vec![],
        };
        let x0 = DVector::from_vec(vec![0.7]);
        let r = run_minimax(&mp, &x0, &cfg());
        assert_eq!(r.status, Status::Converged);
        assert!(r.x[0].abs() < 1e-6);
        assert!(r.z.abs() < 1e-6);
    }

    #[test]
    fn two_parabola_fixture() {
        let mp = MinimaxProblem {
            n: 1,
            objectives: vec![expr_fn("(x1 - 1)^2"), expr_fn("(x1 + 1)^2")],
            ring: false,
            constraints: vec![],
        };
        let x0 = DVector::from_vec(vec![0.4]);
        let r = run_minimax(&mp, &x0, &cfg());
        assert_eq!(r.status, Status::Converged);
        assert!(r.x[0].abs() < 1e-6, "x = {}", r.x[0]);
        assert_relative_eq!(r.z, 1.0, epsilon = 1e-5);
        assert_eq!(r.active_objectives, vec![0, 1]);
        assert_relative_eq!(r.objective_multipliers[0], 0.5, epsilon = 1e-5);
        assert_relative_eq!(r.objective_multipliers[1], 0.5, epsilon = 1e-5);
    }

    #[test]
    fn piecewise_linear_symmetric() {
        let mp = MinimaxProblem {
            n: 1,
            objectives: vec![expr_fn("x1"), expr_fn("-x1")],
            ring: false,
            constraints: vec![],
        };
        let x0 = DVector::from_vec(vec![0.3]);
        let r = run_minimax(&mp, &x0, &cfg());
        assert_eq!(r.status, Status::Converged);
        assert!(r.x[0].abs() < 1e-8);
        assert!(r.z.abs() < 1e-8);
    }

    #[test]
    fn dominated_objectives_change_nothing() {
        // strictly dominated objectives never activate
        let single = MinimaxProblem {
            n: 1,
            objectives: vec![expr_fn("x1^2")],
            ring: false,
            constraints: vec![],
        };
        let many = MinimaxProblem {
            n: 1,
            objectives: vec![expr_fn("x1^2"), expr_fn("x1^2 - 1"), expr_fn("x1^2 - 2")],
            ring: false,
            constraints: vec![],
        };
        let x0 = DVector::from_vec(vec![0.9]);
        let a = run_minimax(&single, &x0, &cfg());
        let b = run_minimax(&many, &x0, &cfg());
        assert!((a.x[0] - b.x[0]).abs() < 1e-8);
        assert!((a.z - b.z).abs() < 1e-8);
        assert_eq!(b.active_objectives, vec![0]);
    }

    #[test]
    fn max_constraint_active_at_convergence() {
        let mp = MinimaxProblem {
            n: 2,
            objectives: vec![expr_fn("(x1 - 1)^2 + x2^2"), expr_fn("(x1 + 1)^2 + x2^2")],
            ring: false,
            constraints: vec![],
        };
        let x0 = DVector::from_vec(vec![0.3, 0.8]);
        let c = cfg();
        let r = run_minimax(&mp, &x0, &c);
        assert_eq!(r.status, Status::Converged);
        let max_f = r.objective_values.iter().cloned().fold(f64::MIN, f64::max);
        assert!((r.z - max_f).abs() <= 10.0 * c.tol.max(1e-9));
        assert!(!r.active_objectives.is_empty());
    }

    #[test]
    fn constant_shift_moves_z_only() {
        let base = MinimaxProblem {
            n: 1,
            objectives: vec![expr_fn("(x1 - 1)^2"), expr_fn("(x1 + 1)^2")],
            ring: false,
            constraints: vec![],
        };
        let shifted = MinimaxProblem {
            n: 1,
            objectives: vec![expr_fn("(x1 - 1)^2 + 3"), expr_fn("(x1 + 1)^2 + 3")],
            ring: false,
            constraints: vec![],
        };
        let x0 = DVector::from_vec(vec![0.25]);
        let a = run_minimax(&base, &x0, &cfg());
        let b = run_minimax(&shifted, &x0, &cfg());
        assert!((a.x[0] - b.x[0]).abs() < 1e-7);
        assert_relative_eq!(b.z - a.z, 3.0, epsilon = 1e-7);
    }
}
