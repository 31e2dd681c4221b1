//! Equality-constrained minimization: a fixed-step gradient descent in the
//! directions tangent to the constraint set, combined with a Newton step in
//! the normal directions. Also carries the steepest-descent baseline and the
//! pseudoinverse Newton feasibility restoration used as a test oracle.

use nalgebra::{DMatrix, DVector};

use crate::model::{
    kkt_residual, Constraint, Event, IterationRecord, Point, Problem, SolveResult, SolverConfig,
    SolverError, Status,
};

/// Solve the multiplier Gram system `M lambda = rhs` with a relative
/// eigenvalue guard: the smallest eigenvalue must be at least
/// `rho_min * largest`, otherwise the point is not regular enough.
pub(crate) fn solve_gram(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rho_min: f64,
) -> Result<DVector<f64>, SolverError> {
    let m = gram.nrows();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    let eig = gram.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.amax();
    let min_eig = eig.eigenvalues.min();
    if !max_eig.is_finite() || min_eig < rho_min * max_eig {
        return Err(SolverError::RankDeficient(format!(
            "Gram eigenvalues span [{min_eig:.3e}, {max_eig:.3e}]"
        )));
    }
    // M = Q diag(w) Q^T  =>  lambda = Q diag(1/w) Q^T rhs
    let qt_rhs = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        m,
        qt_rhs.iter().zip(eig.eigenvalues.iter()).map(|(v, w)| v / w),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Stack constraint gradients as rows of the Jacobian `Dg`.
pub(crate) fn jacobian(constraints: &[&Constraint], x: &Point) -> DMatrix<f64> {
    let m = constraints.len();
    let n = x.len();
    let mut dg = DMatrix::zeros(m, n);
    for (i, c) in constraints.iter().enumerate() {
        dg.row_mut(i).copy_from(&c.gradient(x).transpose());
    }
    dg
}

/// Multipliers from the Newton-type condition `Dg(x) delta = -g(x)`:
/// solves `Dg(x) Dg(x)^T lambda = g(x) - eta Dg(x) grad_f(x)`.
pub fn compute_multipliers(
    p: &Problem,
    x: &Point,
    eta: f64,
    rho_min: f64,
) -> Result<DVector<f64>, SolverError> {
    let constraints: Vec<&Constraint> = p.constraints.iter().collect();
    let dg = jacobian(&constraints, x);
    let g = DVector::from_vec(p.constraint_values(x));
    let grad_f = p.objective.gradient(x);
    let gram = &dg * dg.transpose();
    let rhs = g - eta * (&dg * grad_f);
    solve_gram(&gram, &rhs, rho_min)
}

/// One iteration: `x_next = x - eta grad_f(x) - Dg(x)^T lambda`.
pub fn equality_step(
    p: &Problem,
    x: &Point,
    eta: f64,
    rho_min: f64,
) -> Result<(Point, DVector<f64>), SolverError> {
    let lambda = compute_multipliers(p, x, eta, rho_min)?;
    let grad_f = p.objective.gradient(x);
    let mut x_next = x - eta * grad_f;
    for (i, c) in p.constraints.iter().enumerate() {
        x_next -= c.gradient(x) * lambda[i];
    }
    Ok((x_next, lambda))
}

/// Run the equality-constrained iteration until the step norm drops below
/// `cfg.tol` or `cfg.max_iters` is reached.
pub fn run_equality(p: &Problem, x0: &Point, cfg: &SolverConfig) -> SolveResult {
    let mut x = x0.clone();
    let mut eta = cfg.eta;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut last_lambda = DVector::zeros(p.constraints.len());
    let active: Vec<usize> = (0..p.constraints.len()).collect();
    let mut status = Status::MaxIterations;
    let mut failure = None;
    let mut recent_steps: Vec<f64> = Vec::new();

    for k in 1..=cfg.max_iters {
        let mut events = Vec::new();
        let (x_next, lambda) = match equality_step(p, &x, eta, cfg.rho_min) {
            Ok(v) => v,
            Err(e) => {
                status = Status::NumericalFailure;
                failure = Some(e.to_string());
                break;
            }
        };
        let step_norm = (&x_next - &x).norm();
        if cfg.eta_halving {
            recent_steps.push(step_norm);
            if recent_steps.len() > 5 {
                recent_steps.remove(0);
                if step_norm > 10.0 * recent_steps[0] {
                    eta *= 0.5;
                    events.push(Event::EtaHalved { eta });
                    recent_steps.clear();
                }
            }
        }
        x = x_next;
        last_lambda = lambda.clone();
        trace.push(IterationRecord {
            k,
            x: x.as_slice().to_vec(),
            f: p.objective.value(&x),
            constraint_values: p.constraint_values(&x),
            active: active.clone(),
            multipliers: lambda.as_slice().to_vec(),
            step_norm,
            events,
        });
        if !step_norm.is_finite() {
            status = Status::NumericalFailure;
            failure = Some("step norm is not finite".into());
            break;
        }
        if step_norm < cfg.tol {
            status = Status::Converged;
            break;
        }
    }

    let recovered: Vec<f64> = last_lambda.iter().map(|l| l / eta).collect();
    let residual = kkt_residual(p, &x, &active, &recovered).unwrap_or(f64::NAN);
    SolveResult {
        x: x.as_slice().to_vec(),
        status,
        multipliers: recovered,
        kkt_residual: residual,
        failure,
        trace,
    }
}

/// Plain fixed-step steepest descent, `x <- x - eta grad_f(x)`.
pub fn steepest_descent(p: &Problem, x0: &Point, cfg: &SolverConfig) -> SolveResult {
    let mut x = x0.clone();
    let mut trace = Vec::new();
    let mut status = Status::MaxIterations;
    for k in 1..=cfg.max_iters {
        let step = -cfg.eta * p.objective.gradient(&x);
        let step_norm = step.norm();
        x += step;
        trace.push(IterationRecord {
            k,
            x: x.as_slice().to_vec(),
            f: p.objective.value(&x),
            constraint_values: vec![],
            active: vec![],
            multipliers: vec![],
            step_norm,
            events: vec![],
        });
        if !step_norm.is_finite() {
            status = Status::NumericalFailure;
            break;
        }
        if step_norm < cfg.tol {
            status = Status::Converged;
            break;
        }
    }
    let residual = p.objective.gradient(&x).amax();
    SolveResult {
        x: x.as_slice().to_vec(),
        status,
        multipliers: vec![],
        kkt_residual: residual,
        failure: None,
        trace,
    }
}

/// Newton iteration for the under-determined system `g(x) = 0`:
/// `x <- x - Dg(x)^+ g(x)` with `Dg^+ = Dg^T (Dg Dg^T)^{-1}`.
///
/// Returns a feasible point; used as the feasibility-restoration oracle.
pub fn newton_restore(
    constraints: &[Constraint],
    x0: &Point,
    cfg: &SolverConfig,
) -> Result<Point, SolverError> {
    let mut x = x0.clone();
    let refs: Vec<&Constraint> = constraints.iter().collect();
    for _ in 0..cfg.max_iters {
        let g = DVector::from_iterator(refs.len(), refs.iter().map(|c| c.value(&x)));
        if g.norm() < cfg.tol {
            return Ok(x);
        }
        let dg = jacobian(&refs, &x);
        let gram = &dg * dg.transpose();
        let y = solve_gram(&gram, &g, cfg.rho_min)?;
        x -= dg.transpose() * y;
    }
    Err(SolverError::InsufficientTail(
        "newton_restore did not reach feasibility".into(),
    ))
}
