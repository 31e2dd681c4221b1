//! Empirical verification of the convergence theory: contraction factor of
//! the iteration map versus the spectral radius of its Jacobian, constraint
//! decay order, gradient checking, and second-order sufficiency probing.
//!
//! Everything here is read-only over problems and traces, and second
//! differences appear only here; the solvers themselves use first
//! derivatives exclusively.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equality::equality_step;
use crate::model::{Point, Problem, ScalarFn, SolverError, Trace};

/// Fitted convergence behaviour of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Linear rate fitted on the tail of `|x_k - x*|`.
    pub rate: f64,
    /// Coefficient of determination of the log-error fit.
    pub r_squared: f64,
    /// Rate fitted on `|g(x_k)|`; `None` when the constraint residual is at
    /// machine level throughout (linear constraints are solved exactly).
    pub constraint_rate: Option<f64>,
    /// Slope ratio log|g| / log-error; ~2 is the expected decay order.
    pub decay_ratio: Option<f64>,
    /// Spectral radius estimate of the iteration map, when computed.
    pub spectral_radius: Option<f64>,
    pub errors: Vec<f64>,
    /// True when the log fit is clean (r^2 > 0.99) and the rate is in (0,1).
    pub verdict_linear: bool,
    /// True when the decay ratio lies in [1.7, 2.3].
    pub verdict_decay_order: bool,
}

/// Least-squares fit of `log(err_k) = a + k log(L)`; returns `(L, r^2)`.
pub fn fit_rate(errors: &[f64]) -> Option<(f64, f64)> {
    let points: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.0 && e.is_finite())
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope.exp(), r2))
}

const ERROR_FLOOR: f64 = 1e-14;
/// Final iterates are biased by using the last point as a proxy for x*;
/// they are excluded from the fit.
const PROXY_BIAS_SKIP: usize = 5;

/// Fit linear rates on the tail of a converged trace.
///
/// `x_star` may be the exact solution or the final iterate as a proxy; in
/// the latter case the last few tail points are biased and are dropped.
pub fn convergence_report(trace: &Trace, x_star: &Point) -> Result<ConvergenceReport, SolverError> {
    let errors: Vec<f64> = trace
        .iter()
        .map(|r| (DVector::from_vec(r.x.clone()) - x_star).norm())
        .collect();
    let usable: Vec<usize> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > ERROR_FLOOR)
        .map(|(k, _)| k)
        .collect();
    if usable.len() < 20 + PROXY_BIAS_SKIP {
        return Err(SolverError::InsufficientTail(format!(
            "{} usable iterations, need {}",
            usable.len(),
            20 + PROXY_BIAS_SKIP
        )));
    }
    let tail = &usable[usable.len() / 2..usable.len() - PROXY_BIAS_SKIP];
    let tail_errors: Vec<f64> = tail.iter().map(|&k| errors[k]).collect();
    let (rate, r_squared) =
        fit_rate(&tail_errors).ok_or_else(|| SolverError::InsufficientTail("degenerate fit".into()))?;

    // the constraint residual decays roughly twice as fast as the error and
    // reaches machine level much earlier, so it gets its own fit window
    let g_norms: Vec<f64> = trace
        .iter()
        .map(|r| {
            r.constraint_values
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let g_usable: Vec<f64> = g_norms
        .iter()
        .copied()
        .filter(|&g| g > ERROR_FLOOR)
        .collect();
    let constraint_rate = if g_usable.len() >= 15 {
        let g_tail = &g_usable[g_usable.len() / 2..g_usable.len() - PROXY_BIAS_SKIP];
        fit_rate(g_tail).map(|(l, _)| l)
    } else {
        None // solved to machine level almost immediately: decay slope is -inf
    };
    let decay_ratio = constraint_rate.map(|cl| cl.ln() / rate.ln());

    let verdict_linear = r_squared > 0.99 && rate > 0.0 && rate < 1.0;
    let verdict_decay_order = decay_ratio.is_some_and(|r| (1.7..=2.3).contains(&r));
    Ok(ConvergenceReport {
        rate,
        r_squared,
        constraint_rate,
        decay_ratio,
        spectral_radius: None,
        errors,
        verdict_linear,
        verdict_decay_order,
    })
}

/// Spectral radius of the Jacobian of the iteration map at `x_star`,
/// estimated by power iteration on central finite differences.
pub fn spectral_radius_iteration_map(
    p: &Problem,
    x_star: &Point,
    eta: f64,
) -> Result<f64, SolverError> {
    let n = p.n;
    let map = |x: &Point| -> Result<Point, SolverError> {
        Ok(equality_step(p, x, eta, 1e-12)?.0)
    };
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-6 * (1.0 + x_star[j].abs());
        let mut xp = x_star.clone();
        xp[j] += h;
        let mut xm = x_star.clone();
        xm[j] -= h;
        let col = (map(&xp)? - map(&xm)?) / (2.0 * h);
        jac.column_mut(j).copy_from(&col);
    }
    Ok(power_iteration(&jac, 200))
}

/// Deflation-free dominant-eigenvalue magnitude estimate.
fn power_iteration(a: &DMatrix<f64>, steps: usize) -> f64 {
    let n = a.nrows();
    // deterministic quasi-random start so results are reproducible
    let mut v = DVector::from_iterator(n, (0..n).map(|i| ((i * 2654435761 + 1) % 1000) as f64 / 1000.0 + 0.1));
    v /= v.norm();
    let mut rho = 0.0;
    for _ in 0..steps {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        rho = norm;
        v = w / norm;
    }
    rho
}

/// Max relative error between the analytic gradient of `f` and central
/// finite differences at `p`.
pub fn check_gradient(f: &dyn ScalarFn, p: &Point) -> f64 {
    let analytic = f.gradient(p);
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let h = 1e-6 * (1.0 + p[i].abs());
        let mut xp = p.clone();
        xp[i] += h;
        let mut xm = p.clone();
        xm[i] -= h;
        let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
        worst = worst.max((analytic[i] - fd).abs() / (1.0 + analytic[i].abs()));
    }
    worst
}

/// Smallest eigenvalue of the Lagrangian Hessian projected onto the tangent
/// space of the active constraints at `x_star`.
///
/// The Hessian is built by differencing gradients (the solvers never touch
/// it); the tangent basis comes from the SVD of the constraint Jacobian.
pub fn second_order_probe(
    p: &Problem,
    x_star: &Point,
    lambda_star: &[f64],
) -> Result<f64, SolverError> {
    if lambda_star.len() != p.constraints.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} multipliers for {} constraints",
            lambda_star.len(),
            p.constraints.len()
        )));
    }
    let n = p.n;
    let lagrangian_grad = |x: &Point| -> Point {
        let mut g = p.objective.gradient(x);
        for (c, &l) in p.constraints.iter().zip(lambda_star) {
            if l != 0.0 {
                g += c.gradient(x) * l;
            }
        }
        g
    };
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-6 * (1.0 + x_star[j].abs());
        let mut xp = x_star.clone();
        xp[j] += h;
        let mut xm = x_star.clone();
        xm[j] -= h;
        let col = (lagrangian_grad(&xp) - lagrangian_grad(&xm)) / (2.0 * h);
        hess.column_mut(j).copy_from(&col);
    }
    hess = (&hess + hess.transpose()) * 0.5;

    // active constraints: equalities plus inequalities carrying a multiplier
    let active: Vec<usize> = p
        .constraints
        .iter()
        .enumerate()
        .filter(|(i, c)| c.kind.is_equality() || lambda_star[*i] != 0.0)
        .map(|(i, _)| i)
        .collect();
    let projected = if active.is_empty() {
        hess
    } else {
        let mut dg = DMatrix::zeros(active.len(), n);
        for (row, &i) in active.iter().enumerate() {
            dg.row_mut(row)
                .copy_from(&p.constraints[i].gradient(x_star).transpose());
        }
        // kernel of Dg = eigenvectors of Dg^T Dg with (near-)zero eigenvalue
        let gram_n = dg.transpose() * &dg;
        let eig = gram_n.symmetric_eigen();
        let tol = 1e-10 * eig.eigenvalues.amax().max(1.0);
        let kernel: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] <= tol).collect();
        if kernel.is_empty() {
            return Err(SolverError::RankDeficient(
                "tangent space is trivial: as many independent constraints as variables".into(),
            ));
        }
        let mut basis = DMatrix::zeros(n, kernel.len());
        for (col, &j) in kernel.iter().enumerate() {
            basis.column_mut(col).copy_from(&eig.eigenvectors.column(j));
        }
        basis.transpose() * hess * basis
    };
    let eig = projected.symmetric_eigen();
    Ok(eig.eigenvalues.min())
}
