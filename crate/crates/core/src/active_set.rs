//! Inequality and box constraints via an active-set strategy.
//!
//! Violated inequalities are activated and then treated like equality
//! constraints; a constraint is deactivated when its multiplier goes
//! negative. Box constraints are essential: the variable is projected onto
//! the bound on activation and held there while the constraint stays active,
//! and their multipliers are recovered by back-substitution from a reduced
//! Gram system posed over the free variables only.

use nalgebra::{DMatrix, DVector};

use crate::equality::solve_gram;
use crate::model::{
    kkt_residual, DeactivationPolicy, Event, IterationRecord, Point, Problem, SolveResult,
    SolverConfig, SolverError, Status,
};

/// Which constraints are currently treated as equalities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveSetState {
    /// Sorted active constraint indices.
    active: Vec<usize>,
}

impl ActiveSetState {
    /// Initial state for a problem: equality constraints are always active.
    pub fn initial(p: &Problem) -> Self {
        ActiveSetState {
            active: p.equality_indices(),
        }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn contains(&self, i: usize) -> bool {
        self.active.binary_search(&i).is_ok()
    }

    pub fn insert(&mut self, i: usize) {
        if let Err(pos) = self.active.binary_search(&i) {
            self.active.insert(pos, i);
        }
    }

    fn remove(&mut self, i: usize) {
        if let Ok(pos) = self.active.binary_search(&i) {
            self.active.remove(pos);
        }
    }

    /// 0-based variable indices blocked by active box constraints.
    pub fn blocked_vars(&self, p: &Problem) -> Vec<usize> {
        self.active
            .iter()
            .filter_map(|&i| p.constraints[i].kind.box_var())
            .map(|v| v - 1)
            .collect()
    }
}

/// Activate every violated constraint. Box violations additionally project
/// the variable onto the bound. Constraints on the declared ring follow the
/// cluster/leader rule: within each maximal ring-contiguous run of
/// violated-or-active members only the most violated one is active.
pub fn activate_violated(
    state: &ActiveSetState,
    p: &Problem,
    x: &Point,
) -> (ActiveSetState, Point, Vec<Event>) {
    let mut state = state.clone();
    let mut x = x.clone();
    let mut events = Vec::new();
    let ring = p.ring.clone().unwrap_or_default();

    for (i, c) in p.constraints.iter().enumerate() {
        if c.kind.is_equality() || ring.contains(&i) {
            continue;
        }
        let violated = c.value(&x) > 0.0;
        if violated && !state.contains(i) {
            state.insert(i);
            events.push(Event::Activate { constraint: i });
        }
        // Project box variables exactly onto the bound whenever active.
        if state.contains(i) {
            if let (Some(var), Some(bound)) = (c.kind.box_var(), c.kind.box_bound()) {
                if x[var - 1] != bound {
                    x[var - 1] = bound;
                    events.push(Event::Project {
                        constraint: i,
                        bound,
                    });
                }
            }
        }
    }

    if !ring.is_empty() {
        let flagged: Vec<bool> = ring
            .iter()
            .map(|&i| p.constraints[i].value(&x) > 0.0 || state.contains(i))
            .collect();
        let leaders = cluster_leaders(&ring, &flagged, |i| p.constraints[i].value(&x));
        for &i in &ring {
            let should_be_active = leaders.contains(&i);
            if should_be_active && !state.contains(i) {
                state.insert(i);
                events.push(Event::Activate { constraint: i });
            } else if !should_be_active && state.contains(i) {
                // leadership switched to a more violated neighbour
                state.remove(i);
                events.push(Event::Deactivate { constraint: i });
            }
        }
    }

    (state, x, events)
}

/// Leaders of maximal cyclically-contiguous runs of flagged ring members.
fn cluster_leaders<F: Fn(usize) -> f64>(
    ring: &[usize],
    flagged: &[bool],
    value: F,
) -> Vec<usize> {
    let n = ring.len();
    if flagged.iter().all(|&f| f) {
        // one cluster covering the whole ring
        return vec![*ring
            .iter()
            .max_by(|&&a, &&b| value(a).total_cmp(&value(b)))
            .unwrap()];
    }
    let mut leaders = Vec::new();
    let mut pos = 0;
    while pos < n {
        if !flagged[pos] {
            pos += 1;
            continue;
        }
        // only start a cluster at a run boundary (cyclic predecessor unflagged)
        if flagged[(pos + n - 1) % n] && pos > 0 {
            pos += 1;
            continue;
        }
        if pos == 0 && flagged[n - 1] {
            // this run wraps around; it will be picked up from its true start
            pos += 1;
            continue;
        }
        let mut leader = ring[pos];
        let mut best = value(ring[pos]);
        let mut q = (pos + 1) % n;
        while flagged[q] && q != pos {
            if value(ring[q]) > best {
                best = value(ring[q]);
                leader = ring[q];
            }
            q = (q + 1) % n;
        }
        leaders.push(leader);
        pos += 1;
        // skip the rest of this (non-wrapping part of the) run
        while pos < n && flagged[pos] {
            pos += 1;
        }
    }
    leaders
}

/// Multipliers for the current active set, parallel to `state.active()`.
///
/// Non-box multipliers solve the Gram system restricted to the free
/// variables; box multipliers are then recovered by back-substitution.
/// When no box constraint is active this is exactly the full system.
pub fn solve_reduced_multipliers(
    state: &ActiveSetState,
    p: &Problem,
    x: &Point,
    eta: f64,
    rho_min: f64,
) -> Result<Vec<f64>, SolverError> {
    let active = state.active();
    if active.len() > p.n {
        return Err(SolverError::TooManyActive {
            active: active.len(),
            n: p.n,
        });
    }
    let blocked = state.blocked_vars(p);
    let free: Vec<usize> = (0..p.n).filter(|j| !blocked.contains(j)).collect();

    let nonbox: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&i| !p.constraints[i].kind.is_box())
        .collect();

    let grad_f = p.objective.gradient(x);
    let grad_f_free = select(&grad_f, &free);

    // reduced Jacobian of the non-box active constraints over free variables
    let m2 = nonbox.len();
    let mut dg = DMatrix::zeros(m2, free.len());
    let mut g = DVector::zeros(m2);
    let mut full_grads = Vec::with_capacity(m2);
    for (row, &i) in nonbox.iter().enumerate() {
        let grad = p.constraints[i].gradient(x);
        dg.row_mut(row).copy_from(&select(&grad, &free).transpose());
        g[row] = p.constraints[i].value(x);
        full_grads.push(grad);
    }
    let gram = &dg * dg.transpose();
    let rhs = g - eta * (&dg * grad_f_free);
    let lambda_nonbox = solve_gram(&gram, &rhs, rho_min)?;

    let mut out = vec![0.0; active.len()];
    for (slot, &i) in active.iter().enumerate() {
        if let Some(row) = nonbox.iter().position(|&j| j == i) {
            out[slot] = lambda_nonbox[row];
        } else {
            // box constraint: lambda_j = s (-eta f_,i - sum_k lambda_k g_k,i)
            // where i is the blocked variable and s the sign of its gradient
            let var = p.constraints[i].kind.box_var().unwrap() - 1;
            let sign = p.constraints[i].gradient(x)[var];
            let mut acc = -eta * grad_f[var];
            for (row, grad) in full_grads.iter().enumerate() {
                acc -= lambda_nonbox[row] * grad[var];
            }
            out[slot] = sign * acc;
        }
    }
    Ok(out)
}

/// Repeatedly solve multipliers and drop the most negative inequality
/// multiplier until all are non-negative (equalities are exempt).
pub fn deactivation_loop(
    state: &ActiveSetState,
    p: &Problem,
    x: &Point,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<(ActiveSetState, Vec<f64>, Vec<Event>), SolverError> {
    let mut state = state.clone();
    let mut events = Vec::new();
    let mut warned = false;
    loop {
        let lambda = solve_reduced_multipliers(&state, p, x, eta, cfg.rho_min)?;
        let mut worst: Option<(usize, f64)> = None;
        let mut negatives = 0;
        for (slot, &i) in state.active().iter().enumerate() {
            if p.constraints[i].kind.is_equality() {
                continue;
            }
            let l = lambda[slot];
            if l < 0.0 {
                negatives += 1;
                // tie-break: strictly smaller multiplier wins, else lowest index
                let better = match worst {
                    None => true,
                    Some((_, w)) => l < w,
                };
                if better {
                    worst = Some((i, l));
                }
            }
        }
        if cfg.deactivation == DeactivationPolicy::WarnOnMultiple && negatives >= 2 && !warned {
            events.push(Event::WarnTooFast { count: negatives });
            warned = true;
        }
        match worst {
            Some((i, _)) => {
                state.remove(i);
                events.push(Event::Deactivate { constraint: i });
            }
            None => return Ok((state, lambda, events)),
        }
    }
}

/// Run the active-set iteration: activate, deactivate, then take the
/// combined gradient/Newton step with blocked box variables held fixed.
pub fn run_active_set(p: &Problem, x0: &Point, cfg: &SolverConfig) -> SolveResult {
    let mut x = x0.clone();
    let mut eta = cfg.eta;
    let mut state = ActiveSetState::initial(p);
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut status = Status::MaxIterations;
    let mut failure = None;
    let mut last: Option<(Vec<usize>, Vec<f64>)> = None;

    for k in 1..=cfg.max_iters {
        let (s1, x_proj, mut events) = activate_violated(&state, p, &x);
        let (s2, lambda, ev2) = match deactivation_loop(&s1, p, &x_proj, eta, cfg) {
            Ok(v) => v,
            Err(e) => {
                status = Status::NumericalFailure;
                failure = Some(e.to_string());
                break;
            }
        };
        events.extend(ev2);
        if cfg.eta_halving && events.iter().any(|e| matches!(e, Event::WarnTooFast { .. })) {
            eta *= 0.5;
            events.push(Event::EtaHalved { eta });
        }
        state = s2;

        let blocked = state.blocked_vars(p);
        let grad_f = p.objective.gradient(&x_proj);
        let mut x_next = &x_proj - eta * grad_f;
        for (slot, &i) in state.active().iter().enumerate() {
            x_next -= p.constraints[i].gradient(&x_proj) * lambda[slot];
        }
        // blocked variables are parameters: they receive no step
        for &j in &blocked {
            x_next[j] = x_proj[j];
        }
        let step_norm = (&x_next - &x_proj).norm();
        x = x_next;
        last = Some((state.active().to_vec(), lambda.clone()));
        trace.push(IterationRecord {
            k,
            x: x.as_slice().to_vec(),
            f: p.objective.value(&x),
            constraint_values: p.constraint_values(&x),
            active: state.active().to_vec(),
            multipliers: lambda,
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

    let mut multipliers = vec![0.0; p.constraints.len()];
    let (active, lambda) = last.unwrap_or_default();
    for (slot, &i) in active.iter().enumerate() {
        multipliers[i] = lambda[slot] / eta;
    }
    let active_lams: Vec<f64> = active.iter().map(|&i| multipliers[i]).collect();
    let residual = kkt_residual(p, &x, &active, &active_lams).unwrap_or(f64::NAN);
    SolveResult {
        x: x.as_slice().to_vec(),
        status,
        multipliers,
        kkt_residual: residual,
        failure,
        trace,
    }
}

fn select(v: &Point, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]))
}
