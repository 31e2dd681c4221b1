//! Problem definition, solver configuration, KKT residual and iteration
//! traces shared by all solvers.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expression};

/// A point in variable space.
pub type Point = DVector<f64>;

/// A scalar function of `n` variables with an exact gradient.
///
/// Implementations must be pure: repeated evaluation at the same point gives
/// the same result, and evaluation is safe from multiple threads.
pub trait ScalarFn: Send + Sync {
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
}

/// Adapter for defining objectives and constraints from closures.
pub struct FnScalar<V, G>
where
    V: Fn(&Point) -> f64 + Send + Sync,
    G: Fn(&Point) -> Point + Send + Sync,
{
    pub value: V,
    pub gradient: G,
}

impl<V, G> ScalarFn for FnScalar<V, G>
where
    V: Fn(&Point) -> f64 + Send + Sync,
    G: Fn(&Point) -> Point + Send + Sync,
{
    fn value(&self, x: &Point) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &Point) -> Point {
        (self.gradient)(x)
    }
}

impl ScalarFn for Expression {
    fn value(&self, x: &Point) -> f64 {
        self.evaluate(x.as_slice())
            .unwrap_or(f64::NAN)
    }
    fn gradient(&self, x: &Point) -> Point {
        match self.gradient(x.as_slice()) {
            Ok(g) => DVector::from_vec(g),
            Err(_) => DVector::from_element(x.len(), f64::NAN),
        }
    }
}

/// What kind of constraint a `Constraint` represents.
///
/// Box kinds carry the 1-based variable index and the bound value; their
/// constraint function is `a_i - x_i` (lower) or `x_i - b_i` (upper).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Equality,
    Inequality,
    BoxLower { var: usize, bound: f64 },
    BoxUpper { var: usize, bound: f64 },
}

impl ConstraintKind {
    pub fn is_box(&self) -> bool {
        matches!(
            self,
            ConstraintKind::BoxLower { .. } | ConstraintKind::BoxUpper { .. }
        )
    }

    pub fn is_equality(&self) -> bool {
        matches!(self, ConstraintKind::Equality)
    }

    /// 1-based variable index for box kinds.
    pub fn box_var(&self) -> Option<usize> {
        match self {
            ConstraintKind::BoxLower { var, .. } | ConstraintKind::BoxUpper { var, .. } => {
                Some(*var)
            }
            _ => None,
        }
    }

    pub fn box_bound(&self) -> Option<f64> {
        match self {
            ConstraintKind::BoxLower { bound, .. } | ConstraintKind::BoxUpper { bound, .. } => {
                Some(*bound)
            }
            _ => None,
        }
    }
}

/// One constraint: a scalar function `g` plus how to interpret it
/// (`g = 0`, `g <= 0`, or a bound on a single variable).
#[derive(Clone)]
pub struct Constraint {
    pub kind: ConstraintKind,
    func: Arc<dyn ScalarFn>,
}

struct BoxFn {
    kind: ConstraintKind,
}

impl ScalarFn for BoxFn {
    fn value(&self, x: &Point) -> f64 {
        match self.kind {
            ConstraintKind::BoxLower { var, bound } => bound - x[var - 1],
            ConstraintKind::BoxUpper { var, bound } => x[var - 1] - bound,
            _ => unreachable!(),
        }
    }
    fn gradient(&self, x: &Point) -> Point {
        let mut g = DVector::zeros(x.len());
        match self.kind {
            ConstraintKind::BoxLower { var, .. } => g[var - 1] = -1.0,
            ConstraintKind::BoxUpper { var, .. } => g[var - 1] = 1.0,
            _ => unreachable!(),
        }
        g
    }
}

impl Constraint {
    pub fn equality(func: Arc<dyn ScalarFn>) -> Self {
        Constraint {
            kind: ConstraintKind::Equality,
            func,
        }
    }

    pub fn inequality(func: Arc<dyn ScalarFn>) -> Self {
        Constraint {
            kind: ConstraintKind::Inequality,
            func,
        }
    }

    /// Bound `x_var >= bound` (`var` is 1-based).
    pub fn box_lower(var: usize, bound: f64) -> Self {
        let kind = ConstraintKind::BoxLower { var, bound };
        Constraint {
            kind,
            func: Arc::new(BoxFn { kind }),
        }
    }

    /// Bound `x_var <= bound` (`var` is 1-based).
    pub fn box_upper(var: usize, bound: f64) -> Self {
        let kind = ConstraintKind::BoxUpper { var, bound };
        Constraint {
            kind,
            func: Arc::new(BoxFn { kind }),
        }
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.func.value(x)
    }

    pub fn gradient(&self, x: &Point) -> Point {
        self.func.gradient(x)
    }
}

/// A constrained minimization problem.
#[derive(Clone)]
pub struct Problem {
    /// Number of variables.
    pub n: usize,
    pub objective: Arc<dyn ScalarFn>,
    pub constraints: Vec<Constraint>,
    /// Optional cyclic neighbor order over a subset of the inequality
    /// constraints (0-based indices into `constraints`). Constraints on the
    /// ring are activated via the cluster/leader rule.
    pub ring: Option<Vec<usize>>,
}

impl Problem {
    pub fn new(n: usize, objective: Arc<dyn ScalarFn>) -> Self {
        Problem {
            n,
            objective,
            constraints: Vec::new(),
            ring: None,
        }
    }

    pub fn constraint_values(&self, x: &Point) -> Vec<f64> {
        self.constraints.iter().map(|c| c.value(x)).collect()
    }

    pub fn equality_indices(&self) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind.is_equality())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Policy for handling several negative multipliers in one deactivation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeactivationPolicy {
    /// Remove the most negative multiplier, resolve, repeat.
    MostNegative,
    /// Same removal rule, but emit a warning event when two or more
    /// multipliers go negative in a single pass.
    WarnOnMultiple,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Fixed step size, eta > 0.
    pub eta: f64,
    /// Stop when the step norm drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Relative eigenvalue guard for the multiplier Gram system.
    pub rho_min: f64,
    pub deactivation: DeactivationPolicy,
    /// Halve eta when a "going too fast" event fires.
    pub eta_halving: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eta: 0.1,
            tol: 1e-10,
            max_iters: 10_000,
            rho_min: 1e-12,
            deactivation: DeactivationPolicy::MostNegative,
            eta_halving: false,
        }
    }
}

/// Structured per-iteration events, asserted on by tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Activate { constraint: usize },
    Deactivate { constraint: usize },
    Project { constraint: usize, bound: f64 },
    WarnTooFast { count: usize },
    EtaHalved { eta: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub constraint_values: Vec<f64>,
    /// Active constraint indices, sorted.
    pub active: Vec<usize>,
    /// Multipliers, parallel to `active`.
    pub multipliers: Vec<f64>,
    pub step_norm: f64,
    pub events: Vec<Event>,
}

pub type Trace = Vec<IterationRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub status: Status,
    /// Recovered multipliers `lambda_final / eta`, one per constraint;
    /// inactive constraints report 0 (that value carries no meaning).
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    /// Set when the run aborted with `Status::NumericalFailure`.
    pub failure: Option<String>,
    pub trace: Trace,
}

impl SolveResult {
    pub fn final_point(&self) -> Point {
        DVector::from_vec(self.x.clone())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("constraint gradients are nearly dependent (not a regular point): {0}")]
    RankDeficient(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("active set of size {active} exceeds the number of variables {n}")]
    TooManyActive { active: usize, n: usize },
    #[error("trace tail too short for a rate fit: {0}")]
    InsufficientTail(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Max-norm KKT residual at `(x, lambda)` for the active set `active`.
///
/// Equality constraints always count as active: their `|g|` enters the
/// residual even if they are missing from `active` (with zero multiplier).
pub fn kkt_residual(
    p: &Problem,
    x: &Point,
    active: &[usize],
    lambda: &[f64],
) -> Result<f64, SolverError> {
    if active.len() != lambda.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} active indices but {} multipliers",
            active.len(),
            lambda.len()
        )));
    }
    if x.len() != p.n {
        return Err(SolverError::DimensionMismatch(format!(
            "point has dimension {} but problem has {}",
            x.len(),
            p.n
        )));
    }
    let mut stationarity = p.objective.gradient(x);
    let mut residual: f64 = 0.0;
    for (&i, &l) in active.iter().zip(lambda) {
        if i >= p.constraints.len() {
            return Err(SolverError::DimensionMismatch(format!(
                "active index {i} out of range"
            )));
        }
        let c = &p.constraints[i];
        stationarity += c.gradient(x) * l;
        residual = residual.max(c.value(x).abs());
        if !c.kind.is_equality() {
            residual = residual.max((-l).max(0.0));
        }
    }
    for (i, c) in p.constraints.iter().enumerate() {
        if active.contains(&i) {
            continue;
        }
        if c.kind.is_equality() {
            residual = residual.max(c.value(x).abs());
        } else {
            residual = residual.max(c.value(x).max(0.0));
        }
    }
    residual = residual.max(stationarity.amax());
    Ok(residual)
}

/// Validate a problem. Returns the full list of violations; empty means ok.
pub fn validate(p: &Problem) -> Vec<String> {
    let mut errors = Vec::new();
    let m_eq = p.equality_indices().len();
    if m_eq >= p.n {
        errors.push(format!(
            "m<n violated: {m_eq} equality constraints for {} variables",
            p.n
        ));
    }
    let mut lower = vec![f64::NEG_INFINITY; p.n + 1];
    let mut upper = vec![f64::INFINITY; p.n + 1];
    for (i, c) in p.constraints.iter().enumerate() {
        if let Some(var) = c.kind.box_var() {
            if var == 0 || var > p.n {
                errors.push(format!(
                    "constraint {i}: box variable index {var} out of range 1..={}",
                    p.n
                ));
                continue;
            }
            match c.kind {
                ConstraintKind::BoxLower { bound, .. } => {
                    lower[var] = lower[var].max(bound);
                }
                ConstraintKind::BoxUpper { bound, .. } => {
                    upper[var] = upper[var].min(bound);
                }
                _ => {}
            }
            if lower[var] > upper[var] {
                errors.push(format!(
                    "box bounds on x{var} are inconsistent: lower {} > upper {}",
                    lower[var], upper[var]
                ));
            }
        }
    }
    if let Some(ring) = &p.ring {
        let mut seen = vec![false; p.constraints.len()];
        for &i in ring {
            if i >= p.constraints.len() {
                errors.push(format!("ring index {i} out of range"));
            } else if seen[i] {
                errors.push(format!("ring index {i} repeated; ring must be a cycle"));
            } else {
                seen[i] = true;
                if p.constraints[i].kind != ConstraintKind::Inequality {
                    errors.push(format!(
                        "ring index {i} is not a general inequality constraint"
                    ));
                }
            }
        }
        if ring.len() < 3 {
            errors.push("ring must have at least 3 members".into());
        }
    }
    errors
}

// ---------------------------------------------------------------------------
// JSON problem schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub expr: String,
    /// "eq" or "ineq".
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSpec {
    /// 1-based variable index.
    pub var: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

/// On-disk problem description. `objective` holds a single expression for
/// `solve`; `objectives` holds the list for `minimax`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectives: Option<Vec<String>>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default, rename = "box")]
    pub box_bounds: Vec<BoxSpec>,
    /// Cyclic neighbor order: for `solve`, 0-based indices into
    /// `constraints`; for `minimax`, 0-based indices into `objectives`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<Vec<usize>>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("field `{field}`: {source}")]
    Expr {
        field: String,
        source: expr::ParseError,
    },
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        Ok(serde_json::from_str(text)?)
    }

    fn field_err(field: &str, message: impl Into<String>) -> SchemaError {
        SchemaError::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn parse_expr(field: String, text: &str, n: usize) -> Result<Expression, SchemaError> {
        let e = expr::parse(text).map_err(|source| SchemaError::Expr {
            field: field.clone(),
            source,
        })?;
        if e.max_var() > n {
            return Err(SchemaError::Field {
                field,
                message: format!("references x{} but n = {n}", e.max_var()),
            });
        }
        Ok(e)
    }

    fn common_checks(&self) -> Result<(), SchemaError> {
        if self.n == 0 {
            return Err(Self::field_err("n", "must be at least 1"));
        }
        if self.x0.len() != self.n {
            return Err(Self::field_err(
                "x0",
                format!("has {} entries but n = {}", self.x0.len(), self.n),
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Self::field_err("x0", "entries must be finite"));
        }
        Ok(())
    }

    fn box_constraints(&self) -> Result<Vec<Constraint>, SchemaError> {
        let mut out = Vec::new();
        for (i, b) in self.box_bounds.iter().enumerate() {
            if b.var == 0 || b.var > self.n {
                return Err(Self::field_err(
                    &format!("box[{i}].var"),
                    format!("index {} out of range 1..={}", b.var, self.n),
                ));
            }
            if b.lower.is_none() && b.upper.is_none() {
                return Err(Self::field_err(
                    &format!("box[{i}]"),
                    "needs at least one of `lower`, `upper`",
                ));
            }
            if let Some(a) = b.lower {
                out.push(Constraint::box_lower(b.var, a));
            }
            if let Some(bu) = b.upper {
                out.push(Constraint::box_upper(b.var, bu));
            }
        }
        Ok(out)
    }

    /// Build a single-objective `Problem` (for the `solve` command).
    pub fn to_problem(&self) -> Result<Problem, SchemaError> {
        self.common_checks()?;
        let obj_text = self
            .objective
            .as_ref()
            .ok_or_else(|| Self::field_err("objective", "missing"))?;
        let objective = Self::parse_expr("objective".into(), obj_text, self.n)?;
        let mut problem = Problem::new(self.n, Arc::new(objective));
        for (i, c) in self.constraints.iter().enumerate() {
            let e = Self::parse_expr(format!("constraints[{i}].expr"), &c.expr, self.n)?;
            let func: Arc<dyn ScalarFn> = Arc::new(e);
            problem.constraints.push(match c.kind.as_str() {
                "eq" => Constraint::equality(func),
                "ineq" => Constraint::inequality(func),
                other => {
                    return Err(Self::field_err(
                        &format!("constraints[{i}].kind"),
                        format!("expected \"eq\" or \"ineq\", got \"{other}\""),
                    ))
                }
            });
        }
        problem.constraints.extend(self.box_constraints()?);
        problem.ring = self.ring.clone();
        Ok(problem)
    }

    /// Build a `MinimaxProblem` (for the `minimax` command). A `ring`, if
    /// present, must list every objective index exactly once in cyclic
    /// order starting anywhere; only the natural order is supported.
    pub fn to_minimax(&self) -> Result<crate::minimax::MinimaxProblem, SchemaError> {
        self.common_checks()?;
        let texts = self
            .objectives
            .as_ref()
            .ok_or_else(|| Self::field_err("objectives", "missing"))?;
        if texts.is_empty() {
            return Err(Self::field_err("objectives", "must not be empty"));
        }
        let mut objectives: Vec<Arc<dyn ScalarFn>> = Vec::with_capacity(texts.len());
        for (i, t) in texts.iter().enumerate() {
            let e = Self::parse_expr(format!("objectives[{i}]"), t, self.n)?;
            objectives.push(Arc::new(e));
        }
        let ring = match &self.ring {
            None => false,
            Some(order) => {
                let rotations_ok = (0..order.len()).any(|s| {
                    order
                        .iter()
                        .cycle()
                        .skip(s)
                        .take(order.len())
                        .copied()
                        .eq(0..texts.len())
                });
                if order.len() != texts.len() || !rotations_ok {
                    return Err(Self::field_err(
                        "ring",
                        "must list every objective index exactly once in natural cyclic order",
                    ));
                }
                true
            }
        };
        let mut constraints = Vec::new();
        for (i, c) in self.constraints.iter().enumerate() {
            let e = Self::parse_expr(format!("constraints[{i}].expr"), &c.expr, self.n)?;
            let func: Arc<dyn ScalarFn> = Arc::new(e);
            constraints.push(match c.kind.as_str() {
                "eq" => Constraint::equality(func),
                "ineq" => Constraint::inequality(func),
                other => {
                    return Err(Self::field_err(
                        &format!("constraints[{i}].kind"),
                        format!("expected \"eq\" or \"ineq\", got \"{other}\""),
                    ))
                }
            });
        }
        constraints.extend(self.box_constraints()?);
        Ok(crate::minimax::MinimaxProblem {
            n: self.n,
            objectives,
            ring,
            constraints,
        })
    }

    pub fn config(&self, base: SolverConfig) -> SolverConfig {
        SolverConfig {
            eta: self.eta.unwrap_or(base.eta),
            tol: self.tol.unwrap_or(base.tol),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            ..base
        }
    }

    pub fn x0(&self) -> Point {
        DVector::from_vec(self.x0.clone())
    }
}
