//! Directional Poisson ratios of anisotropic 2D elastic tensors.
//!
//! Symmetric 2x2 stresses and strains are represented as 3-vectors in the
//! orthonormal basis f1 = [[1,0],[0,0]], f2 = [[0,0],[0,1]],
//! f3 = (1/sqrt 2) [[0,1],[1,0]], so that the matrix inner product equals
//! the 3-vector dot product and 2D elastic tensors become symmetric 3x3
//! matrices. The module also builds the parametrized auxetic design demo:
//! minimize the largest Poisson ratio over a ring of directions.

use std::sync::Arc;

use nalgebra::{DVector, Matrix3, Vector3};

use crate::minimax::MinimaxProblem;
use crate::model::{Constraint, FnScalar, Point, ScalarFn, SolverError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Maps strain to stress (C).
    Stiffness,
    /// Maps stress to strain (D = C^-1).
    Compliance,
}

/// A symmetric positive-definite 3x3 matrix in the f-basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticTensor {
    pub matrix: Matrix3<f64>,
    pub role: TensorRole,
}

impl ElasticTensor {
    pub fn new(matrix: Matrix3<f64>, role: TensorRole) -> Self {
        debug_assert!((matrix - matrix.transpose()).amax() < 1e-14);
        ElasticTensor { matrix, role }
    }

    pub fn stiffness(matrix: Matrix3<f64>) -> Self {
        Self::new(matrix, TensorRole::Stiffness)
    }

    pub fn compliance(matrix: Matrix3<f64>) -> Self {
        Self::new(matrix, TensorRole::Compliance)
    }

    /// Invert; the role flips. Fails unless positive definite.
    pub fn invert(&self) -> Result<ElasticTensor, SolverError> {
        let chol = self
            .matrix
            .cholesky()
            .ok_or(SolverError::NotPositiveDefinite)?;
        let inv = chol.inverse();
        let role = match self.role {
            TensorRole::Stiffness => TensorRole::Compliance,
            TensorRole::Compliance => TensorRole::Stiffness,
        };
        Ok(ElasticTensor::new((inv + inv.transpose()) * 0.5, role))
    }
}

/// A direction in the plane, by angle in degrees. 0 and 180 describe the
/// same axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub degrees: f64,
}

impl Direction {
    pub fn new(degrees: f64) -> Self {
        Direction { degrees }
    }

    pub fn unit_vector(&self) -> (f64, f64) {
        let rad = self.degrees.to_radians();
        (rad.cos(), rad.sin())
    }
}

/// f-basis coordinates of the unit uniaxial stresses along `v` and
/// `v_perp`: sigma = (v1^2, v2^2, sqrt2 v1 v2),
/// sigma_perp = (v2^2, v1^2, -sqrt2 v1 v2).
pub fn stress_of_direction(d: Direction) -> (Vector3<f64>, Vector3<f64>) {
    let (v1, v2) = d.unit_vector();
    let s = std::f64::consts::SQRT_2 * v1 * v2;
    (
        Vector3::new(v1 * v1, v2 * v2, s),
        Vector3::new(v2 * v2, v1 * v1, -s),
    )
}

/// Poisson ratio of a compliance tensor in direction `d`:
/// `nu = -<D sigma, sigma_perp> / <D sigma, sigma>`.
pub fn poisson_ratio(d_tensor: &ElasticTensor, d: Direction) -> Result<f64, SolverError> {
    let (sigma, sigma_perp) = stress_of_direction(d);
    let ds = d_tensor.matrix * sigma;
    let denom = ds.dot(&sigma);
    if denom <= 0.0 {
        return Err(SolverError::NotPositiveDefinite);
    }
    Ok(-ds.dot(&sigma_perp) / denom)
}

/// Gradient of the Poisson ratio with respect to the (symmetric) compliance
/// tensor, as a symmetric 3x3 matrix in the f-basis.
pub fn poisson_gradient_compliance(
    d_tensor: &ElasticTensor,
    d: Direction,
) -> Result<Matrix3<f64>, SolverError> {
    let (sigma, sigma_perp) = stress_of_direction(d);
    let ds = d_tensor.matrix * sigma;
    let denom = ds.dot(&sigma);
    if denom <= 0.0 {
        return Err(SolverError::NotPositiveDefinite);
    }
    let num = ds.dot(&sigma_perp);
    let cross = sigma * sigma_perp.transpose();
    let sym_cross = (cross + cross.transpose()) * 0.5;
    let outer = sigma * sigma.transpose();
    Ok(-sym_cross / denom + outer * (num / (denom * denom)))
}

/// Directional derivative of the Poisson ratio under a stiffness
/// perturbation `delta_c`, chained through `dD = -D dC D`.
pub fn chain_to_stiffness(
    d_tensor: &ElasticTensor,
    grad_wrt_d: &Matrix3<f64>,
    delta_c: &Matrix3<f64>,
) -> f64 {
    let dd = -d_tensor.matrix * delta_c * d_tensor.matrix;
    grad_wrt_d.dot(&dd)
}

// ---------------------------------------------------------------------------
// Cholesky-factor parametrization and the auxetic demo problem
// ---------------------------------------------------------------------------

/// Lower bound on the diagonal factor entries; keeps C = L L^T positive
/// definite with a margin.
pub const DIAG_MARGIN: f64 = 0.05;
/// Trace normalization for C; removes the scale invariance of nu.
pub const TRACE_TARGET: f64 = 3.0;

/// Lower-triangular factor from the 6 parameters
/// `(L11, L21, L22, L31, L32, L33)`.
pub fn factor_from_params(x: &[f64]) -> Matrix3<f64> {
    Matrix3::new(
        x[0], 0.0, 0.0, //
        x[1], x[2], 0.0, //
        x[3], x[4], x[5],
    )
}

pub fn stiffness_from_params(x: &[f64]) -> ElasticTensor {
    let l = factor_from_params(x);
    ElasticTensor::stiffness(l * l.transpose())
}

/// Poisson ratio in one direction as a function of the 6 factor
/// parameters, with the analytic gradient chained through
/// `dC = dL L^T + L dL^T` and `dD = -D dC D`.
struct PoissonObjective {
    sigma: Vector3<f64>,
    sigma_perp: Vector3<f64>,
}

// parameter slot -> (row, col) of the factor
const PARAM_POS: [(usize, usize); 6] = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)];

impl ScalarFn for PoissonObjective {
    fn value(&self, x: &Point) -> f64 {
        let l = factor_from_params(x.as_slice());
        let c = l * l.transpose();
        match ElasticTensor::stiffness(c).invert() {
            Ok(d) => {
                let ds = d.matrix * self.sigma;
                let denom = ds.dot(&self.sigma);
                if denom <= 0.0 {
                    return f64::NAN;
                }
                -ds.dot(&self.sigma_perp) / denom
            }
            Err(_) => f64::NAN,
        }
    }

    fn gradient(&self, x: &Point) -> Point {
        let l = factor_from_params(x.as_slice());
        let c = l * l.transpose();
        let d = match ElasticTensor::stiffness(c).invert() {
            Ok(d) => d,
            Err(_) => return DVector::from_element(x.len(), f64::NAN),
        };
        let ds = d.matrix * self.sigma;
        let denom = ds.dot(&self.sigma);
        let num = ds.dot(&self.sigma_perp);
        let cross = self.sigma * self.sigma_perp.transpose();
        let grad_d =
            -(cross + cross.transpose()) * 0.5 / denom
                + self.sigma * self.sigma.transpose() * (num / (denom * denom));
        // <grad_d, -D dC D> = -<D grad_d D, dC>; and <W, dC/dL_rc> = 2 (W L)_rc
        let w = d.matrix * grad_d * d.matrix;
        let wl = w * l;
        let mut out = DVector::zeros(x.len());
        for (slot, &(r, c)) in PARAM_POS.iter().enumerate() {
            out[slot] = -2.0 * wl[(r, c)];
        }
        out
    }
}

/// Poisson-ratio objective for one direction over the 6 factor parameters.
pub fn poisson_objective(d: Direction) -> Arc<dyn ScalarFn> {
    let (sigma, sigma_perp) = stress_of_direction(d);
    Arc::new(PoissonObjective { sigma, sigma_perp })
}

/// `k` directions uniformly spaced on [0, 180) degrees.
pub fn uniform_directions(k: usize) -> Vec<Direction> {
    (0..k)
        .map(|i| Direction::new(180.0 * i as f64 / k as f64))
        .collect()
}

/// Minimize the largest Poisson ratio over `k` directions (ring topology),
/// over the Cholesky-factor parametrization of the stiffness tensor, with
/// diagonal lower bounds and the trace-normalization equality constraint.
pub fn build_auxetic_problem(k: usize) -> MinimaxProblem {
    assert!(k >= 2, "need at least two directions");
    let objectives: Vec<Arc<dyn ScalarFn>> = uniform_directions(k)
        .into_iter()
        .map(poisson_objective)
        .collect();
    let trace_constraint: Arc<dyn ScalarFn> = Arc::new(FnScalar {
        value: |x: &Point| x.iter().take(6).map(|v| v * v).sum::<f64>() - TRACE_TARGET,
        gradient: |x: &Point| {
            let mut g = DVector::zeros(x.len());
            for i in 0..6 {
                g[i] = 2.0 * x[i];
            }
            g
        },
    });
    let mut constraints = vec![Constraint::equality(trace_constraint)];
    for var in [1, 3, 6] {
        constraints.push(Constraint::box_lower(var, DIAG_MARGIN));
    }
    MinimaxProblem {
        n: 6,
        objectives,
        ring: k >= 3,
        constraints,
    }
}

/// Start at the identity factor: C = I, every Poisson ratio 0.
pub fn auxetic_start() -> Point {
    DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
}
