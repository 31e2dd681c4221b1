//! Browser bindings: a thin JSON-string API over the solver for the static
//! demo page. Every function takes a JSON request and returns a JSON
//! response; errors come back as `{"error": "..."}` so the page never
//! traps.

use nalgebra::DVector;
use serde::Deserialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use tangrad::elasticity::{
    auxetic_start, build_auxetic_problem, factor_from_params, poisson_ratio, Direction,
    ElasticTensor,
};
use tangrad::model::{ProblemSpec, SolverConfig};
use tangrad::{run_active_set, run_minimax};

fn err(message: impl std::fmt::Display) -> String {
    json!({ "error": message.to_string() }).to_string()
}

#[derive(Deserialize)]
struct PolarRequest {
    /// Lower-triangular factor entries (L11, L21, L22, L31, L32, L33) of
    /// the stiffness tensor.
    factor: [f64; 6],
    #[serde(default = "default_samples")]
    samples: usize,
}

fn default_samples() -> usize {
    360
}

/// Directional Poisson ratios of `C = L L^T`, sampled over a full turn for
/// a polar plot.
#[wasm_bindgen]
pub fn poisson_polar(request: &str) -> String {
    let req: PolarRequest = match serde_json::from_str(request) {
        Ok(r) => r,
        Err(e) => return err(e),
    };
    if req.samples < 8 || req.samples > 4096 {
        return err("samples must be in 8..=4096");
    }
    let l = factor_from_params(&req.factor);
    let d = match ElasticTensor::stiffness(l * l.transpose()).invert() {
        Ok(d) => d,
        Err(e) => return err(e),
    };
    let mut angles = Vec::with_capacity(req.samples);
    let mut ratios = Vec::with_capacity(req.samples);
    for i in 0..req.samples {
        let deg = 360.0 * i as f64 / req.samples as f64;
        match poisson_ratio(&d, Direction::new(deg)) {
            Ok(nu) => {
                angles.push(deg);
                ratios.push(nu);
            }
            Err(e) => return err(e),
        }
    }
    json!({ "angles_deg": angles, "ratios": ratios }).to_string()
}

#[derive(Deserialize)]
struct AuxeticRequest {
    #[serde(default = "default_directions")]
    directions: usize,
    #[serde(default = "default_eta")]
    eta: f64,
    #[serde(default = "default_iters")]
    max_iters: usize,
}

fn default_directions() -> usize {
    10
}
fn default_eta() -> f64 {
    0.02
}
fn default_iters() -> usize {
    1500
}

/// Run the auxetic design demo and return the max/min ratio history plus
/// the final design.
#[wasm_bindgen]
pub fn auxetic_history(request: &str) -> String {
    let req: AuxeticRequest = match serde_json::from_str(request) {
        Ok(r) => r,
        Err(e) => return err(e),
    };
    if req.directions < 2 || req.directions > 64 {
        return err("directions must be in 2..=64");
    }
    if !(req.eta > 0.0 && req.eta < 1.0) {
        return err("eta must be in (0, 1)");
    }
    if req.max_iters == 0 || req.max_iters > 20000 {
        return err("max_iters must be in 1..=20000");
    }
    let mp = build_auxetic_problem(req.directions);
    let cfg = SolverConfig {
        eta: req.eta,
        max_iters: req.max_iters,
        tol: 1e-10,
        ..Default::default()
    };
    let r = run_minimax(&mp, &auxetic_start(), &cfg);
    let mut max_nu = Vec::with_capacity(r.solve.trace.len());
    let mut min_nu = Vec::with_capacity(r.solve.trace.len());
    for rec in &r.solve.trace {
        let x = DVector::from_vec(rec.x[..mp.n].to_vec());
        let (mut hi, mut lo) = (f64::MIN, f64::MAX);
        for f in &mp.objectives {
            let v = f.value(&x);
            hi = hi.max(v);
            lo = lo.min(v);
        }
        max_nu.push(hi);
        min_nu.push(lo);
    }
    json!({
        "status": r.status,
        "factor": r.x,
        "poisson_ratios": r.objective_values,
        "active_directions": r.active_objectives,
        "max_nu": max_nu,
        "min_nu": min_nu,
    })
    .to_string()
}

/// Solve a 2-variable problem from the standard JSON schema and return the
/// iterate path for plotting.
#[wasm_bindgen]
pub fn solve_trace_2d(problem_json: &str) -> String {
    let spec: ProblemSpec = match ProblemSpec::from_json(problem_json) {
        Ok(s) => s,
        Err(e) => return err(e),
    };
    if spec.n != 2 {
        return err("the plotting demo only handles n = 2");
    }
    let p = match spec.to_problem() {
        Ok(p) => p,
        Err(e) => return err(e),
    };
    let mut cfg = spec.config(SolverConfig::default());
    cfg.max_iters = cfg.max_iters.min(5000);
    let r = run_active_set(&p, &spec.x0(), &cfg);
    let path: Vec<[f64; 2]> = std::iter::once([spec.x0[0], spec.x0[1]])
        .chain(r.trace.iter().map(|t| [t.x[0], t.x[1]]))
        .collect();
    let f_history: Vec<f64> = r.trace.iter().map(|t| t.f).collect();
    json!({
        "status": r.status,
        "x": r.x.as_slice(),
        "kkt_residual": r.kkt_residual,
        "path": path,
        "f_history": f_history,
    })
    .to_string()
}
