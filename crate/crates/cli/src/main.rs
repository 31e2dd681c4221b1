//! Batch front door: load problem files, run the solvers, write artifacts.
//!
//! Exit codes: 0 converged, 1 input error, 2 iteration budget exhausted (or
//! diagnosis inconclusive), 3 numerical failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use tangrad::diagnostics::{convergence_report, spectral_radius_iteration_map};
use tangrad::elasticity::{
    auxetic_start, build_auxetic_problem, stiffness_from_params, uniform_directions,
};
use tangrad::model::{validate, ConstraintKind, IterationRecord, Problem, ProblemSpec, Status};
use tangrad::{run_active_set, run_equality, run_minimax, SolveResult, SolverConfig};

#[derive(Parser)]
#[command(name = "tangrad", version, about = "Constrained first-order solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SolveFlags {
    /// Problem description (JSON)
    problem: PathBuf,
    /// Step size; overrides the problem file
    #[arg(long)]
    eta: Option<f64>,
    /// Stopping tolerance on the step norm; overrides the problem file
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration budget; overrides the problem file
    #[arg(long)]
    max_iters: Option<usize>,
    /// Write the result document here (JSON)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the full iteration trace here (JSON)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the per-iteration history here (CSV: k,f,gnorm,step,active_count)
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize a single objective under the problem file's constraints
    Solve(SolveFlags),
    /// Minimize the pointwise maximum of the problem file's objectives
    Minimax(SolveFlags),
    /// Design a planar material minimizing its largest directional Poisson
    /// ratio
    AuxeticDemo {
        /// Number of ring directions on [0, 180) degrees
        #[arg(long, default_value_t = 10)]
        directions: usize,
        #[arg(long, default_value_t = 0.02)]
        eta: f64,
        #[arg(long, default_value_t = 3000)]
        max_iters: usize,
        /// Write the result document here (JSON)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the full iteration trace here (JSON)
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the ratio history here (CSV: k,max_nu,min_nu)
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Fit the convergence rate of a recorded trace
    Diagnose {
        /// Trace file produced by `solve` (JSON)
        trace: PathBuf,
        /// The problem the trace came from (JSON)
        problem: PathBuf,
    },
}

const EXIT_INPUT: u8 = 1;
const EXIT_BUDGET: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve(f) => cmd_solve(&f),
        Command::Minimax(f) => cmd_minimax(&f),
        Command::AuxeticDemo {
            directions,
            eta,
            max_iters,
            out,
            trace,
            history,
        } => cmd_auxetic(directions, eta, max_iters, out, trace, history),
        Command::Diagnose { trace, problem } => cmd_diagnose(&trace, &problem),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn load_spec(path: &PathBuf) -> Result<ProblemSpec, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ProblemSpec::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn merged_config(spec: &ProblemSpec, flags: &SolveFlags) -> SolverConfig {
    // flags beat the file, the file beats the defaults
    let mut cfg = spec.config(SolverConfig::default());
    if let Some(eta) = flags.eta {
        cfg.eta = eta;
    }
    if let Some(tol) = flags.tol {
        cfg.tol = tol;
    }
    if let Some(n) = flags.max_iters {
        cfg.max_iters = n;
    }
    cfg
}

#[derive(Serialize)]
struct ResultDoc<'a> {
    status: Status,
    x: &'a [f64],
    multipliers: &'a [f64],
    kkt_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<(), String> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| format!("serializing: {e}"))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Residual norm of the constraint system: absolute value for equalities,
/// positive part for inequalities and bounds.
fn violation_norm(p: &Problem, record: &IterationRecord) -> f64 {
    record
        .constraint_values
        .iter()
        .zip(&p.constraints)
        .map(|(&g, c)| {
            if c.kind.is_equality() {
                g * g
            } else {
                g.max(0.0).powi(2)
            }
        })
        .sum::<f64>()
        .sqrt()
}

fn write_history(path: &PathBuf, p: &Problem, trace: &[IterationRecord]) -> Result<(), String> {
    let mut out = String::from("k,f,gnorm,step,active_count\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k,
            r.f,
            violation_norm(p, r),
            r.step_norm,
            r.active.len()
        ));
    }
    fs::write(path, out).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_artifacts(
    flags: &SolveFlags,
    p: &Problem,
    result: &SolveResult,
) -> Result<(), String> {
    if let Some(path) = &flags.out {
        write_json(
            path,
            &ResultDoc {
                status: result.status,
                x: result.x.as_slice(),
                multipliers: &result.multipliers,
                kkt_residual: result.kkt_residual,
                failure: result.failure.clone(),
            },
        )?;
    }
    if let Some(path) = &flags.trace {
        write_json(path, &result.trace)?;
    }
    if let Some(path) = &flags.history {
        write_history(path, p, &result.trace)?;
    }
    Ok(())
}

fn status_code(status: Status) -> u8 {
    match status {
        Status::Converged => 0,
        Status::MaxIterations => EXIT_BUDGET,
        Status::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn cmd_solve(flags: &SolveFlags) -> Result<u8, String> {
    let spec = load_spec(&flags.problem)?;
    let p = spec.to_problem().map_err(|e| e.to_string())?;
    let issues = validate(&p);
    if !issues.is_empty() {
        return Err(issues.join("; "));
    }
    let cfg = merged_config(&spec, flags);
    let equality_only = p
        .constraints
        .iter()
        .all(|c| matches!(c.kind, ConstraintKind::Equality));
    let result = if equality_only {
        run_equality(&p, &spec.x0(), &cfg)
    } else {
        run_active_set(&p, &spec.x0(), &cfg)
    };
    write_artifacts(flags, &p, &result)?;
    println!(
        "{}",
        serde_json::json!({
            "status": result.status,
            "x": result.x.as_slice(),
            "kkt_residual": result.kkt_residual,
            "iterations": result.trace.len(),
        })
    );
    Ok(status_code(result.status))
}

fn cmd_minimax(flags: &SolveFlags) -> Result<u8, String> {
    let spec = load_spec(&flags.problem)?;
    let mp = spec.to_minimax().map_err(|e| e.to_string())?;
    let cfg = merged_config(&spec, flags);
    let r = run_minimax(&mp, &spec.x0(), &cfg);
    let lifted = tangrad::epigraph_reformulate(&mp);
    write_artifacts(flags, &lifted, &r.solve)?;
    println!(
        "{}",
        serde_json::json!({
            "status": r.status,
            "x": r.x,
            "z": r.z,
            "objective_values": r.objective_values,
            "active_objectives": r.active_objectives,
            "objective_multipliers": r.objective_multipliers,
            "iterations": r.solve.trace.len(),
        })
    );
    Ok(status_code(r.status))
}

fn cmd_auxetic(
    directions: usize,
    eta: f64,
    max_iters: usize,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
    history: Option<PathBuf>,
) -> Result<u8, String> {
    if directions < 2 {
        return Err("--directions must be at least 2".into());
    }
    let mp = build_auxetic_problem(directions);
    let cfg = SolverConfig {
        eta,
        max_iters,
        tol: 1e-10,
        ..Default::default()
    };
    let r = run_minimax(&mp, &auxetic_start(), &cfg);

    let c_final = stiffness_from_params(&r.x).matrix;
    let angles: Vec<f64> = uniform_directions(directions)
        .iter()
        .map(|d| d.degrees)
        .collect();
    if let Some(path) = &out {
        write_json(
            path,
            &serde_json::json!({
                "status": r.status,
                "stiffness": [
                    [c_final[(0, 0)], c_final[(0, 1)], c_final[(0, 2)]],
                    [c_final[(1, 0)], c_final[(1, 1)], c_final[(1, 2)]],
                    [c_final[(2, 0)], c_final[(2, 1)], c_final[(2, 2)]],
                ],
                "factor": r.x,
                "angles_deg": angles,
                "poisson_ratios": r.objective_values,
                "active_directions": r.active_objectives,
                "direction_multipliers": r.objective_multipliers,
            }),
        )?;
    }
    if let Some(path) = &trace {
        write_json(path, &r.solve.trace)?;
    }
    if let Some(path) = &history {
        let mut csv = String::from("k,max_nu,min_nu\n");
        for rec in &r.solve.trace {
            let x = DVector::from_vec(rec.x[..mp.n].to_vec());
            let (mut max_nu, mut min_nu) = (f64::MIN, f64::MAX);
            for f in &mp.objectives {
                let v = f.value(&x);
                max_nu = max_nu.max(v);
                min_nu = min_nu.min(v);
            }
            csv.push_str(&format!("{},{max_nu},{min_nu}\n", rec.k));
        }
        fs::write(path, csv).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let max_nu = r.objective_values.iter().cloned().fold(f64::MIN, f64::max);
    println!(
        "{}",
        serde_json::json!({
            "status": r.status,
            "max_nu": max_nu,
            "poisson_ratios": r.objective_values,
            "iterations": r.solve.trace.len(),
        })
    );
    Ok(status_code(r.status))
}

fn cmd_diagnose(trace_path: &PathBuf, problem_path: &PathBuf) -> Result<u8, String> {
    let spec = load_spec(problem_path)?;
    let p = spec.to_problem().map_err(|e| e.to_string())?;
    let text =
        fs::read_to_string(trace_path).map_err(|e| format!("{}: {e}", trace_path.display()))?;
    let trace: Vec<IterationRecord> =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", trace_path.display()))?;
    let last = trace
        .last()
        .ok_or_else(|| "trace is empty".to_string())?;
    if last.x.len() != p.n {
        return Err(format!(
            "trace has {}-dimensional iterates but the problem has n = {}",
            last.x.len(),
            p.n
        ));
    }
    // the final iterate stands in for the limit; the report drops the last
    // few records to control the bias this introduces
    let x_star = DVector::from_vec(last.x.clone());
    let mut report = match convergence_report(&trace, &x_star) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_BUDGET);
        }
    };
    let equality_only = !p.constraints.is_empty()
        && p.constraints
            .iter()
            .all(|c| matches!(c.kind, ConstraintKind::Equality));
    if equality_only {
        let eta = spec.config(SolverConfig::default()).eta;
        report.spectral_radius = spectral_radius_iteration_map(&p, &x_star, eta).ok();
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
    );
    if report.verdict_linear && report.rate < 1.0 {
        Ok(0)
    } else {
        Ok(EXIT_BUDGET)
    }
}
