//! End-to-end acceptance checks. Each test prints a single pass line;
//! a panic marks the corresponding criterion as failed.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Matrix3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tangrad::active_set::{solve_reduced_multipliers, ActiveSetState};
use tangrad::diagnostics::{convergence_report, fit_rate, second_order_probe};
use tangrad::elasticity::{
    auxetic_start, build_auxetic_problem, chain_to_stiffness, poisson_gradient_compliance,
    poisson_ratio, Direction, ElasticTensor, DIAG_MARGIN, TRACE_TARGET,
};
use tangrad::equality::compute_multipliers;
use tangrad::expr::parse;
use tangrad::model::{
    Constraint, Event, Point, Problem, ScalarFn, SolverConfig, Status,
};
use tangrad::{run_active_set, run_equality, run_minimax, MinimaxProblem};

fn expr_fn(s: &str) -> Arc<dyn ScalarFn> {
    Arc::new(parse(s).unwrap())
}

/// min x1 on the unit circle; solution (-1, 0) with multiplier 1/2.
fn circle_problem() -> Problem {
    let mut p = Problem::new(2, expr_fn("x1"));
    p.constraints
        .push(Constraint::equality(expr_fn("x1^2 + x2^2 - 1")));
    p
}

fn circle_errors(eta: f64) -> Vec<f64> {
    let cfg = SolverConfig {
        eta,
        tol: 1e-13,
        ..Default::default()
    };
    let r = run_equality(&circle_problem(), &DVector::from_vec(vec![-0.6, 0.8]), &cfg);
    assert_eq!(r.status, Status::Converged, "eta = {eta}");
    let x_star = DVector::from_vec(vec![-1.0, 0.0]);
    r.trace
        .iter()
        .map(|t| (DVector::from_vec(t.x.clone()) - &x_star).norm())
        .filter(|&e| e > 1e-14)
        .collect()
}

#[test]
fn criterion_01_equality_fixture() {
    let t0 = Instant::now();
    let cfg = SolverConfig {
        eta: 0.5,
        ..Default::default()
    };
    let r = run_equality(&circle_problem(), &DVector::from_vec(vec![-0.6, 0.8]), &cfg);
    let elapsed = t0.elapsed();
    assert_eq!(r.status, Status::Converged);
    assert!(r.kkt_residual < 1e-8, "kkt residual {}", r.kkt_residual);
    assert!(
        (r.multipliers[0] - 0.5).abs() < 1e-6,
        "multiplier {}",
        r.multipliers[0]
    );
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("criterion 01 (equality fixture): pass");
}

#[test]
fn criterion_02_linear_rate() {
    for eta in [0.2, 0.5] {
        let cfg = SolverConfig {
            eta,
            tol: 1e-13,
            ..Default::default()
        };
        let r = run_equality(&circle_problem(), &DVector::from_vec(vec![-0.6, 0.8]), &cfg);
        let report = convergence_report(&r.trace, &DVector::from_vec(vec![-1.0, 0.0])).unwrap();
        let expected = (1.0 - eta).abs();
        assert!(
            (report.rate - expected).abs() < 0.05,
            "eta {eta}: fitted {} vs {expected}",
            report.rate
        );
        assert!(report.verdict_linear, "eta {eta}: {report:?}");
    }
    // at eta = 1 convergence is faster than linear and the tail is too short
    // for the full report; the raw fit must sit within 0.05 of 0
    let errors = circle_errors(1.0);
    let rate = fit_rate(&errors).map(|(l, _)| l).unwrap_or(0.0);
    assert!(rate < 0.05, "eta 1.0: fitted {rate}");
    println!("criterion 02 (linear rate vs |1 - eta|): pass");
}

#[test]
fn criterion_03_constraint_decay_order() {
    let cfg = SolverConfig {
        eta: 0.5,
        tol: 1e-13,
        ..Default::default()
    };
    let r = run_equality(&circle_problem(), &DVector::from_vec(vec![-0.6, 0.8]), &cfg);
    let report = convergence_report(&r.trace, &DVector::from_vec(vec![-1.0, 0.0])).unwrap();
    let ratio = report.decay_ratio.expect("constraint decay fit");
    assert!(
        (1.7..=2.3).contains(&ratio),
        "slope ratio {ratio}, report {report:?}"
    );
    println!("criterion 03 (constraint decay order): pass");
}

#[test]
fn criterion_04_active_set_qp() {
    // start above the slack bound so it activates once, gets a negative
    // multiplier, and is dropped exactly once
    let mut p = Problem::new(2, expr_fn("(x1 - 2)^2 + (x2 - 1)^2"));
    p.constraints.push(Constraint::box_upper(1, 1.0));
    p.constraints.push(Constraint::box_upper(2, 2.0));
    let cfg = SolverConfig::default();
    let r = run_active_set(&p, &DVector::from_vec(vec![0.0, 3.0]), &cfg);
    assert_eq!(r.status, Status::Converged);
    let final_active = r.trace.last().unwrap().active.clone();
    assert_eq!(final_active, vec![0], "final active set");
    assert!(
        (r.multipliers[0] - 2.0).abs() < 1e-6,
        "lambda_1 = {}",
        r.multipliers[0]
    );
    assert_eq!(r.multipliers[1], 0.0, "lambda_2");
    let drops = r
        .trace
        .iter()
        .flat_map(|t| &t.events)
        .filter(|e| **e == Event::Deactivate { constraint: 1 })
        .count();
    assert_eq!(drops, 1, "deactivations of constraint 2");
    println!("criterion 04 (active-set QP fixture): pass");
}

/// Quadratic `sum c_i (x_i - t_i)^2`.
fn quadratic(c: Vec<f64>, t: Vec<f64>) -> Arc<dyn ScalarFn> {
    struct Quad {
        c: Vec<f64>,
        t: Vec<f64>,
    }
    impl ScalarFn for Quad {
        fn value(&self, x: &Point) -> f64 {
            x.iter()
                .zip(self.c.iter().zip(&self.t))
                .map(|(&xi, (&ci, &ti))| ci * (xi - ti) * (xi - ti))
                .sum()
        }
        fn gradient(&self, x: &Point) -> Point {
            DVector::from_iterator(
                x.len(),
                x.iter()
                    .zip(self.c.iter().zip(&self.t))
                    .map(|(&xi, (&ci, &ti))| 2.0 * ci * (xi - ti)),
            )
        }
    }
    Arc::new(Quad { c, t })
}

/// Affine `a . x - b`.
fn affine(a: Vec<f64>, b: f64) -> Arc<dyn ScalarFn> {
    struct Aff {
        a: Vec<f64>,
        b: f64,
    }
    impl ScalarFn for Aff {
        fn value(&self, x: &Point) -> f64 {
            x.iter().zip(&self.a).map(|(&xi, &ai)| ai * xi).sum::<f64>() - self.b
        }
        fn gradient(&self, x: &Point) -> Point {
            DVector::from_iterator(x.len(), self.a.iter().copied())
        }
    }
    Arc::new(Aff { a, b })
}

#[test]
fn criterion_05_reduced_vs_full_multipliers() {
    let mut rng = StdRng::seed_from_u64(505);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.random_range(3..6usize);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if row.iter().map(|v| v * v).sum::<f64>() < 0.1 {
            continue;
        }
        let nbox = rng.random_range(1..=n - 2);
        let eta = rng.random_range(0.05..0.5);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for v in 1..=nbox {
            x[v - 1] = 0.25;
        }
        let x = DVector::from_vec(x);
        let b = row.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>();

        let mut p_box = Problem::new(n, quadratic(c.clone(), t.clone()));
        let mut p_full = Problem::new(n, quadratic(c, t));
        p_box
            .constraints
            .push(Constraint::equality(affine(row.clone(), b)));
        p_full.constraints.push(Constraint::equality(affine(row, b)));
        for v in 1..=nbox {
            p_box.constraints.push(Constraint::box_lower(v, 0.25));
            let mut a = vec![0.0; n];
            a[v - 1] = -1.0;
            p_full.constraints.push(Constraint::equality(affine(a, -0.25)));
        }

        let mut state = ActiveSetState::initial(&p_box);
        for i in 0..p_box.constraints.len() {
            state.insert(i);
        }
        let reduced = solve_reduced_multipliers(&state, &p_box, &x, eta, 1e-12);
        let full = compute_multipliers(&p_full, &x, eta, 1e-12);
        match (reduced, full) {
            (Ok(r), Ok(f)) => {
                for (i, (a, b)) in r.iter().zip(f.iter()).enumerate() {
                    assert!(
                        (a - b).abs() <= 1e-10 * (1.0 + b.abs()),
                        "case {checked}, multiplier {i}: reduced {a} vs full {b}"
                    );
                }
                checked += 1;
            }
            (Err(_), Err(_)) => {} // near-dependent draw; resample
            (r, f) => panic!("case {checked}: reduced {r:?} vs full {f:?}"),
        }
    }
    println!("criterion 05 (reduced vs full multipliers, 200 cases): pass");
}

#[test]
fn criterion_06_minimax_two_parabola() {
    let mp = MinimaxProblem {
        n: 1,
        objectives: vec![expr_fn("(x1 - 1)^2"), expr_fn("(x1 + 1)^2")],
        ring: false,
        constraints: vec![],
    };
    let r = run_minimax(&mp, &DVector::from_vec(vec![0.4]), &SolverConfig::default());
    assert_eq!(r.status, Status::Converged);
    assert!(r.x[0].abs() < 1e-6, "x = {}", r.x[0]);
    assert!((r.z - 1.0).abs() < 1e-5, "z = {}", r.z);
    let sum: f64 = r
        .active_objectives
        .iter()
        .map(|&i| r.objective_multipliers[i])
        .sum();
    assert!((sum - 1.0).abs() < 1e-6, "multiplier sum {sum}");
    println!("criterion 06 (minimax two-parabola): pass");
}

fn random_spd(rng: &mut StdRng) -> ElasticTensor {
    let l = Matrix3::new(
        rng.random_range(0.2..2.0),
        0.0,
        0.0,
        rng.random_range(-1.0..1.0),
        rng.random_range(0.2..2.0),
        0.0,
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(0.2..2.0),
    );
    ElasticTensor::compliance(l * l.transpose())
}

#[test]
fn criterion_07_poisson_formulas() {
    let d = ElasticTensor::compliance(Matrix3::new(
        1.0, 0.5, 0.0, //
        0.5, 1.0, 0.0, //
        0.0, 0.0, 1.0,
    ));
    assert!((poisson_ratio(&d, Direction::new(0.0)).unwrap() + 0.5).abs() < 1e-12);
    assert!((poisson_ratio(&d, Direction::new(45.0)).unwrap() + 0.2).abs() < 1e-12);

    let mut rng = StdRng::seed_from_u64(707);
    for case in 0..100 {
        let d = random_spd(&mut rng);
        let phi = Direction::new(rng.random_range(0.0..180.0));
        let grad = poisson_gradient_compliance(&d, phi).unwrap();
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..=r {
                let mut e = Matrix3::zeros();
                e[(r, c)] = 1.0;
                e[(c, r)] = 1.0;
                let fp = poisson_ratio(&ElasticTensor::compliance(d.matrix + e * h), phi).unwrap();
                let fm = poisson_ratio(&ElasticTensor::compliance(d.matrix - e * h), phi).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let analytic = grad.dot(&e);
                assert!(
                    (analytic - fd).abs() / (1.0 + analytic.abs()) < 1e-6,
                    "case {case} entry ({r},{c}): {analytic} vs {fd}"
                );
            }
        }
        // chain rule against inverse-perturbation differencing
        let c_tensor = ElasticTensor::stiffness(random_spd(&mut rng).matrix);
        let d2 = c_tensor.invert().unwrap();
        let grad2 = poisson_gradient_compliance(&d2, phi).unwrap();
        let mut delta = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        delta = (delta + delta.transpose()) * 0.5;
        let analytic = chain_to_stiffness(&d2, &grad2, &delta);
        let dp = ElasticTensor::stiffness(c_tensor.matrix + delta * h)
            .invert()
            .unwrap();
        let dm = ElasticTensor::stiffness(c_tensor.matrix - delta * h)
            .invert()
            .unwrap();
        let fd = (poisson_ratio(&dp, phi).unwrap() - poisson_ratio(&dm, phi).unwrap()) / (2.0 * h);
        assert!(
            (analytic - fd).abs() / (1.0 + analytic.abs()) < 1e-6,
            "case {case} chain: {analytic} vs {fd}"
        );
    }
    println!("criterion 07 (Poisson ratio formulas): pass");
}

#[test]
fn criterion_08_auxetic_demo() {
    let mp = build_auxetic_problem(10);

    // attainability oracle: blind random search must already find a design
    // with every directional ratio at or below -0.5
    let mut rng = StdRng::seed_from_u64(808);
    let mut best = f64::MAX;
    for _ in 0..2000 {
        let mut x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
        for i in [0, 2, 5] {
            x[i] = x[i].abs().max(DIAG_MARGIN);
        }
        let norm: f64 = x.iter().map(|v| v * v).sum();
        let scale = (TRACE_TARGET / norm).sqrt();
        for v in x.iter_mut() {
            *v *= scale;
        }
        if [0, 2, 5].iter().any(|&i| x[i] < DIAG_MARGIN) {
            continue;
        }
        let p = DVector::from_vec(x);
        let max_nu = mp
            .objectives
            .iter()
            .map(|f| f.value(&p))
            .fold(f64::MIN, f64::max);
        best = best.min(max_nu);
    }
    assert!(best <= -0.5, "random search best {best}");

    let t0 = Instant::now();
    let cfg = SolverConfig {
        eta: 0.02,
        max_iters: 3000,
        tol: 1e-10,
        ..Default::default()
    };
    let r = run_minimax(&mp, &auxetic_start(), &cfg);
    let elapsed = t0.elapsed();
    let max_nu = r.objective_values.iter().cloned().fold(f64::MIN, f64::max);
    let min_nu = r.objective_values.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max_nu <= -0.5, "max nu {max_nu}");
    assert!(max_nu - min_nu <= 0.05, "spread {}", max_nu - min_nu);
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 08 (auxetic demo, k=10): pass (max nu {max_nu:.3}, spread {:.3})",
        max_nu - min_nu
    );
}

#[test]
fn criterion_09_second_order_probe() {
    // converged equality fixture: tangent curvature 1
    let p = circle_problem();
    let x_star = DVector::from_vec(vec![-1.0, 0.0]);
    let curv = second_order_probe(&p, &x_star, &[0.5]).unwrap();
    assert!(curv > 0.0, "circle curvature {curv}");
    assert!((curv - 1.0).abs() < 1e-3, "circle curvature {curv}");

    // converged QP fixture: tangent curvature 2
    let mut qp = Problem::new(2, expr_fn("(x1 - 2)^2 + (x2 - 1)^2"));
    qp.constraints.push(Constraint::box_upper(1, 1.0));
    qp.constraints.push(Constraint::box_upper(2, 2.0));
    let curv = second_order_probe(&qp, &DVector::from_vec(vec![1.0, 1.0]), &[2.0, 0.0]).unwrap();
    assert!(curv > 0.0, "qp curvature {curv}");

    // the same circle point as a stationary point of max x1: curvature -1
    let mut p_max = Problem::new(2, expr_fn("-x1"));
    p_max
        .constraints
        .push(Constraint::equality(expr_fn("x1^2 + x2^2 - 1")));
    let curv = second_order_probe(&p_max, &x_star, &[-0.5]).unwrap();
    assert!(curv < 0.0, "maximizer curvature {curv}");
    assert!((curv + 1.0).abs() < 1e-3, "maximizer curvature {curv}");
    println!("criterion 09 (second-order probe): pass");
}

#[test]
fn criterion_10_randomized_invariants() {
    let mut rng = StdRng::seed_from_u64(1010);

    // 400 gradient checks on random smooth expressions
    for case in 0..400 {
        let a = rng.random_range(-2.0..2.0);
        let b = rng.random_range(-2.0..2.0);
        let c = rng.random_range(-2.0..2.0);
        let k = rng.random_range(1..4);
        let text = format!(
            "({a} * x1 + {b} * x2)^{k} + sin({c} * x1 * x2) + cos(x2 - {a})"
        );
        let e = parse(&text).unwrap();
        let x = DVector::from_vec(vec![
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        let err = tangrad::check_gradient(&e, &x);
        assert!(err < 1e-6, "case {case}: gradient error {err} for {text}");
    }

    // 400 random box-constrained quadratics: KKT signs, residual, and exact
    // projection onto active bounds
    for case in 0..400 {
        let n = 3;
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut p = Problem::new(n, quadratic(c, t));
        for v in 1..=n {
            p.constraints.push(Constraint::box_lower(v, -1.0));
            p.constraints.push(Constraint::box_upper(v, 1.0));
        }
        let x0 = DVector::from_vec(
            (0..n).map(|_| rng.random_range(-0.9..0.9)).collect::<Vec<_>>(),
        );
        let r = run_active_set(&p, &x0, &SolverConfig::default());
        assert_eq!(r.status, Status::Converged, "case {case}");
        for (i, &l) in r.multipliers.iter().enumerate() {
            assert!(l >= -1e-9, "case {case}: multiplier {i} = {l}");
        }
        assert!(r.kkt_residual < 1e-6, "case {case}: residual {}", r.kkt_residual);
        let last = r.trace.last().unwrap();
        for &i in &last.active {
            if let (Some(var), Some(bound)) =
                (p.constraints[i].kind.box_var(), p.constraints[i].kind.box_bound())
            {
                assert_eq!(
                    r.x[var - 1], bound,
                    "case {case}: active bound {i} not met exactly"
                );
            }
        }
    }

    // 200 Poisson-ratio symmetry checks
    for case in 0..200 {
        let d = random_spd(&mut rng);
        let phi = rng.random_range(0.0..180.0);
        let scale = rng.random_range(0.1..10.0);
        let base = poisson_ratio(&d, Direction::new(phi)).unwrap();
        let scaled =
            poisson_ratio(&ElasticTensor::compliance(d.matrix * scale), Direction::new(phi))
                .unwrap();
        let shifted = poisson_ratio(&d, Direction::new(phi + 180.0)).unwrap();
        assert!((scaled - base).abs() < 1e-10, "case {case}: scale");
        assert!((shifted - base).abs() < 1e-10, "case {case}: period");
    }
    println!("criterion 10 (randomized invariant suite, 1000 cases): pass");
}
