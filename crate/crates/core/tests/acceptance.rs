//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 2 6`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dmpc::bench::{aggregate, write_csv_file, BenchmarkSpec, Harness, TrialRow, TIMING_COLUMNS};
use dmpc::bezier::{bernstein, build_basis, energy_gram, BezierSpline};
use dmpc::collision::{bvc_constraints, ondemand_constraint, EllipsoidSpec};
use dmpc::dynamics::{build_stacked, make_second_order_model, state};
use dmpc::exec::Execution;
use dmpc::linalg::LinearRows;
use dmpc::planner::{
    update_agent, AgentRuntime, CycleInput, Method, ModelConfig, PlannerConfig, PlannerContext,
    Workspace,
};
use dmpc::qp::{solve, QpProblem, SolverSettings};
use dmpc::sim::{
    hoop_scenario, mean, run_scenario, write_envelope_csv, AgentSpec, Disturbance, NoiseSpec,
    RunOutput, ScenarioSpec, SimOptions, World,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---- 1: math core ---------------------------------------------------------

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Composite Simpson on `[0, t]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, t: f64, n: usize) -> f64 {
    let h = t / n as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn partition_of_unity() -> Result<(), String> {
    let mut runner = TestRunner::new(PropConfig {
        cases: 2000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&(1usize..=9, 0.1f64..5.0, 0.0f64..=1.0), |(p, dur, s)| {
            let t = s * dur;
            let sum: f64 = (0..=p).map(|m| bernstein(p, m, dur, t).unwrap()).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "sum {sum} at p={p} t={t}");
            Ok(())
        })
        .map_err(|e| format!("partition of unity: {e}"))
}

fn random_spline(rng: &mut ChaCha8Rng) -> BezierSpline {
    let durations = vec![1.0, 1.0, 1.0];
    let points = DVector::from_fn(3 * 3 * 6, |_, _| rng.random_range(-2.0..2.0));
    BezierSpline::new(5, durations, points).unwrap()
}

fn derivatives_match_differences(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let s = random_spline(rng);
        // stay away from the segment junctions, where one-sided pieces meet
        let seg = rng.random_range(0..3) as f64;
        let t = seg + rng.random_range(0.01..0.99);
        for order in 1..=3 {
            let fd = (s.eval(t + h, order - 1) - s.eval(t - h, order - 1)) / (2.0 * h);
            let err = (fd - s.eval(t, order)).amax() / (1.0 + s.eval(t, order).amax());
            worst = worst.max(err);
        }
    }
    check(
        worst < 1e-6,
        format!("derivative vs difference {worst:.2e}"),
    )?;
    Ok(worst)
}

fn gram_matches_quadrature(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p = rng.random_range(2..=7);
        let dur = rng.random_range(0.2..3.0);
        let c = rng.random_range(0..=p.min(3));
        let pts: Vec<f64> = (0..=p).map(|_| rng.random_range(-1.0..1.0)).collect();
        // c-th derivative by repeated differencing of the control points
        let mut q = pts.clone();
        for _ in 0..c {
            let deg = q.len() - 1;
            q = q
                .windows(2)
                .map(|w| (w[1] - w[0]) * deg as f64 / dur)
                .collect();
        }
        let deg = q.len() - 1;
        let value = |t: f64| -> f64 {
            let s = t / dur;
            q.iter()
                .enumerate()
                .map(|(m, v)| {
                    v * binom(deg, m) * (1.0 - s).powi((deg - m) as i32) * s.powi(m as i32)
                })
                .sum()
        };
        let quad = simpson(|t| value(t).powi(2), dur, 4000);
        let g = energy_gram(p, dur, c).map_err(|e| e.to_string())?;
        let v = DVector::from_vec(pts);
        let gram = v.dot(&(&g * &v));
        let err = (gram - quad).abs() / quad.abs().max(1e-300);
        if quad.abs() > 1e-12 {
            worst = worst.max(err);
        }
    }
    check(
        worst < 1e-8,
        format!("energy gram vs quadrature {worst:.2e}"),
    )?;
    Ok(worst)
}

fn stacked_matches_recursion(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let model = make_second_order_model(8.0, 0.7, 0.2).unwrap();
    let k = 16;
    let stacked = build_stacked(&model, k).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x0 = state(
            Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
            Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        );
        let u: Vec<Vector3<f64>> = (0..k)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let flat = DVector::from_iterator(3 * k, u.iter().flat_map(|v| v.iter().copied()));
        let x0d = DVector::from_column_slice(x0.as_slice());
        let big = stacked.predict_states(&x0d, &flat).unwrap();
        let mut x = x0;
        for (i, ui) in u.iter().enumerate() {
            x = model.a * x + model.b * ui;
            for r in 0..6 {
                worst = worst.max((big[6 * i + r] - x[r]).abs());
            }
        }
    }
    check(worst < 1e-10, format!("stacked vs recursion {worst:.2e}"))?;
    Ok(worst)
}

/// KKT residual computed from the problem data alone.
fn independent_kkt(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    aeq: &DMatrix<f64>,
    beq: &DVector<f64>,
    ain: &DMatrix<f64>,
    bin: &DVector<f64>,
    z: &DVector<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
) -> f64 {
    let mut grad = h * z + f;
    if aeq.nrows() > 0 {
        grad += aeq.transpose() * nu;
    }
    grad += ain.transpose() * lambda;
    let scale = 1.0f64.max(f.amax()).max(h.amax() * z.amax());
    let mut r = grad.amax() / scale;
    if aeq.nrows() > 0 {
        r = r.max((aeq * z - beq).amax());
    }
    for i in 0..ain.nrows() {
        let s = bin[i] - ain.row(i).dot(&z.transpose());
        r = r.max(-s).max(-lambda[i]).max((lambda[i] * s).abs() / scale);
    }
    r
}

fn random_qps(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let settings = SolverSettings {
        tol: 1e-8,
        max_iter: 10_000,
    };
    for i in 0..1000 {
        let n = rng.random_range(2..=24);
        let me = rng.random_range(0..n / 2 + 1);
        let mi = rng.random_range(0..=2 * n);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let f = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        // a known feasible point keeps every instance feasible
        let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let aeq = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
        let beq = &aeq * &z0;
        let ain = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
        let bin = &ain * &z0 + DVector::from_fn(mi, |_, _| rng.random_range(0.0..1.0));
        let qp = QpProblem {
            h: h.clone(),
            f: f.clone(),
            eq: LinearRows::new(aeq.clone(), beq.clone()),
            ineq: LinearRows::new(ain.clone(), bin.clone()),
            slack: n..n,
        };
        let sol = solve(&qp, &settings);
        if !sol.is_optimal() {
            return Err(format!("instance {i} (n={n}): {:?}", sol.status));
        }
        let r = independent_kkt(
            &h,
            &f,
            &aeq,
            &beq,
            &ain,
            &bin,
            &sol.z,
            &sol.eq_multipliers,
            &sol.ineq_multipliers,
        );
        worst = worst.max(r);
    }
    check(worst < 1e-6, format!("worst KKT residual {worst:.2e}"))?;
    Ok(worst)
}

fn hyperplane_cases() -> Result<(), String> {
    let unit = EllipsoidSpec {
        theta: Vector3::new(1.0, 1.0, 1.0),
        r_min: 0.3,
    };
    let near = |a: f64, b: f64| (a - b).abs() < 1e-9;
    // cell of (-0.5,0,0) against (0.5,0,0): x <= -0.15
    let hs = bvc_constraints(
        &Vector3::new(-0.5, 0.0, 0.0),
        &[(1, Vector3::new(0.5, 0.0, 0.0))],
        &unit,
        false,
    )
    .map_err(|e| e.to_string())?;
    let c = &hs[0];
    check(
        near(c.normal.x, -1.0) && near(c.normal.y, 0.0) && near(c.normal.z, 0.0),
        format!("cell normal {:?}", c.normal),
    )?;
    check(near(c.offset, 0.15), format!("cell offset {}", c.offset))?;
    // linearisation at (0.25,0,0) away from the origin: x >= 0.3
    let c = ondemand_constraint(
        &Vector3::new(0.25, 0.0, 0.0),
        &Vector3::zeros(),
        &unit,
        4,
        1,
    )
    .map_err(|e| e.to_string())?;
    check(
        near(c.normal.x, 1.0) && near(c.normal.y, 0.0) && near(c.normal.z, 0.0),
        format!("linearised normal {:?}", c.normal),
    )?;
    check(
        near(c.offset, 0.3),
        format!("linearised offset {}", c.offset),
    )?;
    // stretched z axis: at (0,0,0.5), d = 0.25, normal (0,0,0.5), 0.5 z >= 0.3
    let tall = EllipsoidSpec {
        theta: Vector3::new(1.0, 1.0, 2.0),
        r_min: 0.3,
    };
    let c = ondemand_constraint(&Vector3::new(0.0, 0.0, 0.5), &Vector3::zeros(), &tall, 4, 1)
        .map_err(|e| e.to_string())?;
    check(
        near(c.normal.z, 0.5) && near(c.normal.x, 0.0) && near(c.offset, 0.3),
        format!("stretched case {:?} {}", c.normal, c.offset),
    )?;
    Ok(())
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    partition_of_unity()?;
    let d = derivatives_match_differences(&mut rng)?;
    let g = gram_matches_quadrature(&mut rng)?;
    let s = stacked_matches_recursion(&mut rng)?;
    let k = random_qps(&mut rng)?;
    hyperplane_cases()?;
    // the spline layout used by the planner samples 48 rows
    let basis = build_basis(3, 5, &[1.0, 1.0, 1.0], 0.2, 16, 2).map_err(|e| e.to_string())?;
    check(basis.samples[0].nrows() == 48, "basis rows")?;
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "diff {d:.1e}, gram {g:.1e}, stacked {s:.1e}, kkt {k:.1e} over 1000 QPs, {secs:.1} s"
    ))
}

// ---- 2: two-agent swap ----------------------------------------------------

fn swap_spec() -> ScenarioSpec {
    let a = Vector3::new(-1.0, -0.05, 1.0);
    let b = Vector3::new(1.0, 0.05, 1.0);
    ScenarioSpec {
        workspace: Workspace::default(),
        agents: vec![
            AgentSpec { start: a, goal: b },
            AgentSpec { start: b, goal: a },
        ],
        obstacles: Vec::new(),
        duration: 20.0,
        noise: NoiseSpec::none(),
        disturbances: Vec::new(),
        push_speed: 0.1,
        seed: 1,
    }
}

fn run(spec: &ScenarioSpec, method: Method, opts: &SimOptions) -> Result<RunOutput, String> {
    let cfg = PlannerConfig {
        method,
        ..PlannerConfig::default()
    };
    run_scenario(spec, &ModelConfig::default(), &cfg, opts).map_err(|e| e.to_string())
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let spec = swap_spec();
    let opts = SimOptions::default();
    let mut times = BTreeMap::new();
    for method in [Method::Bvc, Method::OndemandInput] {
        let m = run(&spec, method, &opts)?.metrics;
        check(
            m.success && m.collision.is_none(),
            format!("{method}: {:?}", m.failure),
        )?;
        let t = m.transit_time.expect("success implies a transit time");
        check(t <= 20.0, format!("{method} transit {t}"))?;
        times.insert(method.name(), t);
    }
    let (bvc, od) = (times["bvc"], times["ondemand-input"]);
    check(
        od < bvc,
        format!("on-demand {od:.2} s not faster than BVC {bvc:.2} s"),
    )?;
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 5.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "transit on-demand {od:.2} s, BVC {bvc:.2} s, {secs:.2} s runtime"
    ))
}

// ---- 3 and 4: random transitions -------------------------------------------

fn transition_rows() -> Vec<TrialRow> {
    let spec = BenchmarkSpec {
        methods: vec![Method::Bvc, Method::OndemandInput],
        counts: vec![10, 20, 30],
        trials: 20,
        ..BenchmarkSpec::default()
    };
    let model = ModelConfig::default();
    let planner = PlannerConfig::default();
    let harness = Harness {
        model: &model,
        planner: &planner,
        noise: NoiseSpec::default(),
        options: SimOptions::default(),
        execution: Execution::default(),
    };
    harness
        .run(&spec)
        .expect("valid spec")
        .into_iter()
        .map(|r| r.row)
        .collect()
}

fn rate(rows: &[TrialRow], method: Method, n: usize) -> f64 {
    aggregate(rows)
        .into_iter()
        .find(|a| a.method == method && a.n_agents == n)
        .map_or(0.0, |a| a.success_rate)
}

fn criterion_3(rows: &[TrialRow]) -> Outcome {
    let table: Vec<String> = [10, 20, 30]
        .iter()
        .map(|&n| {
            format!(
                "n={n}: on-demand {:.0}% BVC {:.0}%",
                100.0 * rate(rows, Method::OndemandInput, n),
                100.0 * rate(rows, Method::Bvc, n)
            )
        })
        .collect();
    let table = table.join(", ");
    let od = rate(rows, Method::OndemandInput, 30);
    let bvc = rate(rows, Method::Bvc, 30);
    check(od >= 0.8, format!("on-demand at n=30 below 80% ({table})"))?;
    check(
        bvc < od,
        format!("BVC not below on-demand at n=30 ({table})"),
    )?;
    Ok(table)
}

fn criterion_4(rows: &[TrialRow]) -> Outcome {
    let at20 = |m: Method| -> BTreeMap<usize, f64> {
        rows.iter()
            .filter(|r| r.method == m && r.n_agents == 20)
            .filter_map(|r| r.transit_time_s.map(|t| (r.trial, t)))
            .collect()
    };
    let (od, bvc) = (at20(Method::OndemandInput), at20(Method::Bvc));
    let both: Vec<usize> = od.keys().filter(|k| bvc.contains_key(k)).copied().collect();
    check(
        !both.is_empty(),
        format!(
            "no mutually successful trial at n=20 (on-demand {} of 20, BVC {} of 20)",
            od.len(),
            bvc.len()
        ),
    )?;
    let mo = mean(&both.iter().map(|k| od[k]).collect::<Vec<_>>());
    let mb = mean(&both.iter().map(|k| bvc[k]).collect::<Vec<_>>());
    check(
        mo <= 0.75 * mb,
        format!(
            "on-demand {mo:.2} s vs BVC {mb:.2} s over {} trials",
            both.len()
        ),
    )?;
    Ok(format!(
        "on-demand {mo:.2} s vs BVC {mb:.2} s (ratio {:.2}) over {} trials",
        mo / mb,
        both.len()
    ))
}

// ---- 5: solve time ordering -------------------------------------------------

fn criterion_5() -> Outcome {
    let spec = BenchmarkSpec {
        methods: Method::ALL.to_vec(),
        counts: vec![40],
        trials: 2,
        duration: 3.0,
        ..BenchmarkSpec::default()
    };
    let model = ModelConfig::default();
    let planner = PlannerConfig::default();
    // sequential so that solve times are not inflated by contention
    let harness = Harness {
        model: &model,
        planner: &planner,
        noise: NoiseSpec::default(),
        options: SimOptions::default(),
        execution: Execution::Sequential,
    };
    let results = harness.run(&spec).map_err(|e| e.to_string())?;
    let mut means: Vec<(Method, f64)> = Method::ALL
        .iter()
        .map(|&m| {
            let qp: Vec<f64> = results
                .iter()
                .filter(|r| r.row.method == m)
                .flat_map(|r| r.qp_ms.iter().copied())
                .collect();
            (m, mean(&qp))
        })
        .collect();
    let summary: Vec<String> = means
        .iter()
        .map(|(m, t)| format!("{m} {t:.3} ms"))
        .collect();
    let summary = summary.join(", ");
    means.sort_by(|a, b| b.1.total_cmp(&a.1));
    check(
        means[0].0 == Method::BvcSoft,
        format!("slowest is {} ({summary})", means[0].0),
    )?;
    Ok(summary)
}

// ---- 6: replanning causality ------------------------------------------------

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let cfg = PlannerConfig::default();
    let model = ModelConfig::default();
    let ctx = PlannerContext::new(&model, &cfg).map_err(|e| e.to_string())?;
    let start = Vector3::new(-1.0, 0.0, 1.0);
    let goal = Vector3::new(1.0, 0.5, 1.2);
    let mut world = World::new(
        &[start],
        model.discretize(cfg.ts).unwrap(),
        NoiseSpec::default(),
        5,
    )
    .map_err(|e| e.to_string())?;
    let mut rt = AgentRuntime::new(0, start, goal, cfg.horizon);
    let mut resets = 0;
    let mut worst_jump: f64 = 0.0;
    for cycle in 0..100u64 {
        let measured = world.measure();
        let predictions = vec![rt.prediction.clone()];
        let input = CycleInput {
            stamp: cycle,
            measured: &measured,
            predictions: &predictions,
            obstacles: &[],
        };
        let up = update_agent(&ctx, &rt, &input).map_err(|e| e.to_string())?;
        // the first cycle starts from rest by construction
        if cycle > 0 {
            if up.reset {
                resets += 1;
            } else {
                let prev = rt.trajectory.as_ref().expect("planned").eval(cfg.h, 0);
                let now = up
                    .runtime
                    .trajectory
                    .as_ref()
                    .expect("planned")
                    .eval(0.0, 0);
                worst_jump = worst_jump.max((prev - now).norm());
            }
        }
        for u in &up.fine_inputs {
            world.step(&[*u]);
        }
        rt = up.runtime;
    }
    check(resets == 0, format!("{resets} resets in a nominal run"))?;
    check(
        worst_jump < 1e-6,
        format!("reference jumps {worst_jump:.2e} m at a cycle boundary"),
    )?;

    // the same transition with a 0.3 m push at t = 2 s
    let push_time = 2.0;
    let spec = ScenarioSpec {
        workspace: Workspace::default(),
        agents: vec![AgentSpec { start, goal }],
        obstacles: Vec::new(),
        duration: 20.0,
        noise: NoiseSpec::default(),
        disturbances: vec![Disturbance {
            time: push_time,
            agent: 0,
            offset: Vector3::new(0.0, 0.3, 0.0),
        }],
        push_speed: 0.1,
        seed: 5,
    };
    let m = run(&spec, Method::OndemandInput, &SimOptions::default())?.metrics;
    let push_cycle = (push_time / cfg.h).round() as u64;
    check(
        m.resets.iter().all(|r| r.cycle >= push_cycle),
        format!("reset before the push: {:?}", m.resets),
    )?;
    let first = m.resets.first().map(|r| r.cycle);
    check(
        first.is_some_and(|c| c < push_cycle + 2),
        format!("no reset within 2 cycles of the push: {:?}", m.resets),
    )?;
    check(m.success, format!("pushed agent failed: {:?}", m.failure))?;
    Ok(format!(
        "0 resets in 100 cycles, max jump {worst_jump:.1e} m, reset {} cycle(s) after push, {:.2} s",
        first.unwrap() - push_cycle,
        t0.elapsed().as_secs_f64()
    ))
}

// ---- 7: hoop ----------------------------------------------------------------

fn criterion_7() -> Outcome {
    let t0 = Instant::now();
    let spec = hoop_scenario(10, 60.0, 3).map_err(|e| e.to_string())?;
    let opts = SimOptions {
        stop_tolerance: 0.06,
        ..SimOptions::default()
    };
    let out = run(&spec, Method::OndemandInput, &opts)?;
    let m = &out.metrics;
    check(m.collision.is_none(), format!("{:?}", m.failure))?;
    check(
        m.min_obstacle_distance >= 1.0,
        format!("inside an obstacle ({:.3})", m.min_obstacle_distance),
    )?;
    let settled = m
        .envelope_time
        .ok_or_else(|| format!("not all agents within 0.06 m: {:?}", m.failure))?;
    check(settled <= 60.0, format!("settled at {settled} s"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("envelope.csv");
    let file = std::fs::File::create(&path).map_err(|e| e.to_string())?;
    write_envelope_csv(&out.envelope, file).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    check(
        lines.next() == Some("t,min_dist_m,max_dist_m"),
        "envelope header",
    )?;
    let last = lines.last().ok_or("empty envelope")?;
    let max: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    check(max <= 0.06, format!("final envelope {max}"))?;
    Ok(format!(
        "within 0.06 m at {settled:.2} s, min pair distance {:.3} m, envelope {} rows, {:.1} s",
        m.min_scaled_distance,
        out.envelope.len(),
        t0.elapsed().as_secs_f64()
    ))
}

// ---- 8: determinism -----------------------------------------------------------

fn without_timing(text: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !TIMING_COLUMNS.contains(&header[i]))
        .collect();
    std::iter::once(text.lines().next().unwrap_or(""))
        .chain(lines)
        .map(|l| {
            // failure messages carry no commas, so a plain split is exact
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i]).collect::<Vec<_>>().join(",")
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let spec = BenchmarkSpec {
        methods: Method::ALL.to_vec(),
        counts: vec![6, 10],
        trials: 3,
        duration: 10.0,
        ..BenchmarkSpec::default()
    };
    let model = ModelConfig::default();
    let planner = PlannerConfig::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut texts = Vec::new();
    for (run, exec) in [Execution::default(), Execution::Sequential]
        .into_iter()
        .enumerate()
    {
        let harness = Harness {
            model: &model,
            planner: &planner,
            noise: NoiseSpec::default(),
            options: SimOptions::default(),
            execution: exec,
        };
        let rows: Vec<TrialRow> = harness
            .run(&spec)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| r.row)
            .collect();
        let trials = dir.path().join(format!("trials{run}.csv"));
        let agg = dir.path().join(format!("aggregate{run}.csv"));
        write_csv_file(&rows, &trials).map_err(|e| e.to_string())?;
        write_csv_file(&aggregate(&rows), &agg).map_err(|e| e.to_string())?;
        let read = |p| std::fs::read_to_string(p).map_err(|e: std::io::Error| e.to_string());
        texts.push((read(&trials)?, read(&agg)?));
    }
    let (a, b) = (&texts[0], &texts[1]);
    let (ta, tb) = (without_timing(&a.0), without_timing(&b.0));
    check(
        ta.len() == 1 + 4 * 2 * 3,
        format!("{} trial lines", ta.len()),
    )?;
    check(ta == tb, "trial CSVs differ outside the timing columns")?;
    check(a.1 == b.1, "aggregate CSVs differ")?;
    Ok(format!(
        "{} trial rows and the aggregate identical across two runs",
        ta.len() - 1
    ))
}

// ---- driver -------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let selected = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let names = [
        (1, "math core properties"),
        (2, "two-agent swap"),
        (3, "success rate at n = 10, 20, 30"),
        (4, "transit time ratio at n = 20"),
        (5, "soft cells slowest at n = 40"),
        (6, "replanning causality"),
        (7, "hoop transition"),
        (8, "comparison determinism"),
    ];
    let rows = if selected(3) || selected(4) {
        Some(transition_rows())
    } else {
        None
    };
    let mut failed = 0;
    for (n, name) in names {
        if !selected(n) {
            continue;
        }
        let rows = rows.as_deref().unwrap_or(&[]);
        let outcome = guarded(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(rows),
            4 => criterion_4(rows),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            _ => criterion_8(),
        });
        match outcome {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
