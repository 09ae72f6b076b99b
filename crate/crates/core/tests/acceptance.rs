//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use dcopt::agent::RunParams;
use dcopt::graph::{check_strong_connectivity, validate_weight_matrix, GraphSequence};
use dcopt::metrics::{log_log_slope, metrics_csv};
use dcopt::problem::{
    agent_smoothness, make_paper_instance, make_quadratic_equality_instance, AgentProblem, ProblemInstance,
    ProxTerm, Quadratic,
};
use dcopt::reference::{solve_centralized, solve_kkt_small, ReferenceOptions, ReferenceSolution};
use dcopt::simulator::{audit_messages, run, Message, PayloadKind, RecordSchedule, RunOptions, RunTrace};
use dcopt::subsolver::{dual_gradient, minimize_augmented_lagrangian, DualPoint, InnerSolveParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const N_AGENTS: usize = 20;
const P: usize = 25;
const Q: usize = 1;
const INSTANCE_SEED: u64 = 1;
const GRAPH_SEED: u64 = 7;
const N_CYCLES: usize = 2;
const ROUNDS: usize = 10_000;

type Check<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct MainRun {
    instance: ProblemInstance<f64>,
    reference: ReferenceSolution<f64>,
    inner: InnerSolveParams<f64>,
    trace: RunTrace<f64>,
}

fn main_options() -> RunOptions<f64> {
    RunOptions {
        avg_gap_checkpoints: vec![100, 1_000, 10_000],
        x0_seed: Some(INSTANCE_SEED),
        ..Default::default()
    }
}

fn main_run() -> MainRun {
    let instance = make_paper_instance::<f64>(N_AGENTS, P, Q, INSTANCE_SEED).expect("instance");
    let reference = solve_centralized(&instance, &ReferenceOptions::default()).expect("reference");
    let graphs = GraphSequence::new(N_AGENTS, N_CYCLES, GRAPH_SEED).expect("graphs");
    let params = RunParams::auto(&instance, ROUNDS);
    let inner = InnerSolveParams::default();
    let trace = run(&instance, &graphs, &params, &inner, Some(&reference), &main_options()).expect("run");
    MainRun {
        instance,
        reference,
        inner,
        trace,
    }
}

fn zero_sum(m: &MainRun) -> Outcome {
    let t = &m.trace;
    let tol = 1e-9;
    outcome(
        t.outcome.is_completed()
            && t.rounds_completed == ROUNDS
            && t.worst_zero_sum_v <= tol
            && t.worst_zero_sum_z <= tol,
        format!(
            "max over {} rounds of |sum v|/(1+max|v_i|) = {:.3e}, |sum z|/(1+max|v_i|) = {:.3e} (tol {tol:e})",
            t.rounds_completed, t.worst_zero_sum_v, t.worst_zero_sum_z
        ),
    )
}

fn weight_matrices() -> Outcome {
    let graphs = GraphSequence::new(N_AGENTS, N_CYCLES, GRAPH_SEED).expect("graphs");
    let mut failures = 0;
    let mut worst = 0.0f64;
    for k in 1..=1000 {
        let round = graphs.round::<f64>(k);
        let report = validate_weight_matrix(&round.weights, &round.digraph).expect("dimensions");
        worst = worst.max(report.max_deviation);
        let ok = report.pass
            && report.max_deviation <= 1e-12
            && report.support_mismatches.is_empty()
            && check_strong_connectivity(&round.digraph)
            && round.digraph.has_self_loops();
        if !ok {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("1000 rounds, {failures} failing, worst row/column sum deviation {worst:.2e}"),
    )
}

fn random_quadratic_instance(rng: &mut ChaCha8Rng) -> ProblemInstance<f64> {
    let (n, p) = (4, 3);
    let agents = (0..n)
        .map(|_| {
            let d = rng.random_range(1..=4);
            let m = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
            let hessian = m.transpose() * &m + DMatrix::identity(d, d);
            let linear = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
            let a = DMatrix::<f64>::from_fn(p, d, |_, _| rng.sample(StandardNormal));
            let feasible = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
            let b = &a * feasible;
            AgentProblem::new(Quadratic::new(hessian, linear, 0.0).unwrap(), ProxTerm::Zero, vec![], a, b).unwrap()
        })
        .collect();
    ProblemInstance::new(agents, 0.0, None, None).unwrap()
}

fn oracle_equivalence() -> Outcome {
    // x_i* = c_i + (b − Σ c_j)/n for f_i = ½(x − c_i)², A_i = 1
    let centers = [1.0, 2.0, 3.0];
    let b = 9.0;
    let shift = (b - centers.iter().sum::<f64>()) / centers.len() as f64;
    let exact: Vec<f64> = centers.iter().map(|c| c + shift).collect();

    let center_vecs: Vec<DVector<f64>> = centers.iter().map(|&c| DVector::from_element(1, c)).collect();
    let instance = make_quadratic_equality_instance(&center_vecs, &DVector::from_element(1, b)).unwrap();
    let graphs = GraphSequence::new(3, 1, GRAPH_SEED).unwrap();
    let params = RunParams::auto(&instance, 5000);
    let options = RunOptions {
        dual_gap_every: 0,
        ..Default::default()
    };
    let trace = run(&instance, &graphs, &params, &InnerSolveParams::default(), None, &options).unwrap();
    let run_err = trace
        .final_states
        .iter()
        .zip(&exact)
        .map(|(s, x)| (s.x[0] - x).abs())
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_x = 0.0f64;
    let mut worst_u = 0.0f64;
    for _ in 0..20 {
        let inst = random_quadratic_instance(&mut rng);
        let central = solve_centralized(&inst, &ReferenceOptions::default()).unwrap();
        let (x_kkt, u_kkt) = solve_kkt_small(&inst).unwrap();
        for (a, b) in central.x_star.iter().zip(&x_kkt) {
            worst_x = worst_x.max((a - b).amax());
        }
        worst_u = worst_u.max((&central.u_star - &u_kkt).amax());
    }
    outcome(
        trace.outcome.is_completed() && run_err <= 1e-6 && worst_x <= 1e-7,
        format!(
            "3-agent run error at k=5000 {run_err:.2e} (tol 1e-6); centralized vs KKT on 20 instances: x {worst_x:.2e} (tol 1e-7), u {worst_u:.2e}"
        ),
    )
}

fn degenerate_reduction() -> Outcome {
    let instance = make_paper_instance::<f64>(1, 3, 1, 11).unwrap();
    let agent = &instance.agents[0];
    let graphs = GraphSequence::new(1, 1, GRAPH_SEED).unwrap();
    let params = RunParams::auto(&instance, 200);
    let inner = InnerSolveParams::default();
    let options = RunOptions {
        record: RecordSchedule::all(),
        dual_gap_every: 0,
        keep_states: true,
        ..Default::default()
    };
    let trace = run(&instance, &graphs, &params, &inner, None, &options).unwrap();

    // method of multipliers on the single agent, written out directly
    let mut x = DVector::zeros(agent.dim());
    let mut u = DVector::zeros(agent.p());
    let mut y = DVector::zeros(agent.q());
    let zero_v = DVector::zeros(agent.p());
    let zero_z = DVector::zeros(agent.q());
    let mut worst = 0.0f64;
    for (k, states) in trace.state_history.iter().skip(1) {
        let sol = minimize_augmented_lagrangian(agent, &u, &y, &zero_v, &zero_z, params.rho, &inner, Some(&x)).unwrap();
        x = sol.x;
        u = &u + (&agent.a * &x - &agent.b) * params.rho;
        let g = agent.g(&x);
        y = DVector::from_fn(agent.q(), |l, _| (y[l] + params.rho * g[l]).max(0.0));
        let s = &states[0];
        let diff = (&s.x - &x).amax().max((&s.u - &u).amax()).max((&s.y - &y).amax());
        worst = worst.max(diff);
        debug_assert!(*k >= 1);
    }
    outcome(
        trace.state_history.len() == 201 && worst <= 1e-12,
        format!("200 rounds, largest iterate difference {worst:.2e} (tol 1e-12)"),
    )
}

fn dual_lipschitz(m: &MainRun) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut agents: Vec<usize> = (0..N_AGENTS).collect();
    for i in 0..3 {
        let j = rng.random_range(i..N_AGENTS);
        agents.swap(i, j);
    }
    let agents = &agents[..3];
    let r = &m.reference;
    let slack = 10.0 * m.inner.tol;
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    let draw = |rng: &mut ChaCha8Rng| {
        DualPoint::new(
            DVector::from_fn(P, |l, _| r.u_star[l] + rng.sample::<f64, _>(StandardNormal)),
            DVector::from_fn(Q, |l, _| r.y_star[l] + rng.sample::<f64, _>(StandardNormal)),
        )
    };
    for &i in agents {
        let agent = &m.instance.agents[i];
        let li = agent_smoothness(&m.instance, i);
        for _ in 0..100 {
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            let (gu_a, gy_a) = dual_gradient(agent, &a, &r.v_star[i], &r.z_star[i], &m.inner).unwrap();
            let (gu_b, gy_b) = dual_gradient(agent, &b, &r.v_star[i], &r.z_star[i], &m.inner).unwrap();
            let dg = ((&gu_a - &gu_b).norm_squared() + (&gy_a - &gy_b).norm_squared()).sqrt();
            let dz = a.distance(&b);
            worst_ratio = worst_ratio.max(dg / (li * dz));
            if dg > li * dz + slack {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("agents {agents:?}, 300 pairs, {violations} violations, largest |grad diff|/(L_i |dual diff|) = {worst_ratio:.3}"),
    )
}

fn dual_rate(m: &MainRun) -> Outcome {
    let gaps = &m.trace.avg_gaps;
    if gaps.len() != 3 {
        return outcome(false, format!("expected 3 running-average gaps, got {gaps:?}"));
    }
    let points: Vec<(f64, f64)> = gaps.iter().map(|&(k, g)| (k as f64, g)).collect();
    let scaled: Vec<f64> = points.iter().map(|(k, g)| k * g).collect();
    let ratio = scaled.iter().cloned().fold(f64::MIN, f64::max) / scaled.iter().cloned().fold(f64::MAX, f64::min);
    match log_log_slope(&points) {
        Ok(slope) => outcome(
            slope <= -0.9 && ratio <= 5.0,
            format!(
                "G at K=100,1000,10000: {:.3e}, {:.3e}, {:.3e}; slope {slope:.3} (need <= -0.9); K*G max/min {ratio:.2} (need <= 5); rho = 0.9/(2L) = {:.3e}",
                points[0].1, points[1].1, points[2].1, m.trace.params.rho
            ),
        ),
        Err(e) => outcome(false, format!("rate fit failed: {e}; gaps {gaps:?}")),
    }
}

fn qualitative(m: &MainRun) -> Outcome {
    let last = m.trace.metrics.last().expect("metrics");
    let obj = last.obj_gap.unwrap_or(f64::INFINITY);
    outcome(
        last.k == ROUNDS && obj < 1e-3 && last.eq_feas < 1e-3 && last.ineq_feas < 1e-3,
        format!(
            "at k={}: objective gap {obj:.3e}, equality violation {:.3e}, inequality violation {:.3e} (tol 1e-3)",
            last.k, last.eq_feas, last.ineq_feas
        ),
    )
}

fn privacy(m: &MainRun) -> Outcome {
    let main_report = audit_messages(&m.trace, P, Q);

    let instance = make_paper_instance::<f64>(5, 4, 1, 3).unwrap();
    let graphs = GraphSequence::new(5, N_CYCLES, GRAPH_SEED).unwrap();
    let params = RunParams::auto(&instance, 50);
    let mut options = RunOptions {
        dual_gap_every: 0,
        keep_messages: true,
        ..Default::default()
    };
    let clean = run(&instance, &graphs, &params, &InnerSolveParams::default(), None, &options).unwrap();
    let clean_report = audit_messages(&clean, 4, 1);

    let round = graphs.round::<f64>(17);
    let (from, to) = round.digraph.edges().find(|(a, b)| a != b).unwrap();
    options.inject = vec![Message {
        round: 17,
        from,
        to,
        kind: PayloadKind::Primal,
        payload: DVector::from_element(instance.agents[from].dim(), 1.0),
    }];
    let rogue = run(&instance, &graphs, &params, &InnerSolveParams::default(), None, &options).unwrap();
    let rogue_report = audit_messages(&rogue, 4, 1);
    let caught = !rogue_report.pass
        && rogue_report
            .violations
            .iter()
            .any(|v| v.round == 17 && v.from == from && v.to == to && v.kind == PayloadKind::Primal);
    outcome(
        main_report.pass && clean_report.pass && caught,
        format!(
            "main run {} messages all dual on graph edges: {}; small run: {}; injected primal message at round 17 on ({from}, {to}) caught: {caught}",
            main_report.total_messages, main_report.pass, clean_report.pass
        ),
    )
}

fn stationarity(m: &MainRun) -> Outcome {
    let tol = m.inner.tol;
    let checked: Vec<_> = m.trace.metrics.iter().filter(|r| r.k > 0 && r.k % 100 == 0).collect();
    let worst = checked.iter().map(|r| r.max_stationarity).fold(0.0, f64::max);
    outcome(
        checked.len() == ROUNDS / 100 && worst <= tol,
        format!("{} checkpoints, largest residual {worst:.3e} (tol {tol:e})", checked.len()),
    )
}

fn determinism(m: &MainRun) -> Outcome {
    let graphs = GraphSequence::new(N_AGENTS, N_CYCLES, GRAPH_SEED).unwrap();
    let params = RunParams::auto(&m.instance, ROUNDS);
    let again = run(&m.instance, &graphs, &params, &m.inner, Some(&m.reference), &main_options()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    std::fs::write(&a, metrics_csv(&m.trace.metrics)).unwrap();
    std::fs::write(&b, metrics_csv(&again.metrics)).unwrap();
    let same = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    outcome(
        same,
        format!("{} metric rows, files identical: {same}", m.trace.metrics.len()),
    )
}

fn main() {
    let started = Instant::now();
    let main = main_run();
    println!(
        "main run: {} rounds in {:.1?}, rho = {:.4e}, gamma = {:.4e}, L = {:.4e}",
        main.trace.rounds_completed, main.trace.wall_time, main.trace.params.rho, main.trace.params.gamma, main.trace.smoothness
    );

    let checks: Vec<Check> = vec![
        ("1 zero-sum invariance", Box::new(|| zero_sum(&main))),
        ("2 weight-matrix validity", Box::new(weight_matrices)),
        ("3 oracle equivalence", Box::new(oracle_equivalence)),
        ("4 degenerate reduction", Box::new(degenerate_reduction)),
        ("5 dual gradient Lipschitz bound", Box::new(|| dual_lipschitz(&main))),
        ("6 running-average dual gap rate", Box::new(|| dual_rate(&main))),
        ("7 optimality and feasibility by k=10^4", Box::new(|| qualitative(&main))),
        ("8 privacy audit", Box::new(|| privacy(&main))),
        ("9 stationarity identity", Box::new(|| stationarity(&main))),
        ("10 determinism", Box::new(|| determinism(&main))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({}) [{:.1?}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed()
        );
    }
    println!("{} of {} criteria passed in {:.1?}", checks.len() - failed, checks.len(), started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
