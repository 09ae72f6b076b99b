//! Full-size run on the randomized benchmark family, printing convergence milestones.
//!
//! `cargo run --release -p dcopt-core --example paper_run -- [rounds] [seed] [rho multiplier]`

use std::time::Instant;

use dcopt::agent::RunParams;
use dcopt::graph::GraphSequence;
use dcopt::problem::make_paper_instance;
use dcopt::reference::{solve_centralized, ReferenceOptions};
use dcopt::simulator::{run, RunOptions};
use dcopt::subsolver::InnerSolveParams;

fn main() -> dcopt::Result<()> {
    let mut args = std::env::args().skip(1);
    let rounds: usize = args.next().map_or(10_000, |a| a.parse().expect("rounds"));
    let seed: u64 = args.next().map_or(1, |a| a.parse().expect("seed"));
    let rho_scale: f64 = args.next().map_or(1.0, |a| a.parse().expect("rho scale"));

    let inst = make_paper_instance::<f64>(20, 25, 1, seed)?;
    let t = Instant::now();
    let reference = solve_centralized(&inst, &ReferenceOptions::default())?;
    println!("reference: f* = {:e}, y* = {}, {:?} ({:.2?})", reference.f_star, reference.y_star[0], reference.residuals, t.elapsed());

    let mut params = RunParams::auto(&inst, rounds);
    params.rho *= rho_scale;
    params.gamma = 1.0 / params.rho;
    println!("L = {:e}, rho = {:e}, gamma = {:e}", dcopt::problem::smoothness_constant(&inst), params.rho, params.gamma);
    let graphs = GraphSequence::new(20, 2, seed)?;
    let options = RunOptions {
        avg_gap_checkpoints: vec![100, 1000, 10_000, 100_000],
        ..Default::default()
    };
    let trace = run(&inst, &graphs, &params, &InnerSolveParams::default(), Some(&reference), &options)?;
    for m in trace.metrics.iter().filter(|m| m.k.is_power_of_two() || m.k % 1000 == 0) {
        println!(
            "k={:>6} obj={:.3e} eq={:.3e} ineq={:.3e} cons={:.3e} gap={:?} stat={:.2e} perr={:.3e}",
            m.k,
            m.obj_gap.unwrap(),
            m.eq_feas,
            m.ineq_feas,
            m.dual_consensus,
            m.dual_gap,
            m.max_stationarity,
            m.primal_err_max.unwrap()
        );
    }
    println!("avg gaps: {:?}", trace.avg_gaps);
    println!(
        "outcome {:?}, zero-sum v {:e} z {:e}, unconverged {}, inner iters {}, wall {:.2?}",
        trace.outcome,
        trace.worst_zero_sum_v,
        trace.worst_zero_sum_z,
        trace.unconverged_inner_solves,
        trace.total_inner_iterations,
        trace.wall_time
    );
    Ok(())
}
