use std::path::{Path, PathBuf};

use dcopt::agent::RunParams;
use dcopt::metrics::log_log_slope;
use dcopt::problem::ProblemInstance;
use dcopt::simulator::{run, write_trace, RunOutcome, RunTrace};

use crate::config::{step_report, ExperimentConfig};
use crate::error::{CliError, Result};

/// Final numbers of a run, as reported on stdout and in sweep summaries.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub rounds_completed: usize,
    pub obj_gap: Option<f64>,
    pub eq_feas: Option<f64>,
    pub ineq_feas: Option<f64>,
    pub avg_dual_gap: Option<(usize, f64)>,
    pub dual_gap_slope: Option<f64>,
}

impl RunSummary {
    fn of(trace: &RunTrace<f64>) -> Self {
        let last = trace.metrics.last();
        let slope = if trace.avg_gaps.len() >= 2 {
            let points: Vec<(f64, f64)> = trace.avg_gaps.iter().map(|&(k, g)| (k as f64, g)).collect();
            log_log_slope(&points).ok()
        } else {
            None
        };
        Self {
            rounds_completed: trace.rounds_completed,
            obj_gap: last.and_then(|m| m.obj_gap),
            eq_feas: last.map(|m| m.eq_feas),
            ineq_feas: last.map(|m| m.ineq_feas),
            avg_dual_gap: trace.avg_gaps.last().copied(),
            dual_gap_slope: slope,
        }
    }
}

/// Everything `run` produced, before the outcome is turned into an exit status.
pub struct Completed {
    pub dir: PathBuf,
    pub params: RunParams<f64>,
    pub summary: RunSummary,
    pub outcome: RunOutcome,
}

/// Build, solve, simulate and write the output directory.
pub fn execute(config: &ExperimentConfig, instance: &ProblemInstance<f64>, dir: &Path) -> Result<Completed> {
    let params = config.resolve_params(instance);
    let (l, auto, warnings) = step_report(instance, &params);
    log::info!("L = {l:e}, auto rho = {:e}, auto gamma = {:e}", auto.rho, auto.gamma);
    for w in &warnings {
        log::warn!("{w}");
    }

    let graphs = config.build_graphs(instance.n_agents())?;
    let reference = config.reference(instance)?;
    let options = config.run_options(instance, reference.is_some())?;

    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::config("--out", format!("cannot create {}: {e}", dir.display())))?;
    let mut echo = config.echo(&params);
    echo.output.dir = std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf());
    write_text(&dir.join("config.toml"), &echo.to_toml())?;
    if let Some(r) = &reference {
        r.save_json(dir.join("reference.json"))?;
    }
    if config.output.export_edge_rounds > 0 {
        graphs.write_edge_csv(dir.join("edges.csv"), config.output.export_edge_rounds)?;
    }

    let trace = run(instance, &graphs, &params, &config.inner_params(), reference.as_ref(), &options)?;
    write_trace(&trace, dir, instance.n_agents())?;
    Ok(Completed {
        dir: dir.to_path_buf(),
        params,
        summary: RunSummary::of(&trace),
        outcome: trace.outcome,
    })
}

/// Map a finished run to the command result.
pub fn outcome_status(outcome: &RunOutcome) -> Result<()> {
    match outcome {
        RunOutcome::Completed => Ok(()),
        RunOutcome::InnerFailure { round, agent, reason } => Err(CliError::Solver(format!(
            "inner solve failed at round {round}, agent {agent}: {reason}"
        ))),
        RunOutcome::InvariantAbort { round, what } => Err(CliError::Invariant(format!("round {round}: {what}"))),
    }
}

pub fn cmd_run(config: &ExperimentConfig) -> Result<()> {
    let instance = config.build_instance()?;
    let done = execute(config, &instance, &config.output.dir)?;
    let (l, auto, warnings) = step_report(&instance, &done.params);
    println!("output: {}", done.dir.display());
    println!(
        "L = {l:.6e}, rho = {:.6e}, gamma = {:.6e} (auto: {:.6e}, {:.6e})",
        done.params.rho, done.params.gamma, auto.rho, auto.gamma
    );
    for w in warnings {
        println!("warning: {w}");
    }
    let s = &done.summary;
    println!("rounds completed: {}", s.rounds_completed);
    println!("objective gap: {}", fmt_opt(s.obj_gap));
    println!("equality violation: {}", fmt_opt(s.eq_feas));
    println!("inequality violation: {}", fmt_opt(s.ineq_feas));
    if let Some((k, g)) = s.avg_dual_gap {
        println!("running-average dual gap at K = {k}: {g:.6e}");
    }
    outcome_status(&done.outcome)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::config("--out", format!("cannot write {}: {e}", path.display())))
}
