//! Sampled checks of the standing assumptions for a configured experiment.

use dcopt::graph::{check_strong_connectivity, validate_weight_matrix, GraphSequence, DOUBLY_STOCHASTIC_TOL};
use dcopt::problem::{coupling_residuals, ProblemInstance};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{step_report, ExperimentConfig};
use crate::error::{CliError, Result};

const SAMPLES: usize = 200;
const GRAPH_ROUNDS: usize = 100;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub smoothness: f64,
    pub auto_rho: f64,
    pub auto_gamma: f64,
    pub rho: f64,
    pub gamma: f64,
    pub warnings: Vec<String>,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn point_in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<f64> {
    let dir = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
    let norm = dir.norm();
    if norm == 0.0 {
        return DVector::zeros(d);
    }
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    dir * (r / norm)
}

/// Midpoint inequality `f(tx + (1−t)y) ≤ t f(x) + (1−t) f(y) − μ t(1−t)‖x − y‖²/2`
/// with the modulus each agent claims.
pub fn strong_convexity_check(instance: &ProblemInstance<f64>, rng: &mut ChaCha8Rng) -> Check {
    let radius = instance.operating_radius.max(1.0);
    let mut worst_mu = f64::INFINITY;
    let mut worst_ratio = f64::INFINITY;
    let mut violations = 0;
    for agent in &instance.agents {
        let mu = agent.strong_convexity();
        worst_mu = worst_mu.min(mu);
        let d = agent.dim();
        for _ in 0..SAMPLES {
            let x = point_in_ball(rng, d, radius);
            let y = point_in_ball(rng, d, radius);
            let t: f64 = rng.random_range(0.05..0.95);
            let gap = t * agent.objective(&x) + (1.0 - t) * agent.objective(&y)
                - agent.objective(&(&x * t + &y * (1.0 - t)));
            let curvature = 0.5 * t * (1.0 - t) * (&x - &y).norm_squared();
            if curvature <= 0.0 {
                continue;
            }
            worst_ratio = worst_ratio.min(gap / curvature);
            if gap < mu * curvature - 1e-9 * (1.0 + gap.abs()) {
                violations += 1;
            }
        }
    }
    Check {
        name: "strong convexity",
        pass: worst_mu > 0.0 && violations == 0,
        detail: format!(
            "smallest claimed modulus {worst_mu:.4e}, smallest sampled curvature {worst_ratio:.4e}, {violations} violations"
        ),
    }
}

/// Subgradient norms of every inequality component on the operating ball stay below `L_g`.
pub fn subgradient_bound_check(instance: &ProblemInstance<f64>, rng: &mut ChaCha8Rng) -> Check {
    if instance.q == 0 {
        return Check {
            name: "subgradient bound",
            pass: true,
            detail: "no inequality constraints".into(),
        };
    }
    let radius = instance.operating_radius;
    let mut largest = 0.0f64;
    for agent in &instance.agents {
        for _ in 0..SAMPLES {
            let mut x = point_in_ball(rng, agent.dim(), radius);
            if rng.random_bool(0.25) && x.norm() > 0.0 {
                x *= radius / x.norm();
            }
            for g in &agent.inequalities {
                largest = largest.max(g.subgradient(&x).norm());
            }
        }
    }
    Check {
        name: "subgradient bound",
        pass: largest <= instance.lg * (1.0 + 1e-12),
        detail: format!(
            "largest sampled norm {largest:.4e} vs L_g = {:.4e} on the ball of radius {radius:.4e}",
            instance.lg
        ),
    }
}

/// The recorded strictly feasible point satisfies the equalities and every inequality strictly.
pub fn slater_check(instance: &ProblemInstance<f64>) -> Check {
    let name = "Slater point";
    let Some(point) = &instance.slater else {
        return Check {
            name,
            pass: instance.q == 0,
            detail: if instance.q == 0 {
                "no inequality constraints".into()
            } else {
                "instance records no strictly feasible point".into()
            },
        };
    };
    match coupling_residuals(instance, point) {
        Ok((eq, ineq)) => {
            let scale = 1.0 + instance.agents.iter().map(|a| a.b.norm()).sum::<f64>();
            let eq_norm = eq.norm();
            let margin = ineq.max();
            Check {
                name,
                pass: eq_norm <= 1e-8 * scale && margin < 0.0,
                detail: format!("equality residual {eq_norm:.3e}, largest inequality value {margin:.4e}"),
            }
        }
        Err(e) => Check {
            name,
            pass: false,
            detail: e.to_string(),
        },
    }
}

pub fn graph_check(graphs: &GraphSequence) -> Check {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for k in 1..=GRAPH_ROUNDS {
        let round = graphs.round::<f64>(k);
        let ok = match validate_weight_matrix(&round.weights, &round.digraph) {
            Ok(report) => {
                worst = worst.max(report.max_deviation);
                report.pass
            }
            Err(_) => false,
        };
        if !(ok && check_strong_connectivity(&round.digraph) && round.digraph.has_self_loops()) {
            failures.push(k);
        }
    }
    Check {
        name: "graphs and weights",
        pass: failures.is_empty(),
        detail: format!(
            "rounds 1..={GRAPH_ROUNDS}: {} failing {:?}, largest stochasticity deviation {worst:.2e} (tol {DOUBLY_STOCHASTIC_TOL:e})",
            failures.len(),
            failures
        ),
    }
}

pub fn validate(config: &ExperimentConfig) -> Result<ValidationReport> {
    let instance = config.build_instance()?;
    let params = config.resolve_params(&instance);
    let (l, auto, warnings) = step_report(&instance, &params);
    let seed = config.instance_seed(&instance).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = config.build_graphs(instance.n_agents())?;
    let checks = vec![
        strong_convexity_check(&instance, &mut rng),
        subgradient_bound_check(&instance, &mut rng),
        slater_check(&instance),
        graph_check(&graphs),
    ];
    Ok(ValidationReport {
        smoothness: l,
        auto_rho: auto.rho,
        auto_gamma: auto.gamma,
        rho: params.rho,
        gamma: params.gamma,
        warnings,
        checks,
    })
}

pub fn cmd_validate(config: &ExperimentConfig, out: Option<&std::path::Path>) -> Result<()> {
    let report = validate(config)?;
    println!("L = {:.6e}", report.smoothness);
    println!("auto rho = {:.6e}, auto gamma = {:.6e}", report.auto_rho, report.auto_gamma);
    println!("configured rho = {:.6e}, gamma = {:.6e}", report.rho, report.gamma);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    for c in &report.checks {
        println!("{}: {} ({})", c.name, if c.pass { "pass" } else { "FAIL" }, c.detail);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::config("--out", format!("cannot create {}: {e}", dir.display())))?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        crate::run::write_text(&dir.join("validation.json"), &text)?;
    }
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed, report.checks.len()));
    }
    Ok(())
}
