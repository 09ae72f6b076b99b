use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use dcopt::problem::smoothness_constant;

use crate::config::{ExperimentConfig, ReferenceMode, Step};
use crate::error::{CliError, Result};
use crate::run::{execute, outcome_status, write_text, RunSummary};

pub const SUMMARY_HEADER: &str = "value,status,rounds_completed,rho,gamma,final_obj_gap,final_eq_feas,final_ineq_feas,K,avg_dual_gap,K_times_avg_dual_gap,dual_gap_slope,dir";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Rho,
    Gamma,
    Rounds,
    NCycles,
    InnerTol,
}

impl FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rho" => Self::Rho,
            "gamma" => Self::Gamma,
            "K" | "k" | "rounds" => Self::Rounds,
            "n_cycles" => Self::NCycles,
            "inner_tol" | "inner.tol" => Self::InnerTol,
            _ => {
                return Err(CliError::config(
                    "--param",
                    format!("unknown parameter `{s}` (expected rho, gamma, K, n_cycles or inner_tol)"),
                ))
            }
        })
    }
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            Self::Rho => "rho",
            Self::Gamma => "gamma",
            Self::Rounds => "K",
            Self::NCycles => "n_cycles",
            Self::InnerTol => "inner_tol",
        }
    }
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| CliError::config("--values", format!("`{s}` is not a number: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(CliError::config("--values", "the values list is empty"));
    }
    Ok(values)
}

fn as_count(value: f64, field: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(CliError::config(field, format!("{value} is not a positive integer")))
    }
}

/// Config for one sweep point. With `relative`, `rho` values are multiples of `1/(2L)`
/// and `gamma` values multiples of `1/ρ`.
pub fn point_config(
    base: &ExperimentConfig,
    param: SweepParam,
    value: f64,
    relative: bool,
    smoothness: f64,
) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    match param {
        SweepParam::Rho => {
            let rho = if relative { value / (2.0 * smoothness) } else { value };
            c.run.rho = Step::Value(rho);
        }
        SweepParam::Gamma => {
            let gamma = if relative {
                let rho = base.resolve_params_with(smoothness).0;
                value / rho
            } else {
                value
            };
            c.run.gamma = Step::Value(gamma);
        }
        SweepParam::Rounds => c.run.rounds = as_count(value, "--values")?,
        SweepParam::NCycles => c.graph.n_cycles = as_count(value, "--values")?,
        SweepParam::InnerTol => c.inner.tol = value,
    }
    c.check().map_err(|e| match e {
        CliError::Config { field, reason } => CliError::config(field, format!("{reason} (sweep value {value})")),
        other => other,
    })?;
    Ok(c)
}

impl ExperimentConfig {
    /// `(ρ, γ)` given `L`, without rebuilding the instance.
    pub(crate) fn resolve_params_with(&self, smoothness: f64) -> (f64, f64) {
        let rho = match self.run.rho {
            Step::Value(v) => v,
            Step::Auto(_) => 0.9 / (2.0 * smoothness),
        };
        let gamma = match self.run.gamma {
            Step::Value(v) => v,
            Step::Auto(_) => 1.0 / rho,
        };
        (rho, gamma)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Run one point per value in its own directory and write `sweep_summary.csv`.
/// Returns the number of failed points.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64], relative: bool, out: &Path) -> Result<usize> {
    if values.is_empty() {
        return Err(CliError::config("--values", "the values list is empty"));
    }
    if relative && !matches!(param, SweepParam::Rho | SweepParam::Gamma) {
        return Err(CliError::config("--relative", "only applies to rho and gamma"));
    }
    let instance = base.build_instance()?;
    let l = smoothness_constant(&instance);
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::config("--out", format!("cannot create {}: {e}", out.display())))?;

    // Solve the reference once and let every point load it.
    let mut base = base.clone();
    if base.reference.mode == ReferenceMode::Solve {
        if let Some(r) = base.reference(&instance)? {
            let path = std::path::absolute(out.join("reference.json")).unwrap_or_else(|_| out.join("reference.json"));
            r.save_json(&path)?;
            base.reference.mode = ReferenceMode::Load;
            base.reference.path = Some(path);
        }
    }

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    let mut failures = 0;
    for (i, &value) in values.iter().enumerate() {
        let dir = out.join(format!("{}_{i:02}", param.name()));
        let result = point_config(&base, param, value, relative, l)
            .and_then(|c| execute(&c, &instance, &dir))
            .map(|done| {
                let status = outcome_status(&done.outcome);
                (done, status)
            });
        let (status, s, rho, gamma) = match result {
            Ok((done, Ok(()))) => ("ok".to_string(), done.summary, Some(done.params.rho), Some(done.params.gamma)),
            Ok((done, Err(e))) => (e.to_string(), done.summary, Some(done.params.rho), Some(done.params.gamma)),
            Err(e) => (e.to_string(), RunSummary::default(), None, None),
        };
        if status != "ok" {
            failures += 1;
            log::warn!("sweep point {value}: {status}");
        }
        let (k, g) = s.avg_dual_gap.map_or((None, None), |(k, g)| (Some(k), Some(g)));
        let _ = writeln!(
            summary,
            "{value:e},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&status),
            s.rounds_completed,
            opt(rho),
            opt(gamma),
            opt(s.obj_gap),
            opt(s.eq_feas),
            opt(s.ineq_feas),
            k.map_or_else(String::new, |k| k.to_string()),
            opt(g),
            opt(k.zip(g).map(|(k, g)| k as f64 * g)),
            opt(s.dual_gap_slope),
            dir.display()
        );
    }
    write_text(&out.join("sweep_summary.csv"), &summary)?;
    Ok(failures)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_sweep(base: &ExperimentConfig, param: &str, values: &str, relative: bool, out: &Path) -> Result<()> {
    let param: SweepParam = param.parse()?;
    let values = parse_values(values)?;
    let failures = sweep(base, param, &values, relative, out)?;
    println!("summary: {}", out.join("sweep_summary.csv").display());
    println!("{} of {} points completed", values.len() - failures, values.len());
    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} of {} sweep points failed", values.len())));
    }
    Ok(())
}
