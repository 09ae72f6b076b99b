//! Per-round diagnostics and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::agent::AgentState;
use crate::error::{Error, Result};
use crate::problem::{evaluate_objective, ProblemInstance};
use crate::reference::ReferenceSolution;
use crate::scalar::Real;
use crate::subsolver::stationarity_residual;

pub const METRICS_HEADER: &str =
    "k,obj_gap,eq_feas,ineq_feas,zerosum_v,zerosum_z,dual_consensus,dual_gap,max_stationarity,primal_err_max";

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics<T: Real> {
    pub k: usize,
    /// `|f(x) − f*|`
    pub obj_gap: Option<T>,
    /// `max_i ‖A_i x_i − b_i − v_i‖`
    pub eq_feas: T,
    /// `max_{i,l} [g_il(x_i) − z_il]₊`
    pub ineq_feas: T,
    /// `‖Σ_i v_i‖`
    pub zerosum_v: T,
    /// `‖Σ_i z_i‖`
    pub zerosum_z: T,
    /// `max_i ‖ζ_i − mean_j ζ_j‖`
    pub dual_consensus: T,
    pub dual_gap: Option<T>,
    pub max_stationarity: T,
    pub primal_err_max: Option<T>,
    /// `‖x_i − x*_i‖` per agent.
    pub primal_errors: Option<Vec<T>>,
}

impl<T: Real> RoundMetrics<T> {
    fn fields(&self) -> [Option<T>; 9] {
        [
            self.obj_gap,
            Some(self.eq_feas),
            Some(self.ineq_feas),
            Some(self.zerosum_v),
            Some(self.zerosum_z),
            Some(self.dual_consensus),
            self.dual_gap,
            Some(self.max_stationarity),
            self.primal_err_max,
        ]
    }

    pub fn get(&self, metric: Metric) -> Option<T> {
        let idx = match metric {
            Metric::ObjGap => 0,
            Metric::EqFeas => 1,
            Metric::IneqFeas => 2,
            Metric::ZerosumV => 3,
            Metric::ZerosumZ => 4,
            Metric::DualConsensus => 5,
            Metric::DualGap => 6,
            Metric::MaxStationarity => 7,
            Metric::PrimalErrMax => 8,
        };
        self.fields()[idx]
    }

    pub fn all_finite_nonnegative(&self) -> bool {
        self.fields()
            .iter()
            .flatten()
            .all(|v| v.is_finite() && *v >= T::zero())
    }
}

/// Column names of `metrics.csv` after `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    ObjGap,
    EqFeas,
    IneqFeas,
    ZerosumV,
    ZerosumZ,
    DualConsensus,
    DualGap,
    MaxStationarity,
    PrimalErrMax,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "obj_gap" => Self::ObjGap,
            "eq_feas" => Self::EqFeas,
            "ineq_feas" => Self::IneqFeas,
            "zerosum_v" => Self::ZerosumV,
            "zerosum_z" => Self::ZerosumZ,
            "dual_consensus" => Self::DualConsensus,
            "dual_gap" => Self::DualGap,
            "max_stationarity" => Self::MaxStationarity,
            "primal_err_max" => Self::PrimalErrMax,
            other => return Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        })
    }
}

pub fn compute_round_metrics<T: Real>(
    states: &[AgentState<T>],
    instance: &ProblemInstance<T>,
    reference: Option<&ReferenceSolution<T>>,
    k: usize,
) -> Result<RoundMetrics<T>> {
    if states.len() != instance.n_agents() {
        return Err(Error::DimensionMismatch {
            context: "agent states",
            expected: instance.n_agents(),
            got: states.len(),
        });
    }
    let xs: Vec<DVector<T>> = states.iter().map(|s| s.x.clone()).collect();
    instance.check_blocks(&xs)?;

    let mut eq_feas = T::zero();
    let mut ineq_feas = T::zero();
    let mut max_stationarity = T::zero();
    let mut v_sum = DVector::zeros(instance.p);
    let mut z_sum = DVector::zeros(instance.q);
    let mut u_mean = DVector::zeros(instance.p);
    let mut y_mean = DVector::zeros(instance.q);
    for (agent, s) in instance.agents.iter().zip(states) {
        eq_feas = eq_feas.max(agent.equality_residual(&s.x, &s.v).norm());
        let slack = agent.g(&s.x) - &s.z;
        ineq_feas = slack.iter().fold(ineq_feas, |acc, &g| acc.max(g));
        max_stationarity = max_stationarity.max(stationarity_residual(agent, &s.x, &s.u, &s.y));
        v_sum += &s.v;
        z_sum += &s.z;
        u_mean += &s.u;
        y_mean += &s.y;
    }
    let n = T::of(states.len() as f64);
    u_mean /= n;
    y_mean /= n;
    let dual_consensus = states
        .iter()
        .map(|s| ((&s.u - &u_mean).norm_squared() + (&s.y - &y_mean).norm_squared()).sqrt())
        .fold(T::zero(), |acc, d| acc.max(d));

    let (obj_gap, primal_errors) = match reference {
        Some(r) => {
            let f = evaluate_objective(instance, &xs)?;
            let errs: Vec<T> = xs.iter().zip(&r.x_star).map(|(x, xs)| (x - xs).norm()).collect();
            (Some((f - r.f_star).abs()), Some(errs))
        }
        None => (None, None),
    };
    let primal_err_max = primal_errors
        .as_ref()
        .map(|e| e.iter().fold(T::zero(), |acc, &v| acc.max(v)));

    Ok(RoundMetrics {
        k,
        obj_gap,
        eq_feas,
        ineq_feas,
        zerosum_v: v_sum.norm(),
        zerosum_z: z_sum.norm(),
        dual_consensus,
        dual_gap: None,
        max_stationarity,
        primal_err_max,
        primal_errors,
    })
}

fn fmt_opt<T: Real>(out: &mut String, v: Option<T>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:e}");
    }
}

pub fn metrics_csv<T: Real>(rows: &[RoundMetrics<T>]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.k);
        for v in r.fields() {
            out.push(',');
            fmt_opt(&mut out, v);
        }
        out.push('\n');
    }
    out
}

/// `k,agent_0,…,agent_{N−1}`; only rounds that carry per-agent errors.
pub fn primal_errors_csv<T: Real>(rows: &[RoundMetrics<T>], n_agents: usize) -> String {
    let mut out = String::from("k");
    for i in 0..n_agents {
        let _ = write!(out, ",agent_{i}");
    }
    out.push('\n');
    for r in rows {
        if let Some(errs) = &r.primal_errors {
            let _ = write!(out, "{}", r.k);
            for e in errs {
                let _ = write!(out, ",{e:e}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_metrics_csv<T: Real>(path: impl AsRef<Path>, rows: &[RoundMetrics<T>]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<RoundMetrics<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text).map_err(|reason| Error::Parse {
        path: path.display().to_string(),
        reason,
    })
}

fn parse_metrics_csv(text: &str) -> std::result::Result<Vec<RoundMetrics<f64>>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(format!("line {}: expected 10 columns, got {}", n + 2, cols.len()));
        }
        let k = cols[0].parse().map_err(|e| format!("line {}: {e}", n + 2))?;
        let mut vals = [None; 9];
        for (slot, raw) in vals.iter_mut().zip(&cols[1..]) {
            if !raw.is_empty() {
                *slot = Some(raw.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 2))?);
            }
        }
        let req = |i: usize| vals[i].ok_or_else(|| format!("line {}: missing required column {}", n + 2, i + 1));
        rows.push(RoundMetrics {
            k,
            obj_gap: vals[0],
            eq_feas: req(1)?,
            ineq_feas: req(2)?,
            zerosum_v: req(3)?,
            zerosum_z: req(4)?,
            dual_consensus: req(5)?,
            dual_gap: vals[6],
            max_stationarity: req(7)?,
            primal_err_max: vals[8],
            primal_errors: None,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `log(value)` against `log(k)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points for a rate fit".into()));
    }
    if let Some(&(k, v)) = points.iter().find(|(k, v)| !(*v > 0.0) || !(*k > 0.0)) {
        return Err(Error::NonPositiveMetric(format!("value {v:e} at k = {k}")));
    }
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(k, v)| (k.ln(), v.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs at least two distinct rounds".into()));
    }
    Ok(sxy / sxx)
}

/// Slope of a recorded metric over rounds `k_lo..=k_hi`.
pub fn fit_rate<T: Real>(rows: &[RoundMetrics<T>], metric: Metric, window: (usize, usize)) -> Result<f64> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.k >= window.0 && r.k <= window.1)
        .filter_map(|r| r.get(metric).map(|v| (r.k as f64, v.as_f64())))
        .collect();
    log_log_slope(&points)
}
