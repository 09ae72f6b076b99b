//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use dcopt::agent::RunParams;
use dcopt::graph::GraphSequence;
use dcopt::problem::{make_quadratic_equality_instance, smoothness_constant, PaperFamily, ProblemInstance};
use dcopt::reference::{solve_centralized, ReferenceOptions, ReferenceSolution};
use dcopt::simulator::{RecordSchedule, RunOptions};
use dcopt::subsolver::InnerSolveParams;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub graph: GraphSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub inner: InnerSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Paper {
        n_agents: usize,
        p: usize,
        q: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l1_weight: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius_range: Option<(f64, f64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center_scale: Option<f64>,
    },
    QuadraticEquality {
        centers: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    /// JSON instance written by `ProblemInstance::save_json`.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub n_cycles: usize,
    pub seed: u64,
    /// Weights on `[identity, cycle_1, ...]`; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing_weights: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Auto {
    #[serde(rename = "auto")]
    Auto,
}

/// A step size given as a number or `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Step {
    Value(f64),
    Auto(Auto),
}

impl Default for Step {
    fn default() -> Self {
        Step::Auto(Auto::Auto)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    #[default]
    Zero,
    /// Standard normal `x⁰` drawn from the instance seed.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub rho: Step,
    #[serde(default)]
    pub gamma: Step,
    pub rounds: usize,
    #[serde(default)]
    pub x0: StartPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub subgradient_fallback: bool,
}

impl Default for InnerSpec {
    fn default() -> Self {
        let d = InnerSolveParams::<f64>::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            subgradient_fallback: d.subgradient_fallback,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    #[default]
    Solve,
    Load,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSpec {
    pub mode: ReferenceMode,
    /// File to read with `mode = "load"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub tol: f64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            mode: ReferenceMode::Solve,
            path: None,
            tol: ReferenceOptions::<f64>::default().tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Every round up to here gets a metrics row, then every `every`-th.
    pub full_until: usize,
    pub every: usize,
    /// Dual gap on every n-th recorded row; 0 disables.
    pub dual_gap_every: usize,
    /// Running-average gap checkpoints; powers of ten up to `rounds` plus `rounds` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_gap_checkpoints: Option<Vec<usize>>,
    /// Rounds of edge lists to export to `edges.csv`.
    pub export_edge_rounds: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        let r = RecordSchedule::default();
        Self {
            dir: PathBuf::from("out"),
            full_until: r.full_until,
            every: r.every,
            dual_gap_every: 10,
            avg_gap_checkpoints: None,
            export_edge_rounds: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file. Relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Config { field, reason } => CliError::config(field, format!("{} ({})", reason, path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| {
                let line = text[..s.start].lines().count().max(1);
                format!("line {line}")
            });
            CliError::config(field, e.message().trim().to_string())
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InstanceSpec::File { path } = &mut self.instance {
            join(path);
        }
        if let Some(p) = &mut self.reference.path {
            join(p);
        }
    }

    /// Field-level checks that do not need the instance.
    pub fn check(&self) -> Result<()> {
        let positive = |field: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(CliError::config(field, "must be positive"))
            }
        };
        match &self.instance {
            InstanceSpec::Paper {
                n_agents,
                p,
                mu,
                max_dim,
                radius_range,
                ..
            } => {
                positive("instance.n_agents", *n_agents > 0)?;
                positive("instance.p", *p > 0)?;
                positive("instance.mu", mu.is_none_or(|m| m > 0.0))?;
                positive("instance.max_dim", max_dim.is_none_or(|d| d > 0))?;
                if let Some((lo, hi)) = radius_range {
                    if !(0.0 < *lo && lo <= hi) {
                        return Err(CliError::config("instance.radius_range", "needs 0 < lo <= hi"));
                    }
                }
            }
            InstanceSpec::QuadraticEquality { centers, b } => {
                if centers.is_empty() {
                    return Err(CliError::config("instance.centers", "at least one center required"));
                }
                if let Some(c) = centers.iter().find(|c| c.len() != b.len()) {
                    return Err(CliError::config(
                        "instance.centers",
                        format!("center of length {} does not match b of length {}", c.len(), b.len()),
                    ));
                }
            }
            InstanceSpec::File { .. } => {}
        }
        positive("graph.n_cycles", self.graph.n_cycles > 0)?;
        if let Some(w) = &self.graph.mixing_weights {
            if w.len() != self.graph.n_cycles + 1 {
                return Err(CliError::config(
                    "graph.mixing_weights",
                    format!("needs n_cycles + 1 = {} entries, got {}", self.graph.n_cycles + 1, w.len()),
                ));
            }
            if w.iter().any(|&x| !(x > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(CliError::config("graph.mixing_weights", "must be positive and sum to 1"));
            }
        }
        positive("run.rounds", self.run.rounds > 0)?;
        for (field, step) in [("run.rho", self.run.rho), ("run.gamma", self.run.gamma)] {
            if let Step::Value(v) = step {
                positive(field, v > 0.0 && v.is_finite())?;
            }
        }
        positive("inner.tol", self.inner.tol > 0.0)?;
        positive("inner.max_iter", self.inner.max_iter > 0)?;
        positive("reference.tol", self.reference.tol > 0.0)?;
        if self.reference.mode == ReferenceMode::Load && self.reference.path.is_none() {
            return Err(CliError::config("reference.path", "required when mode = \"load\""));
        }
        positive("output.every", self.output.every > 0)?;
        Ok(())
    }

    pub fn build_instance(&self) -> Result<ProblemInstance<f64>> {
        Ok(match &self.instance {
            InstanceSpec::Paper {
                n_agents,
                p,
                q,
                seed,
                mu,
                max_dim,
                l1_weight,
                radius_range,
                center_scale,
            } => {
                let mut family = PaperFamily::new(*n_agents, *p, *q, *seed);
                family.mu = mu.unwrap_or(family.mu);
                family.max_dim = max_dim.unwrap_or(family.max_dim);
                family.l1_weight = l1_weight.unwrap_or(family.l1_weight);
                family.radius_range = radius_range.unwrap_or(family.radius_range);
                family.center_scale = center_scale.unwrap_or(family.center_scale);
                family.generate()?
            }
            InstanceSpec::QuadraticEquality { centers, b } => {
                let centers: Vec<DVector<f64>> = centers.iter().map(|c| DVector::from_column_slice(c)).collect();
                make_quadratic_equality_instance(&centers, &DVector::from_column_slice(b))?
            }
            InstanceSpec::File { path } => ProblemInstance::load_json(path)?,
        })
    }

    /// Seed of the instance, if it has one.
    pub fn instance_seed(&self, instance: &ProblemInstance<f64>) -> Option<u64> {
        match &self.instance {
            InstanceSpec::Paper { seed, .. } => Some(*seed),
            _ => instance.generator.as_ref().and_then(|g| g.seed),
        }
    }

    pub fn build_graphs(&self, n_agents: usize) -> Result<GraphSequence> {
        let graphs = GraphSequence::new(n_agents, self.graph.n_cycles, self.graph.seed)?;
        Ok(match &self.graph.mixing_weights {
            Some(w) => graphs.with_mixing_weights(w.clone())?,
            None => graphs,
        })
    }

    /// Resolve `"auto"` steps: `ρ = 0.9/(2L)`, `γ = 1/ρ`.
    pub fn resolve_params(&self, instance: &ProblemInstance<f64>) -> RunParams<f64> {
        let auto = RunParams::auto(instance, self.run.rounds);
        let rho = match self.run.rho {
            Step::Value(v) => v,
            Step::Auto(_) => auto.rho,
        };
        let gamma = match self.run.gamma {
            Step::Value(v) => v,
            Step::Auto(_) => 1.0 / rho,
        };
        RunParams {
            rho,
            gamma,
            rounds: self.run.rounds,
        }
    }

    pub fn inner_params(&self) -> InnerSolveParams<f64> {
        InnerSolveParams {
            tol: self.inner.tol,
            max_iter: self.inner.max_iter,
            subgradient_fallback: self.inner.subgradient_fallback,
        }
    }

    pub fn reference(&self, instance: &ProblemInstance<f64>) -> Result<Option<ReferenceSolution<f64>>> {
        match self.reference.mode {
            ReferenceMode::None => Ok(None),
            ReferenceMode::Load => {
                let path = self.reference.path.as_ref().expect("checked in check()");
                let r = ReferenceSolution::load_json(path)?;
                instance.check_blocks(&r.x_star).map_err(|e| {
                    CliError::config("reference.path", format!("{} does not fit the instance: {e}", path.display()))
                })?;
                Ok(Some(r))
            }
            ReferenceMode::Solve => {
                let mut options = ReferenceOptions::with_tol(self.reference.tol);
                options.inner.subgradient_fallback = self.inner.subgradient_fallback;
                solve_centralized(instance, &options)
                    .map(Some)
                    .map_err(|e| CliError::Solver(format!("reference solve: {e}")))
            }
        }
    }

    pub fn run_options(&self, instance: &ProblemInstance<f64>, has_reference: bool) -> Result<RunOptions<f64>> {
        let rounds = self.run.rounds;
        let checkpoints = match &self.output.avg_gap_checkpoints {
            Some(c) => c.clone(),
            None => decades(rounds),
        };
        let x0_seed = match self.run.x0 {
            StartPoint::Zero => None,
            StartPoint::Random => Some(self.instance_seed(instance).ok_or_else(|| {
                CliError::config("run.x0", "\"random\" needs an instance with a seed")
            })?),
        };
        Ok(RunOptions {
            record: RecordSchedule {
                full_until: self.output.full_until,
                every: self.output.every,
            },
            dual_gap_every: if has_reference { self.output.dual_gap_every } else { 0 },
            avg_gap_checkpoints: if has_reference { checkpoints } else { Vec::new() },
            gap_inner: self.inner_params(),
            x0_seed,
            ..Default::default()
        })
    }

    /// Config with steps resolved to numbers, as echoed next to the results.
    pub fn echo(&self, params: &RunParams<f64>) -> Self {
        let mut echo = self.clone();
        echo.run.rho = Step::Value(params.rho);
        echo.run.gamma = Step::Value(params.gamma);
        echo.run.rounds = params.rounds;
        let absolute = |p: &mut PathBuf| {
            if let Ok(abs) = std::path::absolute(&*p) {
                *p = abs;
            }
        };
        if let InstanceSpec::File { path } = &mut echo.instance {
            absolute(path);
        }
        if let Some(p) = &mut echo.reference.path {
            absolute(p);
        }
        absolute(&mut echo.output.dir);
        echo
    }
}

/// `10, 100, ...` below `rounds`, then `rounds`.
pub fn decades(rounds: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 10;
    while k < rounds {
        out.push(k);
        k *= 10;
    }
    out.push(rounds);
    out
}

/// `L`, the auto steps and warnings for the configured steps.
pub fn step_report(instance: &ProblemInstance<f64>, params: &RunParams<f64>) -> (f64, RunParams<f64>, Vec<String>) {
    let l = smoothness_constant(instance);
    (l, RunParams::auto(instance, params.rounds), params.warnings(l))
}
