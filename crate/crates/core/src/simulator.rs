//! Synchronous execution of the distributed algorithm over a graph sequence.
//!
//! Every round runs three phases separated by barriers: local updates on the
//! previous round's mixed multipliers, one exchange of `(u, y)` along the edges of
//! the new graph, and allocation updates. Agents only ever see what arrives in
//! their inbox, and every delivery passes through an auditing channel.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{allocation_update, local_update, mix_from, AgentState, MixedDuals, RunParams};
use crate::error::{Error, Result};
use crate::graph::{Digraph, GraphSequence};
use crate::metrics::{compute_round_metrics, metrics_csv, primal_errors_csv, RoundMetrics};
use crate::problem::{smoothness_constant, ProblemInstance};
use crate::reference::{DualGapEvaluator, ReferenceSolution};
use crate::scalar::Real;
use crate::subsolver::{DualPoint, InnerSolveParams};

/// Zero-sum residual above which a run is aborted as an implementation bug.
pub const ZERO_SUM_HARD_CAP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PayloadKind {
    DualEquality,
    DualInequality,
    // Never sent by agents; present so that leaks can be represented and caught.
    Primal,
    Allocation,
    Gradient,
    ConstraintValue,
}

impl PayloadKind {
    pub fn is_dual(self) -> bool {
        matches!(self, Self::DualEquality | Self::DualInequality)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::DualEquality => "dual_equality",
            Self::DualInequality => "dual_inequality",
            Self::Primal => "primal",
            Self::Allocation => "allocation",
            Self::Gradient => "gradient",
            Self::ConstraintValue => "constraint_value",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message<T: Real> {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub kind: PayloadKind,
    pub payload: DVector<T>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditViolation {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub kind: PayloadKind,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EdgeCount {
    pub messages: usize,
    pub scalars: usize,
}

/// What crossed the network during a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditLog<T: Real> {
    /// Totals per `(from, to, kind)`.
    pub per_edge: BTreeMap<(usize, usize, PayloadKind), EdgeCount>,
    /// `(round, |E_round|, scalars delivered)` for every exchange.
    pub per_round: Vec<(usize, usize, usize)>,
    pub violations: Vec<AuditViolation>,
    /// Full messages, when requested.
    pub messages: Option<Vec<Message<T>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub pass: bool,
    pub total_messages: usize,
    pub total_scalars: usize,
    /// Every exchange carried exactly `(p + q)·|E_k|` scalars.
    pub scalar_counts_consistent: bool,
    pub violations: Vec<AuditViolation>,
}

/// Delivers messages of one round, checking them against that round's digraph.
struct Channel<'a, T: Real> {
    round: usize,
    digraph: &'a Digraph,
    inboxes: Vec<Vec<Message<T>>>,
}

impl<'a, T: Real> Channel<'a, T> {
    fn new(round: usize, digraph: &'a Digraph) -> Self {
        Self {
            round,
            digraph,
            inboxes: vec![Vec::new(); digraph.n_agents()],
        }
    }

    fn deliver(&mut self, msg: Message<T>, log: &mut AuditLog<T>) {
        let mut reasons = Vec::new();
        if !msg.kind.is_dual() {
            reasons.push(format!("non-dual payload `{}`", msg.kind));
        }
        if msg.round != self.round {
            reasons.push(format!("stamped with round {} during round {}", msg.round, self.round));
        }
        let n = self.digraph.n_agents();
        if msg.from >= n || msg.to >= n || !self.digraph.contains(msg.from, msg.to) {
            reasons.push(format!("edge ({}, {}) not in the round's graph", msg.from, msg.to));
        }
        for reason in reasons {
            log.violations.push(AuditViolation {
                round: self.round,
                from: msg.from,
                to: msg.to,
                kind: msg.kind,
                reason,
            });
        }
        let count = log.per_edge.entry((msg.from, msg.to, msg.kind)).or_default();
        count.messages += 1;
        count.scalars += msg.payload.len();
        if let Some(all) = log.messages.as_mut() {
            all.push(msg.clone());
        }
        if msg.to < n {
            self.inboxes[msg.to].push(msg);
        }
    }
}

pub fn audit_messages<T: Real>(trace: &RunTrace<T>, p: usize, q: usize) -> AuditReport {
    let log = &trace.audit;
    let mut violations = log.violations.clone();
    if let Some(all) = &log.messages {
        for m in all.iter().filter(|m| !m.kind.is_dual()) {
            if !violations.iter().any(|v| v.round == m.round && v.from == m.from && v.to == m.to) {
                violations.push(AuditViolation {
                    round: m.round,
                    from: m.from,
                    to: m.to,
                    kind: m.kind,
                    reason: format!("non-dual payload `{}`", m.kind),
                });
            }
        }
    }
    for (&(from, to, kind), _) in log.per_edge.iter().filter(|(key, _)| !key.2.is_dual()) {
        if !violations.iter().any(|v| v.from == from && v.to == to && v.kind == kind) {
            violations.push(AuditViolation {
                round: usize::MAX,
                from,
                to,
                kind,
                reason: format!("non-dual payload `{kind}`"),
            });
        }
    }
    let total_messages = log.per_edge.values().map(|c| c.messages).sum();
    let total_scalars = log.per_edge.values().map(|c| c.scalars).sum();
    let scalar_counts_consistent = log.per_round.iter().all(|&(_, edges, scalars)| scalars == (p + q) * edges);
    AuditReport {
        pass: violations.is_empty() && scalar_counts_consistent,
        total_messages,
        total_scalars,
        scalar_counts_consistent,
        violations,
    }
}

/// Which rounds get a metrics row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSchedule {
    /// Every round up to and including this one is recorded.
    pub full_until: usize,
    /// After that, every `every`-th round.
    pub every: usize,
}

impl Default for RecordSchedule {
    fn default() -> Self {
        Self {
            full_until: 1000,
            every: 10,
        }
    }
}

impl RecordSchedule {
    pub fn all() -> Self {
        Self {
            full_until: usize::MAX,
            every: 1,
        }
    }

    pub fn records(&self, k: usize, last: usize) -> bool {
        k <= self.full_until || k == last || (self.every > 0 && k % self.every == 0)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions<T: Real> {
    pub record: RecordSchedule,
    /// Dual gap on every `n`-th recorded round (0 disables); needs a reference.
    pub dual_gap_every: usize,
    /// `K` values at which the gap of the running-average multipliers is measured.
    pub avg_gap_checkpoints: Vec<usize>,
    /// Inner solves used for dual-function evaluations.
    pub gap_inner: InnerSolveParams<T>,
    pub keep_messages: bool,
    /// Extra messages pushed through the channel in their stamped round (audit tests).
    pub inject: Vec<Message<T>>,
    pub parallel: bool,
    /// Round-0 states; zero vectors when absent.
    pub initial: Option<Vec<AgentState<T>>>,
    /// Draw `x⁰` from a standard normal with this seed instead of starting at zero.
    /// Only round-0 metrics and the first warm start see it.
    pub x0_seed: Option<u64>,
    /// Keep a copy of all agent states at every recorded round.
    pub keep_states: bool,
}

impl<T: Real> Default for RunOptions<T> {
    fn default() -> Self {
        Self {
            record: RecordSchedule::default(),
            dual_gap_every: 10,
            avg_gap_checkpoints: Vec::new(),
            gap_inner: InnerSolveParams::default(),
            keep_messages: false,
            inject: Vec::new(),
            parallel: true,
            initial: None,
            x0_seed: None,
            keep_states: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RunOutcome {
    Completed,
    InnerFailure { round: usize, agent: usize, reason: String },
    InvariantAbort { round: usize, what: String },
}

impl RunOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, Self::Completed)
    }
}

#[derive(Clone, Debug)]
pub struct RunTrace<T: Real> {
    pub params: RunParams<T>,
    pub inner: InnerSolveParams<T>,
    pub smoothness: T,
    pub warnings: Vec<String>,
    pub metrics: Vec<RoundMetrics<T>>,
    /// `(k, states)` for recorded rounds when requested.
    pub state_history: Vec<(usize, Vec<AgentState<T>>)>,
    /// `(K, Σ_i φ_i(ζ*) − φ_i(ζ̄_i^K))` for each reached checkpoint.
    pub avg_gaps: Vec<(usize, T)>,
    pub audit: AuditLog<T>,
    pub final_states: Vec<AgentState<T>>,
    pub rounds_completed: usize,
    /// Largest `‖Σ_i v_i‖ / (1 + max_i ‖v_i‖)` over all rounds, recorded or not.
    pub worst_zero_sum_v: T,
    /// Largest `‖Σ_i z_i‖ / (1 + max_i ‖v_i‖)` over all rounds.
    pub worst_zero_sum_z: T,
    /// Largest post-update stationarity residual over all rounds.
    pub worst_stationarity: T,
    pub unconverged_inner_solves: usize,
    pub total_inner_iterations: usize,
    /// Rounds in which some `x_i` left the ball on which the subgradient bound holds.
    pub operating_ball_exits: usize,
    pub outcome: RunOutcome,
    pub wall_time: Duration,
}

fn check_zero_sum<T: Real>(states: &[AgentState<T>], p: usize, q: usize) -> (T, T, T) {
    let mut v_sum = DVector::zeros(p);
    let mut z_sum = DVector::zeros(q);
    let mut scale = T::zero();
    for s in states {
        v_sum += &s.v;
        z_sum += &s.z;
        scale = scale.max(s.v.norm());
    }
    (v_sum.norm(), z_sum.norm(), scale)
}

/// Run the algorithm for `params.rounds` rounds.
///
/// Configuration problems are returned as errors; failures during the run truncate
/// the trace and are reported in [`RunTrace::outcome`].
pub fn run<T: Real>(
    instance: &ProblemInstance<T>,
    graphs: &GraphSequence,
    params: &RunParams<T>,
    inner: &InnerSolveParams<T>,
    reference: Option<&ReferenceSolution<T>>,
    options: &RunOptions<T>,
) -> Result<RunTrace<T>> {
    let started = Instant::now();
    let n = instance.n_agents();
    let (p, q) = (instance.p, instance.q);
    if graphs.n_agents() != n {
        return Err(Error::DimensionMismatch {
            context: "graph sequence agents vs instance agents",
            expected: n,
            got: graphs.n_agents(),
        });
    }
    params.validate()?;
    let smoothness = smoothness_constant(instance);
    let warnings = params.warnings(smoothness);
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut states: Vec<AgentState<T>> = match &options.initial {
        Some(init) => {
            if init.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "initial states",
                    expected: n,
                    got: init.len(),
                });
            }
            init.iter()
                .zip(&instance.agents)
                .map(|(s, a)| AgentState::new(a, s.x.clone(), s.u.clone(), s.y.clone()))
                .collect::<Result<_>>()?
        }
        None => instance.agents.iter().map(AgentState::zero).collect(),
    };
    if let Some(seed) = options.x0_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut states {
            s.x = DVector::from_fn(s.x.len(), |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
        }
    }

    let gap_eval = match reference {
        Some(r) if options.dual_gap_every > 0 || !options.avg_gap_checkpoints.is_empty() => {
            Some(DualGapEvaluator::new(instance, r, &options.gap_inner)?)
        }
        _ => None,
    };

    let mut trace = RunTrace {
        params: params.clone(),
        inner: inner.clone(),
        smoothness,
        warnings,
        metrics: Vec::new(),
        state_history: Vec::new(),
        avg_gaps: Vec::new(),
        audit: AuditLog {
            messages: options.keep_messages.then(Vec::new),
            ..Default::default()
        },
        final_states: Vec::new(),
        rounds_completed: 0,
        worst_zero_sum_v: T::zero(),
        worst_zero_sum_z: T::zero(),
        worst_stationarity: T::zero(),
        unconverged_inner_solves: 0,
        total_inner_iterations: 0,
        operating_ball_exits: 0,
        outcome: RunOutcome::Completed,
        wall_time: Duration::ZERO,
    };

    let rounds = params.rounds;
    let mut records_seen = 0usize;
    let mut record = |k: usize, states: &[AgentState<T>], trace: &mut RunTrace<T>| -> Result<()> {
        if !options.record.records(k, rounds) {
            return Ok(());
        }
        let mut m = compute_round_metrics(states, instance, reference, k)?;
        if let Some(eval) = &gap_eval {
            if options.dual_gap_every > 0 && records_seen % options.dual_gap_every == 0 {
                let zetas: Vec<DualPoint<T>> =
                    states.iter().map(|s| DualPoint::new(s.u.clone(), s.y.clone())).collect();
                m.dual_gap = Some(eval.gap(&zetas)?);
            }
        }
        records_seen += 1;
        trace.metrics.push(m);
        if options.keep_states {
            trace.state_history.push((k, states.to_vec()));
        }
        Ok(())
    };
    record(0, &states, &mut trace)?;

    let mut u_sums: Vec<DVector<T>> = vec![DVector::zeros(p); n];
    let mut y_sums: Vec<DVector<T>> = vec![DVector::zeros(q); n];
    let mut checkpoints: Vec<usize> = options.avg_gap_checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut injected: BTreeMap<usize, Vec<&Message<T>>> = BTreeMap::new();
    for m in &options.inject {
        injected.entry(m.round).or_default().push(m);
    }

    for k in 0..rounds {
        // running averages cover ζ^0, …, ζ^{K−1}
        for (s, (us, ys)) in states.iter().zip(u_sums.iter_mut().zip(y_sums.iter_mut())) {
            *us += &s.u;
            *ys += &s.y;
        }
        if let (Some(eval), true) = (&gap_eval, checkpoints.contains(&(k + 1))) {
            let kk = T::of((k + 1) as f64);
            let avg: Vec<DualPoint<T>> = u_sums
                .iter()
                .zip(&y_sums)
                .map(|(u, y)| DualPoint::new(u / kk, y / kk))
                .collect();
            trace.avg_gaps.push((k + 1, eval.gap(&avg)?));
        }

        // local phase
        let update = |(i, (s, a)): (usize, (&mut AgentState<T>, &crate::problem::AgentProblem<T>))| {
            local_update(s, a, params.rho, inner).map_err(|e| (i, e))
        };
        let results: Vec<_> = if options.parallel {
            states.par_iter_mut().zip(instance.agents.par_iter()).enumerate().map(update).collect()
        } else {
            states.iter_mut().zip(instance.agents.iter()).enumerate().map(update).collect()
        };
        let mut failure = None;
        for r in results {
            match r {
                Ok(sol) => {
                    trace.total_inner_iterations += sol.iterations;
                    trace.worst_stationarity = trace.worst_stationarity.max(sol.residual);
                    if !sol.converged {
                        trace.unconverged_inner_solves += 1;
                        log::debug!("inner solve stopped at residual {:e} in round {}", sol.residual, k + 1);
                    }
                }
                Err((agent, e)) => {
                    failure.get_or_insert((agent, e.to_string()));
                }
            }
        }
        if let Some((agent, reason)) = failure {
            trace.outcome = RunOutcome::InnerFailure {
                round: k + 1,
                agent,
                reason,
            };
            break;
        }

        // communication phase on the graph of round k + 1
        let graph = graphs.round::<T>(k + 1);
        let mut channel = Channel::new(k + 1, &graph.digraph);
        let mut edges = 0usize;
        for (j, s) in states.iter().enumerate() {
            for i in graph.digraph.out_neighbors(j)? {
                edges += 1;
                for (kind, payload) in [(PayloadKind::DualEquality, &s.u), (PayloadKind::DualInequality, &s.y)] {
                    channel.deliver(
                        Message {
                            round: k + 1,
                            from: j,
                            to: i,
                            kind,
                            payload: payload.clone(),
                        },
                        &mut trace.audit,
                    );
                }
            }
        }
        trace.audit.per_round.push((k + 1, edges, edges * (p + q)));
        for m in injected.get(&(k + 1)).into_iter().flatten() {
            channel.deliver((*m).clone(), &mut trace.audit);
        }

        // mixing reads only the inbox; weights are the receiver's own row
        let mix = |i: usize| -> Result<MixedDuals<T>> {
            let inbox = &channel.inboxes[i];
            let mut sources = Vec::new();
            for (j, w) in graph.weights.row_support(i) {
                let find = |kind| {
                    inbox
                        .iter()
                        .find(|m| m.from == j && m.kind == kind)
                        .map(|m| &m.payload)
                        .ok_or_else(|| Error::InvariantViolation {
                            round: k + 1,
                            what: format!("agent {i} expected {kind} from in-neighbor {j}"),
                        })
                };
                sources.push((w, find(PayloadKind::DualEquality)?, find(PayloadKind::DualInequality)?));
            }
            mix_from(&states[i].u, &states[i].y, sources)
        };
        let mixed: Vec<MixedDuals<T>> = if options.parallel {
            (0..n).into_par_iter().map(mix).collect::<Result<_>>()?
        } else {
            (0..n).map(mix).collect::<Result<_>>()?
        };

        // allocation phase
        for (s, m) in states.iter_mut().zip(mixed) {
            allocation_update(s, m, params.gamma);
        }
        trace.rounds_completed = k + 1;

        let radius = instance.operating_radius;
        if radius > T::zero() && states.iter().any(|s| s.x.norm() > radius) {
            if trace.operating_ball_exits == 0 {
                log::warn!("iterates left the operating ball of radius {radius:e} in round {}", k + 1);
            }
            trace.operating_ball_exits += 1;
        }

        let (v_res, z_res, scale) = check_zero_sum(&states, p, q);
        let denom = T::one() + scale;
        trace.worst_zero_sum_v = trace.worst_zero_sum_v.max(v_res / denom);
        trace.worst_zero_sum_z = trace.worst_zero_sum_z.max(z_res / denom);
        let cap = T::of(ZERO_SUM_HARD_CAP);
        if !(v_res <= cap * denom && z_res <= cap * denom) {
            trace.outcome = RunOutcome::InvariantAbort {
                round: k + 1,
                what: format!("zero-sum residuals {v_res:e} (v), {z_res:e} (z)"),
            };
            break;
        }
        record(k + 1, &states, &mut trace)?;
    }

    trace.final_states = states;
    trace.wall_time = started.elapsed();
    Ok(trace)
}

#[derive(Serialize)]
struct ParamsEcho<'a> {
    rho: f64,
    gamma: f64,
    rounds: usize,
    smoothness: f64,
    inner_tol: f64,
    inner_max_iter: usize,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct RunSummary<'a> {
    outcome: &'a RunOutcome,
    rounds_completed: usize,
    worst_zero_sum_v: f64,
    worst_zero_sum_z: f64,
    worst_stationarity: f64,
    unconverged_inner_solves: usize,
    total_inner_iterations: usize,
    operating_ball_exits: usize,
    wall_time_s: f64,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn to_json<S: Serialize>(dir: &Path, name: &str, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: dir.join(name).display().to_string(),
        reason: e.to_string(),
    })?;
    write(dir, name, &text)
}

/// Write `metrics.csv`, `primal_errors.csv`, `avg_gap.csv`, `messages_audit.csv`,
/// `params.json`, `summary.json` and `final_state.json` into `dir`.
pub fn write_trace<T: Real>(trace: &RunTrace<T>, dir: impl AsRef<Path>, n_agents: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "metrics.csv", &metrics_csv(&trace.metrics))?;
    if trace.metrics.iter().any(|m| m.primal_errors.is_some()) {
        write(dir, "primal_errors.csv", &primal_errors_csv(&trace.metrics, n_agents))?;
    }

    let mut avg = String::from("K,avg_dual_gap\n");
    for (k, g) in &trace.avg_gaps {
        avg.push_str(&format!("{k},{g:e}\n"));
    }
    write(dir, "avg_gap.csv", &avg)?;

    let mut audit = String::from("from,to,kind,messages,scalars\n");
    for (&(from, to, kind), c) in &trace.audit.per_edge {
        audit.push_str(&format!("{from},{to},{kind},{},{}\n", c.messages, c.scalars));
    }
    write(dir, "messages_audit.csv", &audit)?;

    to_json(
        dir,
        "params.json",
        &ParamsEcho {
            rho: trace.params.rho.as_f64(),
            gamma: trace.params.gamma.as_f64(),
            rounds: trace.params.rounds,
            smoothness: trace.smoothness.as_f64(),
            inner_tol: trace.inner.tol.as_f64(),
            inner_max_iter: trace.inner.max_iter,
            warnings: &trace.warnings,
        },
    )?;
    to_json(
        dir,
        "summary.json",
        &RunSummary {
            outcome: &trace.outcome,
            rounds_completed: trace.rounds_completed,
            worst_zero_sum_v: trace.worst_zero_sum_v.as_f64(),
            worst_zero_sum_z: trace.worst_zero_sum_z.as_f64(),
            worst_stationarity: trace.worst_stationarity.as_f64(),
            unconverged_inner_solves: trace.unconverged_inner_solves,
            total_inner_iterations: trace.total_inner_iterations,
            operating_ball_exits: trace.operating_ball_exits,
            wall_time_s: trace.wall_time.as_secs_f64(),
        },
    )?;
    to_json(dir, "final_state.json", &trace.final_states)
}
