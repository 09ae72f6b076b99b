//! Per-agent state and the three update phases of one round.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightMatrix;
use crate::problem::{smoothness_constant, AgentProblem, ProblemInstance};
use crate::scalar::Real;
use crate::subsolver::{minimize_augmented_lagrangian, multiplier_update, InnerSolution, InnerSolveParams};

/// Iterates held by one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AgentState<T: Real> {
    pub x: DVector<T>,
    /// Equality multiplier estimate.
    pub u: DVector<T>,
    /// Inequality multiplier estimate, componentwise nonnegative.
    pub y: DVector<T>,
    /// Mixed equality multipliers.
    pub p: DVector<T>,
    /// Mixed inequality multipliers.
    pub q: DVector<T>,
    /// Equality allocation.
    pub v: DVector<T>,
    /// Inequality allocation.
    pub z: DVector<T>,
}

impl<T: Real> AgentState<T> {
    /// Round-0 state: `p = u0`, `q = y0 ≥ 0`, zero allocations.
    pub fn new(agent: &AgentProblem<T>, x0: DVector<T>, u0: DVector<T>, y0: DVector<T>) -> Result<Self> {
        if x0.len() != agent.dim() {
            return Err(Error::DimensionMismatch {
                context: "initial decision",
                expected: agent.dim(),
                got: x0.len(),
            });
        }
        if u0.len() != agent.p() || y0.len() != agent.q() {
            return Err(Error::DimensionMismatch {
                context: "initial multipliers",
                expected: agent.p() + agent.q(),
                got: u0.len() + y0.len(),
            });
        }
        let y0 = y0.map(|v| v.max(T::zero()));
        Ok(Self {
            x: x0,
            p: u0.clone(),
            q: y0.clone(),
            u: u0,
            y: y0,
            v: DVector::zeros(agent.p()),
            z: DVector::zeros(agent.q()),
        })
    }

    pub fn zero(agent: &AgentProblem<T>) -> Self {
        Self::new(
            agent,
            DVector::zeros(agent.dim()),
            DVector::zeros(agent.p()),
            DVector::zeros(agent.q()),
        )
        .expect("dimensions taken from the agent")
    }
}

/// Penalty `ρ`, allocation step `γ` and number of rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RunParams<T: Real> {
    pub rho: T,
    pub gamma: T,
    pub rounds: usize,
}

impl<T: Real> RunParams<T> {
    /// `ρ = 0.9 / 2L`, `γ = 1/ρ`.
    pub fn auto(instance: &ProblemInstance<T>, rounds: usize) -> Self {
        let l = smoothness_constant(instance);
        let rho = if l > T::zero() {
            T::of(0.9) / (T::of(2.0) * l)
        } else {
            T::one()
        };
        Self {
            rho,
            gamma: T::one() / rho,
            rounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > T::zero()) || !(self.gamma > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "rho and gamma must be positive (rho = {}, gamma = {})",
                self.rho, self.gamma
            )));
        }
        Ok(())
    }

    /// Departures from the step-size conditions of the convergence guarantee.
    pub fn warnings(&self, smoothness: T) -> Vec<String> {
        let mut out = Vec::new();
        if smoothness > T::zero() && self.rho >= T::one() / (T::of(2.0) * smoothness) {
            out.push(format!(
                "rho = {:e} violates rho < 1/(2L) = {:e}",
                self.rho,
                T::one() / (T::of(2.0) * smoothness)
            ));
        }
        let inv = T::one() / self.rho;
        if (self.gamma - inv).abs() > T::floor_tol(1e-12) * inv {
            out.push(format!("gamma = {:e} differs from 1/rho = {:e}", self.gamma, inv));
        }
        out
    }
}

/// Primal step and multiplier updates of one agent, using the mixed multipliers and
/// allocations from the previous round.
pub fn local_update<T: Real>(
    state: &mut AgentState<T>,
    agent: &AgentProblem<T>,
    rho: T,
    inner: &InnerSolveParams<T>,
) -> Result<InnerSolution<T>> {
    let sol = minimize_augmented_lagrangian(
        agent,
        &state.p,
        &state.q,
        &state.v,
        &state.z,
        rho,
        inner,
        Some(&state.x),
    )?;
    let (u, y) = multiplier_update(agent, &sol.x, &state.p, &state.q, &state.v, &state.z, rho);
    state.x = sol.x.clone();
    state.u = u;
    state.y = y;
    Ok(sol)
}

/// Result of mixing at one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedDuals<T: Real> {
    pub p: DVector<T>,
    pub q: DVector<T>,
    /// `u_i − p_i`, accumulated as `Σ_j W_ij (u_i − u_j)`.
    pub u_excess: DVector<T>,
    /// `y_i − q_i`, accumulated likewise.
    pub y_excess: DVector<T>,
}

/// Weighted combination of the multipliers received by agent `i`.
///
/// `sources` yields `(W_ij, u_j, y_j)` for the in-neighbors only. The excess terms are
/// accumulated from differences, so their rounding error scales with the disagreement
/// between agents rather than with the multipliers themselves.
pub fn mix_from<'a, T: Real>(
    own_u: &DVector<T>,
    own_y: &DVector<T>,
    sources: impl IntoIterator<Item = (T, &'a DVector<T>, &'a DVector<T>)>,
) -> Result<MixedDuals<T>> {
    let (p, q) = (own_u.len(), own_y.len());
    let mut out = MixedDuals {
        p: DVector::zeros(p),
        q: DVector::zeros(q),
        u_excess: DVector::zeros(p),
        y_excess: DVector::zeros(q),
    };
    for (w, u, y) in sources {
        if u.len() != p || y.len() != q {
            return Err(Error::DimensionMismatch {
                context: "received multiplier",
                expected: p + q,
                got: u.len() + y.len(),
            });
        }
        out.p.axpy(w, u, T::one());
        out.q.axpy(w, y, T::one());
        out.u_excess.axpy(w, &(own_u - u), T::one());
        out.y_excess.axpy(w, &(own_y - y), T::one());
    }
    Ok(out)
}

/// `p_i = Σ_j W_ij u_j`, `q_i = Σ_j W_ij y_j`, reading only entries with `W_ij > 0`.
pub fn mix_duals<T: Real>(
    all_u: &[DVector<T>],
    all_y: &[DVector<T>],
    w: &WeightMatrix<T>,
    i: usize,
) -> Result<MixedDuals<T>> {
    let n = w.n_agents();
    if all_u.len() != n || all_y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "multipliers per agent vs weight matrix",
            expected: n,
            got: all_u.len().min(all_y.len()),
        });
    }
    if i >= n {
        return Err(Error::UnknownAgent(i));
    }
    mix_from(
        &all_u[i],
        &all_y[i],
        w.row_support(i).map(|(j, wij)| (wij, &all_u[j], &all_y[j])),
    )
}

/// `v ← v + γ(u − p)`, `z ← z + γ(y − q)`, and store the mixed multipliers.
pub fn allocation_update<T: Real>(state: &mut AgentState<T>, mixed: MixedDuals<T>, gamma: T) {
    state.v.axpy(gamma, &mixed.u_excess, T::one());
    state.z.axpy(gamma, &mixed.y_excess, T::one());
    state.p = mixed.p;
    state.q = mixed.q;
}
