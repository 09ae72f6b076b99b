//! Centralized ground truth: the optimum, its multipliers and a zero-sum split of the
//! allocations, plus a direct KKT solve for equality-constrained quadratics.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{evaluate_objective, AgentProblem, Blocks, InequalityTerm, ProblemInstance, ProxTerm, Quadratic};
use crate::scalar::Real;
use crate::subsolver::{
    dual_function_value, minimize_augmented_lagrangian, multiplier_update, stationarity_residual, DualPoint,
    InnerSolveParams,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KktResiduals<T: Real> {
    /// `‖Σ A_i x_i − Σ b_i‖`
    pub equality: T,
    /// `max_l [Σ_i g_il(x_i)]₊`
    pub inequality: T,
    /// `|⟨y, Σ_i g_i(x_i)⟩|`
    pub complementarity: T,
    /// Largest per-agent stationarity residual at `(u*, y*)`.
    pub stationarity: T,
    pub outer_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReferenceSolution<T: Real> {
    pub x_star: Blocks<T>,
    pub f_star: T,
    pub u_star: DVector<T>,
    pub y_star: DVector<T>,
    /// `v*_i = A_i x*_i − b_i`
    pub v_star: Blocks<T>,
    /// `z*_i = g_i(x*_i) − mean_j g_j(x*_j)`
    pub z_star: Blocks<T>,
    pub residuals: KktResiduals<T>,
}

impl<T: Real> ReferenceSolution<T> {
    pub fn zeta_star(&self) -> DualPoint<T> {
        DualPoint::new(self.u_star.clone(), self.y_star.clone())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceOptions<T: Real> {
    /// Bound on multiplier change and constraint residuals at termination.
    pub tol: T,
    pub rho: T,
    pub max_outer: usize,
    pub inner: InnerSolveParams<T>,
}

impl<T: Real> Default for ReferenceOptions<T> {
    fn default() -> Self {
        let tol = T::floor_tol(1e-10);
        Self {
            tol,
            rho: T::of(10.0),
            max_outer: 2000,
            inner: InnerSolveParams {
                tol: tol * T::of(0.1),
                max_iter: 200_000,
                subgradient_fallback: false,
            },
        }
    }
}

impl<T: Real> ReferenceOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        let mut out = Self::default();
        out.tol = tol;
        out.inner.tol = tol * T::of(0.1);
        out
    }
}

/// All agents as one: block-diagonal objective, `[A_1 … A_N] x = Σ b_i`,
/// `g_l(x) = Σ_i g_il(x_i)`.
fn stack<T: Real>(instance: &ProblemInstance<T>) -> Result<AgentProblem<T>> {
    let dims = instance.dims();
    let total: usize = dims.iter().sum();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();

    let mut hessian = DMatrix::zeros(total, total);
    let mut linear = DVector::zeros(total);
    let mut offset = T::zero();
    let mut a = DMatrix::zeros(instance.p, total);
    let mut b = DVector::zeros(instance.p);
    for ((agent, &o), &d) in instance.agents.iter().zip(&offsets).zip(&dims) {
        hessian.view_mut((o, o), (d, d)).copy_from(&agent.smooth.hessian);
        linear.rows_mut(o, d).copy_from(&agent.smooth.linear);
        offset += agent.smooth.offset;
        a.view_mut((0, o), (instance.p, d)).copy_from(&agent.a);
        b += &agent.b;
    }

    let prox = instance.agents[0].prox.clone();
    if instance.agents.iter().any(|ag| ag.prox != prox) {
        return Err(Error::InvalidArgument(
            "centralized solve needs the same prox term for every agent".into(),
        ));
    }

    let stacked_vec = |l: usize, pick: &dyn Fn(&InequalityTerm<T>) -> Option<DVector<T>>| -> Result<DVector<T>> {
        let mut out = DVector::zeros(total);
        for ((agent, &o), &d) in instance.agents.iter().zip(&offsets).zip(&dims) {
            let part = pick(&agent.inequalities[l]).ok_or_else(|| {
                Error::InvalidArgument(format!("inequality component {l} mixes term kinds across agents"))
            })?;
            out.rows_mut(o, d).copy_from(&part);
        }
        Ok(out)
    };
    let mut inequalities = Vec::with_capacity(instance.q);
    for l in 0..instance.q {
        let term = match &instance.agents[0].inequalities[l] {
            InequalityTerm::SquaredDistance { .. } => {
                let center = stacked_vec(l, &|t| match t {
                    InequalityTerm::SquaredDistance { center, .. } => Some(center.clone()),
                    _ => None,
                })?;
                let r2 = instance.agents.iter().fold(T::zero(), |acc, ag| match &ag.inequalities[l] {
                    InequalityTerm::SquaredDistance { radius, .. } => acc + *radius * *radius,
                    _ => acc,
                });
                InequalityTerm::SquaredDistance {
                    center,
                    radius: r2.sqrt(),
                }
            }
            InequalityTerm::Affine { .. } => {
                let normal = stacked_vec(l, &|t| match t {
                    InequalityTerm::Affine { normal, .. } => Some(normal.clone()),
                    _ => None,
                })?;
                let offset = instance.agents.iter().fold(T::zero(), |acc, ag| match &ag.inequalities[l] {
                    InequalityTerm::Affine { offset, .. } => acc + *offset,
                    _ => acc,
                });
                InequalityTerm::Affine { normal, offset }
            }
            InequalityTerm::L1Distance { .. } => {
                let center = stacked_vec(l, &|t| match t {
                    InequalityTerm::L1Distance { center, .. } => Some(center.clone()),
                    _ => None,
                })?;
                let radius = instance.agents.iter().fold(T::zero(), |acc, ag| match &ag.inequalities[l] {
                    InequalityTerm::L1Distance { radius, .. } => acc + *radius,
                    _ => acc,
                });
                InequalityTerm::L1Distance { center, radius }
            }
        };
        inequalities.push(term);
    }
    AgentProblem::new(Quadratic::new(hessian, linear, offset)?, prox, inequalities, a, b)
}

fn split<T: Real>(x: &DVector<T>, dims: &[usize]) -> Blocks<T> {
    let mut o = 0;
    dims.iter()
        .map(|&d| {
            let block = x.rows(o, d).into_owned();
            o += d;
            block
        })
        .collect()
}

/// Method of multipliers on the stacked problem.
pub fn solve_centralized<T: Real>(
    instance: &ProblemInstance<T>,
    opts: &ReferenceOptions<T>,
) -> Result<ReferenceSolution<T>> {
    let whole = stack(instance)?;
    let (p, q) = (instance.p, instance.q);
    let zero_v = DVector::zeros(p);
    let zero_z = DVector::zeros(q);
    let mut x = DVector::zeros(whole.dim());
    let mut u = DVector::zeros(p);
    let mut y = DVector::zeros(q);
    let mut best_violation = T::max_value().unwrap_or(T::one() / T::default_epsilon());
    let mut stalled = 0usize;

    for outer in 1..=opts.max_outer {
        let sol = minimize_augmented_lagrangian(&whole, &u, &y, &zero_v, &zero_z, opts.rho, &opts.inner, Some(&x))?;
        if !sol.converged {
            return Err(Error::NonConvergence(format!(
                "inner solve stalled at residual {:e} in outer iteration {outer}",
                sol.residual
            )));
        }
        x = sol.x;
        let (u_next, y_next) = multiplier_update(&whole, &x, &u, &y, &zero_v, &zero_z, opts.rho);
        let change = ((&u_next - &u).norm_squared() + (&y_next - &y).norm_squared()).sqrt();
        u = u_next;
        y = y_next;

        let eq = whole.equality_residual(&x, &zero_v).norm();
        let g = whole.g(&x);
        let ineq = g.iter().fold(T::zero(), |acc, &gl| acc.max(gl));
        let violation = eq.max(ineq);
        if change <= opts.tol && violation <= opts.tol {
            let x_star = split(&x, &instance.dims());
            return Ok(finish(instance, x_star, u, y, outer));
        }
        // Feasible problems keep shrinking the violation; a long plateau well above
        // tolerance means there is nothing to converge to.
        if violation < best_violation * T::of(0.999) {
            best_violation = violation;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 200 && violation > opts.tol.sqrt() {
                return Err(Error::Infeasible(format!(
                    "constraint violation plateaued at {violation:e} after {outer} iterations"
                )));
            }
        }
    }
    Err(Error::NonConvergence(format!(
        "no convergence within {} outer iterations",
        opts.max_outer
    )))
}

fn finish<T: Real>(
    instance: &ProblemInstance<T>,
    x_star: Blocks<T>,
    u: DVector<T>,
    y: DVector<T>,
    outer_iterations: usize,
) -> ReferenceSolution<T> {
    let n = T::of(instance.n_agents() as f64);
    let g_parts: Vec<DVector<T>> = instance.agents.iter().zip(&x_star).map(|(a, x)| a.g(x)).collect();
    let g_sum = g_parts
        .iter()
        .fold(DVector::zeros(instance.q), |acc, g| acc + g);
    let g_mean = &g_sum / n;
    let v_star: Blocks<T> = instance
        .agents
        .iter()
        .zip(&x_star)
        .map(|(a, x)| &a.a * x - &a.b)
        .collect();
    let z_star: Blocks<T> = g_parts.iter().map(|g| g - &g_mean).collect();
    let eq_sum = v_star.iter().fold(DVector::zeros(instance.p), |acc, v| acc + v);
    let stationarity = instance
        .agents
        .iter()
        .zip(&x_star)
        .map(|(a, x)| stationarity_residual(a, x, &u, &y))
        .fold(T::zero(), |acc, r| acc.max(r));
    let residuals = KktResiduals {
        equality: eq_sum.norm(),
        inequality: g_sum.iter().fold(T::zero(), |acc, &g| acc.max(g)),
        complementarity: y.dot(&g_sum).abs(),
        stationarity,
        outer_iterations,
    };
    let f_star = evaluate_objective(instance, &x_star).expect("blocks come from the instance");
    ReferenceSolution {
        x_star,
        f_star,
        u_star: u,
        y_star: y,
        v_star,
        z_star,
        residuals,
    }
}

/// Solve `[blockdiag(Q_i)  Aᵀ; A  0] [x; u] = [−r; Σ b_i]` by LU.
///
/// Only for quadratic objectives without a prox term and without inequalities.
pub fn solve_kkt_small<T: Real>(instance: &ProblemInstance<T>) -> Result<(Blocks<T>, DVector<T>)> {
    if instance.q != 0 || instance.agents.iter().any(|a| a.prox != ProxTerm::Zero) {
        return Err(Error::InvalidArgument(
            "KKT oracle needs quadratic objectives and equality coupling only".into(),
        ));
    }
    let whole = stack(instance)?;
    let n = whole.dim();
    let p = instance.p;
    let mut kkt = DMatrix::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(&whole.smooth.hessian);
    kkt.view_mut((0, n), (n, p)).copy_from(&whole.a.transpose());
    kkt.view_mut((n, 0), (p, n)).copy_from(&whole.a);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(-&whole.smooth.linear));
    rhs.rows_mut(n, p).copy_from(&whole.b);
    let sol = kkt.lu().solve(&rhs).ok_or(Error::Singular)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok((split(&sol.rows(0, n).into_owned(), &instance.dims()), sol.rows(n, p).into_owned()))
}

/// Per-agent `φ_i(ζ*)`, computed once and reused across gap evaluations.
pub struct DualGapEvaluator<'a, T: Real> {
    instance: &'a ProblemInstance<T>,
    reference: &'a ReferenceSolution<T>,
    inner: InnerSolveParams<T>,
    phi_star: Vec<T>,
}

impl<'a, T: Real> DualGapEvaluator<'a, T> {
    pub fn new(
        instance: &'a ProblemInstance<T>,
        reference: &'a ReferenceSolution<T>,
        inner: &InnerSolveParams<T>,
    ) -> Result<Self> {
        let zeta = reference.zeta_star();
        let phi_star = (0..instance.n_agents())
            .into_par_iter()
            .map(|i| {
                dual_function_value(
                    &instance.agents[i],
                    &zeta,
                    &reference.v_star[i],
                    &reference.z_star[i],
                    inner,
                    Some(&reference.x_star[i]),
                )
                .map(|(v, _)| v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            instance,
            reference,
            inner: inner.clone(),
            phi_star,
        })
    }

    pub fn phi_star(&self) -> &[T] {
        &self.phi_star
    }

    /// `Σ_i (φ_i(ζ*) − φ_i(ζ_i))`, clamped at zero within `−10·tol`.
    pub fn gap(&self, zetas: &[DualPoint<T>]) -> Result<T> {
        if zetas.len() != self.instance.n_agents() {
            return Err(Error::DimensionMismatch {
                context: "dual points per agent",
                expected: self.instance.n_agents(),
                got: zetas.len(),
            });
        }
        let parts = (0..zetas.len())
            .into_par_iter()
            .map(|i| {
                dual_function_value(
                    &self.instance.agents[i],
                    &zetas[i],
                    &self.reference.v_star[i],
                    &self.reference.z_star[i],
                    &self.inner,
                    Some(&self.reference.x_star[i]),
                )
                .map(|(v, _)| self.phi_star[i] - v)
            })
            .collect::<Result<Vec<_>>>()?;
        let gap = parts.into_iter().fold(T::zero(), |a, b| a + b);
        if gap >= T::zero() {
            Ok(gap)
        } else if gap >= -(self.inner.tol * T::of(10.0)) {
            log::debug!("clamping dual gap {gap:e} to zero");
            Ok(T::zero())
        } else {
            Err(Error::NegativeDualGap(gap.as_f64()))
        }
    }
}

pub fn dual_gap<T: Real>(
    instance: &ProblemInstance<T>,
    reference: &ReferenceSolution<T>,
    zetas: &[DualPoint<T>],
    inner: &InnerSolveParams<T>,
) -> Result<T> {
    DualGapEvaluator::new(instance, reference, inner)?.gap(zetas)
}
