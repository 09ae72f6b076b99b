//! Local composite minimization.
//!
//! Both the augmented Lagrangian step of an agent and the evaluation of its dual
//! function reduce to `min_x  S(x) + h(x)` where `h` is the prox-friendly part of `f_i`
//! and `S` is smooth:
//!
//! ```text
//! S(x) = ½xᵀ(Q + ρAᵀA)x + ⟨r + Aᵀ(λ − ρw), x⟩ + Σ_l ψ_l(g_l(x)) + const,   w = b + v
//! ```
//!
//! with `ψ_l(s) = [q_l + ρ(s − z_l)]₊² / 2ρ` for the augmented Lagrangian and
//! `ψ_l(s) = y_l (s − z_l)` (`ρ = 0`) for the plain Lagrangian. The problem is solved by
//! FISTA with backtracking and function-value restart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::AgentProblem;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolveParams<T: Real> {
    /// Target for the unit-step prox-gradient residual of the Lagrangian.
    pub tol: T,
    pub max_iter: usize,
    /// Use diminishing-step subgradient descent when an inequality term is nonsmooth.
    pub subgradient_fallback: bool,
}

impl<T: Real> Default for InnerSolveParams<T> {
    fn default() -> Self {
        Self {
            tol: T::floor_tol(1e-9),
            max_iter: 5000,
            subgradient_fallback: false,
        }
    }
}

impl<T: Real> InnerSolveParams<T> {
    pub fn with_tol(tol: T) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Multipliers `ζ = (u, y)` with `y ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPoint<T: Real> {
    pub u: DVector<T>,
    pub y: DVector<T>,
}

impl<T: Real> DualPoint<T> {
    /// Clamps negative components of `y` to zero.
    pub fn new(u: DVector<T>, y: DVector<T>) -> Self {
        Self {
            u,
            y: y.map(|v| v.max(T::zero())),
        }
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            u: DVector::zeros(p),
            y: DVector::zeros(q),
        }
    }

    pub fn norm_squared(&self) -> T {
        self.u.norm_squared() + self.y.norm_squared()
    }

    pub fn distance(&self, other: &Self) -> T {
        ((&self.u - &other.u).norm_squared() + (&self.y - &other.y).norm_squared()).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution<T: Real> {
    pub x: DVector<T>,
    pub iterations: usize,
    /// Prox-gradient residual at `x` (see [`stationarity_residual`]).
    pub residual: T,
    pub converged: bool,
}

#[derive(Clone, Debug)]
enum InequalityWeights<T: Real> {
    /// `[q + ρ(g − z)]₊² / 2ρ`
    Augmented { q: DVector<T>, z: DVector<T> },
    /// `⟨y, g − z⟩`
    Linear { y: DVector<T> },
}

/// The smooth part `S` of one local subproblem.
struct Model<'a, T: Real> {
    agent: &'a AgentProblem<T>,
    hessian: DMatrix<T>,
    linear: DVector<T>,
    /// Equality multiplier `λ` and allocation `v`.
    lambda: DVector<T>,
    v: DVector<T>,
    rho: T,
    ineq: InequalityWeights<T>,
}

impl<'a, T: Real> Model<'a, T> {
    fn augmented(
        agent: &'a AgentProblem<T>,
        p_mix: &DVector<T>,
        q_mix: &DVector<T>,
        v: &DVector<T>,
        z: &DVector<T>,
        rho: T,
    ) -> Self {
        Self::build(
            agent,
            p_mix,
            v,
            rho,
            InequalityWeights::Augmented {
                q: q_mix.clone(),
                z: z.clone(),
            },
        )
    }

    fn lagrangian(agent: &'a AgentProblem<T>, u: &DVector<T>, y: &DVector<T>, v: &DVector<T>) -> Self {
        Self::build(agent, u, v, T::zero(), InequalityWeights::Linear { y: y.clone() })
    }

    fn build(
        agent: &'a AgentProblem<T>,
        lambda: &DVector<T>,
        v: &DVector<T>,
        rho: T,
        ineq: InequalityWeights<T>,
    ) -> Self {
        let w = &agent.b + v;
        let at = agent.a.transpose();
        let mut hessian = agent.smooth.hessian.clone();
        let mut linear = &agent.smooth.linear + &at * lambda;
        if rho > T::zero() {
            hessian += (&at * &agent.a) * rho;
            linear -= (&at * &w) * rho;
        }
        Self {
            agent,
            hessian,
            linear,
            lambda: lambda.clone(),
            v: v.clone(),
            rho,
            ineq,
        }
    }

    /// Coefficient multiplying `∇g_l(x)` in `∇S(x)`; equals the updated multiplier
    /// `y⁺_l` in the augmented case.
    fn ineq_coeffs(&self, gx: &DVector<T>) -> DVector<T> {
        match &self.ineq {
            InequalityWeights::Augmented { q, z } => {
                DVector::from_fn(gx.len(), |l, _| (q[l] + self.rho * (gx[l] - z[l])).max(T::zero()))
            }
            InequalityWeights::Linear { y } => y.clone(),
        }
    }

    /// With `t = g − z` and `s = [q + ρt]₊`, the penalty `(s² − q²)/2ρ` equals
    /// `t(q + s)/2` while `s > 0`; that form avoids cancelling two `O(q²/ρ)` terms.
    fn ineq_value(&self, gx: &DVector<T>) -> T {
        match &self.ineq {
            InequalityWeights::Augmented { q, z } => (0..gx.len()).fold(T::zero(), |acc, l| {
                let t = gx[l] - z[l];
                let s = q[l] + self.rho * t;
                if s > T::zero() {
                    acc + t * (q[l] + s) * T::of(0.5)
                } else {
                    acc - q[l] * q[l] / (T::of(2.0) * self.rho)
                }
            }),
            // the −⟨y, z⟩ term is constant in x
            InequalityWeights::Linear { y } => y.dot(gx),
        }
    }

    /// `ineq_value(g_new) − ineq_value(g_old)` without forming either value.
    fn ineq_increment(&self, g_new: &DVector<T>, g_old: &DVector<T>) -> T {
        match &self.ineq {
            InequalityWeights::Augmented { q, z } => (0..g_new.len()).fold(T::zero(), |acc, l| {
                let (t1, t0) = (g_new[l] - z[l], g_old[l] - z[l]);
                let s1 = (q[l] + self.rho * t1).max(T::zero());
                let s0 = (q[l] + self.rho * t0).max(T::zero());
                let inc = if s1 > T::zero() && s0 > T::zero() {
                    (t1 - t0) * (s1 + s0) * T::of(0.5)
                } else {
                    (s1 * s1 - s0 * s0) / (T::of(2.0) * self.rho)
                };
                acc + inc
            }),
            InequalityWeights::Linear { y } => y.dot(&(g_new - g_old)),
        }
    }

    /// Quadratic part without the constant, so differences are exact up to rounding.
    fn quad_value(&self, x: &DVector<T>) -> T {
        (&self.hessian * x).dot(x) * T::of(0.5) + self.linear.dot(x)
    }

    fn smooth_value(&self, x: &DVector<T>) -> T {
        self.quad_value(x) + self.ineq_value(&self.agent.g(x))
    }

    /// Index of a nonsmooth inequality term that can enter `S`.
    fn nonsmooth_term(&self) -> Option<usize> {
        self.agent.inequalities.iter().enumerate().position(|(l, g)| {
            !g.is_smooth()
                && match &self.ineq {
                    InequalityWeights::Augmented { .. } => true,
                    InequalityWeights::Linear { y } => y[l] > T::zero(),
                }
        })
    }

    /// Gradient of the inequality part; subgradients stand in for nonsmooth terms.
    fn ineq_gradient(&self, x: &DVector<T>) -> DVector<T> {
        let mut grad = DVector::zeros(x.len());
        let coeffs = self.ineq_coeffs(&self.agent.g(x));
        for (g, &c) in self.agent.inequalities.iter().zip(coeffs.iter()) {
            if c > T::zero() {
                grad += g.subgradient(x) * c;
            }
        }
        grad
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        &self.hessian * x + &self.linear + self.ineq_gradient(x)
    }

    /// Multipliers `(u⁺, y⁺)` that make `∇S(x)` the gradient of the plain Lagrangian.
    fn induced_multipliers(&self, x: &DVector<T>) -> (DVector<T>, DVector<T>) {
        match &self.ineq {
            InequalityWeights::Augmented { q, z } => {
                multiplier_update(self.agent, x, &self.lambda, q, &self.v, z, self.rho)
            }
            InequalityWeights::Linear { y } => (self.lambda.clone(), y.clone()),
        }
    }

    fn residual(&self, x: &DVector<T>) -> T {
        let (u, y) = self.induced_multipliers(x);
        stationarity_residual(self.agent, x, &u, &y)
    }

    fn objective(&self, x: &DVector<T>) -> T {
        self.smooth_value(x) + self.agent.prox.value(x)
    }

    fn curvature_estimate(&self) -> T {
        crate::problem::spectral_norm(&self.hessian).max(T::floor_tol(1e-8))
    }
}

/// `u⁺ = p + ρ(A_i x − b_i − v)`, `y⁺ = [q + ρ(g_i(x) − z)]₊`.
pub fn multiplier_update<T: Real>(
    agent: &AgentProblem<T>,
    x: &DVector<T>,
    p_mix: &DVector<T>,
    q_mix: &DVector<T>,
    v: &DVector<T>,
    z: &DVector<T>,
    rho: T,
) -> (DVector<T>, DVector<T>) {
    let u = p_mix + agent.equality_residual(x, v) * rho;
    let gx = agent.g(x);
    let y = DVector::from_fn(gx.len(), |l, _| (q_mix[l] + rho * (gx[l] - z[l])).max(T::zero()));
    (u, y)
}

/// Norm of the unit-step prox-gradient map of `x ↦ f_i(x) + ⟨u, A_i x⟩ + ⟨y, g_i(x)⟩`.
///
/// Zero exactly when `x` minimizes the Lagrangian at `(u, y)`.
pub fn stationarity_residual<T: Real>(
    agent: &AgentProblem<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    y: &DVector<T>,
) -> T {
    let mut grad = agent.smooth.gradient(x) + agent.a.tr_mul(u);
    for (g, &yl) in agent.inequalities.iter().zip(y.iter()) {
        if yl != T::zero() {
            grad += g.subgradient(x) * yl;
        }
    }
    let step = agent.prox.prox(&(x - grad), T::one());
    (x - step).norm()
}

/// FISTA with backtracking and function-value restart on `S + h`.
fn solve_model<T: Real>(
    model: &Model<'_, T>,
    x0: DVector<T>,
    params: &InnerSolveParams<T>,
) -> Result<InnerSolution<T>> {
    if let Some(l) = model.nonsmooth_term() {
        if !params.subgradient_fallback {
            return Err(Error::NonsmoothUnsupported(l));
        }
        return Ok(subgradient_descent(model, x0, params));
    }

    let prox = &model.agent.prox;
    let two = T::of(2.0);
    let half = T::of(0.5);
    let mut lipschitz = model.curvature_estimate();
    let slack_scale = T::default_epsilon() * T::of(16.0);

    let mut x = x0;
    let mut fx = model.objective(&x);
    let mut residual = model.residual(&x);
    if residual <= params.tol {
        return Ok(InnerSolution {
            x,
            iterations: 0,
            residual,
            converged: true,
        });
    }
    let mut y = x.clone();
    let mut t = T::one();

    for iter in 1..=params.max_iter {
        let gy_quad = &model.hessian * &y + &model.linear;
        let gy_ineq = model.ineq_gradient(&y);
        let gy = &gy_quad + &gy_ineq;
        let g_y = model.agent.g(&y);
        let x_new = loop {
            let candidate = prox.prox(&(&y - &gy / lipschitz), T::one() / lipschitz);
            let d = &candidate - &y;
            let dd = d.norm_squared();
            // S(x⁺) − S(y) − ⟨∇S(y), d⟩ with the quadratic part evaluated exactly
            let quad = (&model.hessian * &d).dot(&d) * half;
            let ineq = model.ineq_increment(&model.agent.g(&candidate), &g_y) - gy_ineq.dot(&d);
            let slack = slack_scale * (T::one() + fx.abs());
            if quad + ineq <= lipschitz * half * dd + slack || dd == T::zero() {
                break candidate;
            }
            lipschitz *= two;
            if !lipschitz.is_finite() {
                return Err(Error::InvalidArgument("step size underflow in inner solver".into()));
            }
        };

        let f_new = model.objective(&x_new);
        if f_new > fx && t > T::one() {
            // Momentum overshoot: drop it and take a plain step from x next.
            t = T::one();
            y = x.clone();
            continue;
        }
        let t_next = (T::one() + (T::one() + T::of(4.0) * t * t).sqrt()) * half;
        y = &x_new + (&x_new - &x) * ((t - T::one()) / t_next);
        t = t_next;
        x = x_new;
        fx = f_new;
        residual = model.residual(&x);
        if !residual.is_finite() {
            return Err(Error::InvalidArgument("non-finite iterate in inner solver".into()));
        }
        if residual <= params.tol {
            return Ok(InnerSolution {
                x,
                iterations: iter,
                residual,
                converged: true,
            });
        }
    }
    Ok(InnerSolution {
        x,
        iterations: params.max_iter,
        residual,
        converged: false,
    })
}

/// Diminishing-step subgradient descent on the full objective; returns the best iterate.
fn subgradient_descent<T: Real>(model: &Model<'_, T>, x0: DVector<T>, params: &InnerSolveParams<T>) -> InnerSolution<T> {
    let budget = params.max_iter * 10;
    let step0 = T::one() / model.curvature_estimate();
    let mut x = x0;
    let mut best = x.clone();
    let mut best_f = model.objective(&x);
    for k in 0..budget {
        let s = model.gradient(&x) + model.agent.prox.subgradient(&x);
        x -= s * (step0 / T::of((k + 1) as f64).sqrt());
        let f = model.objective(&x);
        if f < best_f {
            best_f = f;
            best = x.clone();
        }
    }
    let residual = model.residual(&best);
    InnerSolution {
        x: best,
        iterations: budget,
        residual,
        converged: residual <= params.tol,
    }
}

/// `argmin_x  f_i(x) + ⟨p, A_i x − b_i − v⟩ + ρ/2 ‖A_i x − b_i − v‖²
///            + ‖[q + ρ(g_i(x) − z)]₊‖² / 2ρ − ‖q‖² / 2ρ`.
#[allow(clippy::too_many_arguments)]
pub fn minimize_augmented_lagrangian<T: Real>(
    agent: &AgentProblem<T>,
    p_mix: &DVector<T>,
    q_mix: &DVector<T>,
    v: &DVector<T>,
    z: &DVector<T>,
    rho: T,
    params: &InnerSolveParams<T>,
    warm_start: Option<&DVector<T>>,
) -> Result<InnerSolution<T>> {
    if !(rho > T::zero()) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    check_lens(agent, p_mix.len(), q_mix.len())?;
    check_lens(agent, v.len(), z.len())?;
    let model = Model::augmented(agent, p_mix, q_mix, v, z, rho);
    solve_model(&model, start(agent, warm_start)?, params)
}

/// `φ_i(ζ) = min_x f_i(x) + ⟨u, A_i x − b_i − v_ref⟩ + ⟨y, g_i(x) − z_ref⟩`, with its minimizer.
pub fn dual_function_value<T: Real>(
    agent: &AgentProblem<T>,
    zeta: &DualPoint<T>,
    v_ref: &DVector<T>,
    z_ref: &DVector<T>,
    params: &InnerSolveParams<T>,
    warm_start: Option<&DVector<T>>,
) -> Result<(T, InnerSolution<T>)> {
    check_lens(agent, zeta.u.len(), zeta.y.len())?;
    check_lens(agent, v_ref.len(), z_ref.len())?;
    let y = zeta.y.map(|v| v.max(T::zero()));
    let model = Model::lagrangian(agent, &zeta.u, &y, v_ref);
    let sol = solve_model(&model, start(agent, warm_start)?, params)?;
    if !sol.converged && !params.subgradient_fallback {
        return Err(Error::MaxIterations(sol.iterations));
    }
    let value = lagrangian_value(agent, &sol.x, &zeta.u, &y, v_ref, z_ref);
    Ok((value, sol))
}

/// `∇φ_i(ζ) = (A_i x̂ − b_i − v_ref, g_i(x̂) − z_ref)` at the Lagrangian minimizer `x̂`.
pub fn dual_gradient<T: Real>(
    agent: &AgentProblem<T>,
    zeta: &DualPoint<T>,
    v_ref: &DVector<T>,
    z_ref: &DVector<T>,
    params: &InnerSolveParams<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let (_, sol) = dual_function_value(agent, zeta, v_ref, z_ref, params, None)?;
    Ok((agent.equality_residual(&sol.x, v_ref), agent.g(&sol.x) - z_ref))
}

/// `f_i(x) + ⟨u, A_i x − b_i − v⟩ + ⟨y, g_i(x) − z⟩`
pub fn lagrangian_value<T: Real>(
    agent: &AgentProblem<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    y: &DVector<T>,
    v: &DVector<T>,
    z: &DVector<T>,
) -> T {
    agent.objective(x) + u.dot(&agent.equality_residual(x, v)) + y.dot(&(agent.g(x) - z))
}

fn check_lens<T: Real>(agent: &AgentProblem<T>, p: usize, q: usize) -> Result<()> {
    if p != agent.p() {
        return Err(Error::DimensionMismatch {
            context: "equality multiplier / allocation length",
            expected: agent.p(),
            got: p,
        });
    }
    if q != agent.q() {
        return Err(Error::DimensionMismatch {
            context: "inequality multiplier / allocation length",
            expected: agent.q(),
            got: q,
        });
    }
    Ok(())
}

fn start<T: Real>(agent: &AgentProblem<T>, warm_start: Option<&DVector<T>>) -> Result<DVector<T>> {
    match warm_start {
        Some(x) if x.len() != agent.dim() => Err(Error::DimensionMismatch {
            context: "warm start",
            expected: agent.dim(),
            got: x.len(),
        }),
        Some(x) => Ok(x.clone()),
        None => Ok(DVector::zeros(agent.dim())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{agent_smoothness, make_paper_instance, InequalityTerm, ProxTerm, Quadratic};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn empty() -> DVector<f64> {
        DVector::zeros(0)
    }

    /// `f = ½x²`, `A = [1]`, `b = 0`, no inequalities.
    fn half_square() -> AgentProblem<f64> {
        AgentProblem::new(
            Quadratic::centered(&s(0.0)),
            ProxTerm::Zero,
            vec![],
            DMatrix::identity(1, 1),
            s(0.0),
        )
        .unwrap()
    }

    fn random_dual(rng: &mut ChaCha8Rng, p: usize, q: usize, scale: f64) -> DualPoint<f64> {
        DualPoint::new(
            DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal) * scale),
            DVector::from_fn(q, |_, _| rng.random::<f64>() * scale),
        )
    }

    #[test]
    fn unconstrained_minimum() {
        let agent = half_square();
        let sol =
            minimize_augmented_lagrangian(&agent, &s(0.0), &empty(), &s(0.0), &empty(), 1.0, &Default::default(), None)
                .unwrap();
        assert!(sol.converged);
        assert!(sol.x[0].abs() < 1e-12);
    }

    #[test]
    fn linear_term_shifts_minimum() {
        // ½x² + x + ½x²  →  x = −1/2
        let agent = half_square();
        let params = InnerSolveParams::with_tol(1e-13);
        let sol = minimize_augmented_lagrangian(&agent, &s(1.0), &empty(), &s(0.0), &empty(), 1.0, &params, None).unwrap();
        assert!((sol.x[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn paper_agents_reach_tolerance() {
        let inst = make_paper_instance::<f64>(5, 25, 1, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = InnerSolveParams::default();
        for agent in &inst.agents {
            for rho in [1e-3, 0.1, 5.0] {
                let zeta = random_dual(&mut rng, 25, 1, 2.0);
                let v = DVector::from_fn(25, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = s(rng.sample::<f64, _>(StandardNormal));
                let sol = minimize_augmented_lagrangian(agent, &zeta.u, &zeta.y, &v, &z, rho, &params, None).unwrap();
                assert!(sol.converged && sol.residual <= params.tol, "rho {rho} residual {} iters {}", sol.residual, sol.iterations);
                // fed back with its induced multipliers
                let (u, y) = multiplier_update(agent, &sol.x, &zeta.u, &zeta.y, &v, &z, rho);
                assert!(stationarity_residual(agent, &sol.x, &u, &y) <= params.tol);
            }
        }
    }

    #[test]
    fn residual_vanishes_only_at_the_minimizer() {
        let agent = half_square();
        // minimizer of ½x² + u·x is x = −u
        assert!(stationarity_residual(&agent, &s(-0.3), &s(0.3), &empty()) < 1e-12);
        // unit step on ½x² lands exactly on the minimizer, so the residual is the offset
        let r = stationarity_residual(&agent, &s(0.7), &s(0.3), &empty());
        assert!((r - 1.0).abs() < 1e-12 && r > 0.1);
    }

    #[test]
    fn dual_function_closed_forms() {
        let agent = half_square();
        let params = InnerSolveParams::with_tol(1e-13);
        let (value, sol) = dual_function_value(&agent, &DualPoint::zeros(1, 0), &s(0.0), &empty(), &params, None).unwrap();
        assert!(value.abs() < 1e-14 && sol.x[0].abs() < 1e-14);

        let zeta = DualPoint::new(s(1.0), empty());
        let (value, sol) = dual_function_value(&agent, &zeta, &s(0.0), &empty(), &params, None).unwrap();
        assert!((value + 0.5).abs() < 1e-12);
        assert!((sol.x[0] + 1.0).abs() < 1e-12);

        for u in [-2.0, 0.3, 1.5] {
            let (gu, gy) = dual_gradient(&agent, &DualPoint::new(s(u), empty()), &s(0.0), &empty(), &params).unwrap();
            assert!((gu[0] + u).abs() < 1e-12);
            assert_eq!(gy.len(), 0);
        }
    }

    #[test]
    fn negative_y_is_clamped() {
        let zeta = DualPoint::new(s(0.0), DVector::from_vec(vec![-1e-17, 0.4]));
        assert_eq!(zeta.y[0], 0.0);
        assert_eq!(zeta.y[1], 0.4);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let inst = make_paper_instance::<f64>(3, 4, 1, 23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = InnerSolveParams::with_tol(1e-12);
        let h = 1e-5;
        for agent in &inst.agents {
            let v = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = s(0.3);
            let mut zeta = random_dual(&mut rng, 4, 1, 1.0);
            zeta.y[0] += 0.1; // keep y ± h inside the orthant
            let (gu, gy) = dual_gradient(agent, &zeta, &v, &z, &params).unwrap();
            let phi = |zt: &DualPoint<f64>| dual_function_value(agent, zt, &v, &z, &params, None).unwrap().0;
            for k in 0..5 {
                let (mut plus, mut minus) = (zeta.clone(), zeta.clone());
                if k < 4 {
                    plus.u[k] += h;
                    minus.u[k] -= h;
                } else {
                    plus.y[0] += h;
                    minus.y[0] -= h;
                }
                let fd = (phi(&plus) - phi(&minus)) / (2.0 * h);
                let exact = if k < 4 { gu[k] } else { gy[0] };
                assert!((fd - exact).abs() < 1e-4, "component {k}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn dual_function_is_concave() {
        let inst = make_paper_instance::<f64>(3, 6, 1, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = InnerSolveParams::default();
        for agent in &inst.agents {
            let v = DVector::zeros(6);
            let z = s(0.0);
            for _ in 0..10 {
                let a = random_dual(&mut rng, 6, 1, 3.0);
                let b = random_dual(&mut rng, 6, 1, 3.0);
                let mid = DualPoint::new((&a.u + &b.u) * 0.5, (&a.y + &b.y) * 0.5);
                let phi = |zt: &DualPoint<f64>| dual_function_value(agent, zt, &v, &z, &params, None).unwrap().0;
                assert!(phi(&mid) >= 0.5 * phi(&a) + 0.5 * phi(&b) - 1e-9);
            }
        }
    }

    #[test]
    fn dual_gradient_is_lipschitz_and_minimizer_is_stable() {
        let inst = make_paper_instance::<f64>(4, 25, 1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = InnerSolveParams::default();
        for (i, agent) in inst.agents.iter().enumerate() {
            let li = agent_smoothness(&inst, i);
            let a_norm = crate::problem::spectral_norm(&agent.a);
            let stability = (a_norm * a_norm + inst.lg * inst.lg).sqrt() / inst.mu;
            let v = DVector::zeros(25);
            let z = s(0.0);
            for _ in 0..20 {
                let a = random_dual(&mut rng, 25, 1, 0.3);
                let b = random_dual(&mut rng, 25, 1, 0.3);
                let (_, sa) = dual_function_value(agent, &a, &v, &z, &params, None).unwrap();
                let (_, sb) = dual_function_value(agent, &b, &v, &z, &params, None).unwrap();
                let ga = (agent.equality_residual(&sa.x, &v), agent.g(&sa.x) - &z);
                let gb = (agent.equality_residual(&sb.x, &v), agent.g(&sb.x) - &z);
                let dg = ((&ga.0 - &gb.0).norm_squared() + (&ga.1 - &gb.1).norm_squared()).sqrt();
                let dz = a.distance(&b);
                assert!(dg <= li * dz + 10.0 * params.tol, "agent {i}: {dg} > {li}·{dz}");
                assert!((&sa.x - &sb.x).norm() <= stability * dz + 10.0 * params.tol);
            }
        }
    }

    #[test]
    fn solution_never_worse_than_start() {
        let inst = make_paper_instance::<f64>(3, 5, 1, 2).unwrap();
        let agent = &inst.agents[0];
        let (p, q) = (DVector::from_element(5, 0.4), s(0.2));
        let (v, z) = (DVector::zeros(5), s(0.0));
        let model = Model::augmented(agent, &p, &q, &v, &z, 0.5);
        let x0 = DVector::from_element(agent.dim(), 3.0);
        let sol = solve_model(&model, x0.clone(), &InnerSolveParams::default()).unwrap();
        assert!(model.objective(&sol.x) <= model.objective(&x0));
    }

    fn l1_ball_agent() -> AgentProblem<f64> {
        AgentProblem::new(
            Quadratic::centered(&DVector::from_vec(vec![2.0, 0.0])),
            ProxTerm::Zero,
            vec![InequalityTerm::L1Distance {
                center: DVector::zeros(2),
                radius: 1.0,
            }],
            DMatrix::zeros(0, 2),
            empty(),
        )
        .unwrap()
    }

    #[test]
    fn nonsmooth_inequality_needs_fallback() {
        let agent = l1_ball_agent();
        let err = minimize_augmented_lagrangian(&agent, &empty(), &s(0.0), &empty(), &s(0.0), 1.0, &Default::default(), None)
            .unwrap_err();
        assert!(matches!(err, Error::NonsmoothUnsupported(0)));

        let params = InnerSolveParams {
            subgradient_fallback: true,
            max_iter: 2000,
            ..Default::default()
        };
        // ½‖x − (2,0)‖² + ½[(‖x‖₁ − 1)]₊²: minimizer (1.5, 0)
        let sol = minimize_augmented_lagrangian(&agent, &empty(), &s(0.0), &empty(), &s(0.0), 1.0, &params, None).unwrap();
        assert!((sol.x[0] - 1.5).abs() < 1e-2 && sol.x[1].abs() < 1e-2, "{}", sol.x);
    }

    #[test]
    fn inactive_nonsmooth_term_is_ignored_by_the_dual() {
        // y = 0 removes the nonsmooth term from the plain Lagrangian
        let agent = l1_ball_agent();
        let (value, sol) =
            dual_function_value(&agent, &DualPoint::zeros(0, 1), &empty(), &s(0.0), &Default::default(), None).unwrap();
        assert!(value.abs() < 1e-12 && (sol.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_checks() {
        let agent = half_square();
        let err = minimize_augmented_lagrangian(&agent, &DVector::zeros(2), &empty(), &s(0.0), &empty(), 1.0, &Default::default(), None);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = minimize_augmented_lagrangian(&agent, &s(0.0), &empty(), &s(0.0), &empty(), 0.0, &Default::default(), None);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
