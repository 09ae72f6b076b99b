//! Problem data: per-agent objectives, coupled constraint contributions and instance
//! generators.
//!
//! Agent `i` privately holds `f_i = smooth + prox`, the inequality contributions
//! `g_i: R^{d_i} -> R^q` and the equality contribution `(A_i, b_i)`. The network solves
//!
//! ```text
//! minimize    sum_i f_i(x_i)
//! subject to  sum_i A_i x_i = sum_i b_i,   sum_i g_i(x_i) <= 0.
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-agent decision blocks `(x_1, ..., x_N)`.
pub type Blocks<T> = Vec<DVector<T>>;

/// `½ xᵀ H x + lᵀ x + offset` with `H` symmetric positive semidefinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Quadratic<T: Real> {
    pub hessian: DMatrix<T>,
    pub linear: DVector<T>,
    pub offset: T,
}

impl<T: Real> Quadratic<T> {
    pub fn new(hessian: DMatrix<T>, linear: DVector<T>, offset: T) -> Result<Self> {
        if hessian.nrows() != hessian.ncols() || hessian.nrows() != linear.len() {
            return Err(Error::DimensionMismatch {
                context: "quadratic hessian vs linear term",
                expected: linear.len(),
                got: hessian.nrows(),
            });
        }
        Ok(Self {
            hessian,
            linear,
            offset,
        })
    }

    /// `½‖x − c‖²`.
    pub fn centered(center: &DVector<T>) -> Self {
        let d = center.len();
        Self {
            hessian: DMatrix::identity(d, d),
            linear: -center,
            offset: center.norm_squared() * T::of(0.5),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, x: &DVector<T>) -> T {
        (&self.hessian * x).dot(x) * T::of(0.5) + self.linear.dot(x) + self.offset
    }

    pub fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        &self.hessian * x + &self.linear
    }

    /// Smallest eigenvalue of the hessian, i.e. the strong convexity modulus.
    pub fn min_curvature(&self) -> T {
        if self.dim() == 0 {
            return T::zero();
        }
        self.hessian.clone().symmetric_eigenvalues().min()
    }
}

/// Nonsmooth part of `f_i`, handled through its proximal operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub enum ProxTerm<T: Real> {
    Zero,
    /// `weight · ‖x‖₁`
    L1 { weight: T },
}

impl<T: Real> ProxTerm<T> {
    pub fn value(&self, x: &DVector<T>) -> T {
        match self {
            ProxTerm::Zero => T::zero(),
            ProxTerm::L1 { weight } => *weight * x.lp_norm(1),
        }
    }

    /// `argmin_u  h(u) + ‖u − v‖² / (2 step)`.
    pub fn prox(&self, v: &DVector<T>, step: T) -> DVector<T> {
        match self {
            ProxTerm::Zero => v.clone(),
            ProxTerm::L1 { weight } => {
                let t = *weight * step;
                v.map(|vi| soft_threshold(vi, t))
            }
        }
    }

    /// Some element of the subdifferential at `x` (sign convention: 0 at 0).
    pub fn subgradient(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            ProxTerm::Zero => DVector::zeros(x.len()),
            ProxTerm::L1 { weight } => x.map(|xi| {
                if xi > T::zero() {
                    *weight
                } else if xi < T::zero() {
                    -*weight
                } else {
                    T::zero()
                }
            }),
        }
    }
}

pub fn soft_threshold<T: Real>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// One component `g_il` of an agent's inequality contribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub enum InequalityTerm<T: Real> {
    /// `‖x − center‖² − radius²`
    SquaredDistance { center: DVector<T>, radius: T },
    /// `⟨normal, x⟩ − offset`
    Affine { normal: DVector<T>, offset: T },
    /// `‖x − center‖₁ − radius`; convex but not differentiable.
    L1Distance { center: DVector<T>, radius: T },
}

impl<T: Real> InequalityTerm<T> {
    pub fn dim(&self) -> usize {
        match self {
            InequalityTerm::SquaredDistance { center, .. }
            | InequalityTerm::L1Distance { center, .. } => center.len(),
            InequalityTerm::Affine { normal, .. } => normal.len(),
        }
    }

    pub fn value(&self, x: &DVector<T>) -> T {
        match self {
            InequalityTerm::SquaredDistance { center, radius } => {
                (x - center).norm_squared() - *radius * *radius
            }
            InequalityTerm::Affine { normal, offset } => normal.dot(x) - *offset,
            InequalityTerm::L1Distance { center, radius } => (x - center).lp_norm(1) - *radius,
        }
    }

    /// Gradient, or `None` where the term has no gradient oracle.
    pub fn gradient(&self, x: &DVector<T>) -> Option<DVector<T>> {
        match self {
            InequalityTerm::SquaredDistance { center, .. } => Some((x - center) * T::of(2.0)),
            InequalityTerm::Affine { normal, .. } => Some(normal.clone()),
            InequalityTerm::L1Distance { .. } => None,
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, InequalityTerm::L1Distance { .. })
    }

    pub fn subgradient(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            InequalityTerm::L1Distance { center, .. } => (x - center).map(|e| {
                if e > T::zero() {
                    T::one()
                } else if e < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }),
            _ => self.gradient(x).expect("smooth terms have gradients"),
        }
    }

    /// Bound on subgradient norms over the ball `‖x‖ ≤ radius` around the origin.
    pub fn subgradient_bound(&self, operating_radius: T) -> T {
        match self {
            InequalityTerm::SquaredDistance { center, .. } => {
                T::of(2.0) * (operating_radius + center.norm())
            }
            InequalityTerm::Affine { normal, .. } => normal.norm(),
            InequalityTerm::L1Distance { center, .. } => T::of(center.len() as f64).sqrt(),
        }
    }

    /// Whether the subgradient norm is bounded on all of `R^d`.
    pub fn globally_bounded(&self) -> bool {
        !matches!(self, InequalityTerm::SquaredDistance { .. })
    }
}

/// Private data of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AgentProblem<T: Real> {
    pub smooth: Quadratic<T>,
    pub prox: ProxTerm<T>,
    pub inequalities: Vec<InequalityTerm<T>>,
    /// `p × d_i` equality coupling matrix.
    pub a: DMatrix<T>,
    pub b: DVector<T>,
}

impl<T: Real> AgentProblem<T> {
    pub fn new(
        smooth: Quadratic<T>,
        prox: ProxTerm<T>,
        inequalities: Vec<InequalityTerm<T>>,
        a: DMatrix<T>,
        b: DVector<T>,
    ) -> Result<Self> {
        let d = smooth.dim();
        if a.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "A_i columns vs decision dimension",
                expected: d,
                got: a.ncols(),
            });
        }
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                context: "A_i rows vs b_i",
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if let Some(g) = inequalities.iter().find(|g| g.dim() != d) {
            return Err(Error::DimensionMismatch {
                context: "inequality term dimension",
                expected: d,
                got: g.dim(),
            });
        }
        Ok(Self {
            smooth,
            prox,
            inequalities,
            a,
            b,
        })
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.inequalities.len()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        self.smooth.value(x) + self.prox.value(x)
    }

    pub fn g(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.q(), self.inequalities.iter().map(|g| g.value(x)))
    }

    /// `A_i x − b_i − v`
    pub fn equality_residual(&self, x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        &self.a * x - &self.b - v
    }

    pub fn strong_convexity(&self) -> T {
        self.smooth.min_curvature()
    }

    pub fn has_smooth_inequalities(&self) -> bool {
        self.inequalities.iter().all(InequalityTerm::is_smooth)
    }

    fn check_dim(&self, x: &DVector<T>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "decision block",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Generator provenance recorded with an instance so runs can be reproduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub seed: Option<u64>,
    pub params: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ProblemInstance<T: Real> {
    pub agents: Vec<AgentProblem<T>>,
    pub p: usize,
    pub q: usize,
    /// Common strong convexity modulus (minimum over agents).
    pub mu: T,
    /// Radius of the ball around the origin on which the subgradient bound holds.
    pub operating_radius: T,
    /// Common subgradient bound `L_g` on the inequality components.
    pub lg: T,
    /// Strictly feasible point, when known.
    pub slater: Option<Blocks<T>>,
    pub generator: Option<GeneratorInfo>,
}

impl<T: Real> ProblemInstance<T> {
    /// Assemble an instance, deriving `mu` and `lg` from the agents.
    pub fn new(
        agents: Vec<AgentProblem<T>>,
        operating_radius: T,
        slater: Option<Blocks<T>>,
        generator: Option<GeneratorInfo>,
    ) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::InvalidArgument("an instance needs at least one agent".into()))?;
        let (p, q) = (first.p(), first.q());
        for agent in &agents {
            if agent.p() != p {
                return Err(Error::DimensionMismatch {
                    context: "equality coupling dimension p",
                    expected: p,
                    got: agent.p(),
                });
            }
            if agent.q() != q {
                return Err(Error::DimensionMismatch {
                    context: "inequality coupling dimension q",
                    expected: q,
                    got: agent.q(),
                });
            }
        }
        let mu = agents
            .iter()
            .map(AgentProblem::strong_convexity)
            .fold(T::max_value().unwrap_or(T::one() / T::default_epsilon()), |a, b| a.min(b));
        let lg = agents
            .iter()
            .flat_map(|a| a.inequalities.iter())
            .map(|g| g.subgradient_bound(operating_radius))
            .fold(T::zero(), |a, b| a.max(b));
        let instance = Self {
            agents,
            p,
            q,
            mu,
            operating_radius,
            lg,
            slater,
            generator,
        };
        if let Some(x) = &instance.slater {
            instance.check_blocks(x)?;
        }
        Ok(instance)
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.agents.iter().map(AgentProblem::dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.agents.iter().map(AgentProblem::dim).sum()
    }

    pub fn check_blocks(&self, x: &[DVector<T>]) -> Result<()> {
        if x.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                context: "number of decision blocks",
                expected: self.n_agents(),
                got: x.len(),
            });
        }
        self.agents.iter().zip(x).try_for_each(|(a, xi)| a.check_dim(xi))
    }

    pub fn zero_blocks(&self) -> Blocks<T> {
        self.agents.iter().map(|a| DVector::zeros(a.dim())).collect()
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

/// Parameters of the random instance family with quadratic + ℓ1 objectives, one
/// equality block and squared-distance inequalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaperFamily {
    pub n_agents: usize,
    pub p: usize,
    pub q: usize,
    pub seed: u64,
    pub mu: f64,
    pub max_dim: usize,
    pub l1_weight: f64,
    /// Radii `c_i` are drawn uniformly from this range.
    pub radius_range: (f64, f64),
    /// Standard deviation of the inequality centers `a_i`.
    pub center_scale: f64,
}

impl PaperFamily {
    pub fn new(n_agents: usize, p: usize, q: usize, seed: u64) -> Self {
        Self {
            n_agents,
            p,
            q,
            seed,
            mu: 1.0,
            max_dim: 5,
            l1_weight: 1.0,
            radius_range: (1.0, 2.0),
            center_scale: 1.0,
        }
    }

    pub fn generate<T: Real>(&self) -> Result<ProblemInstance<T>> {
        if self.n_agents == 0 || self.max_dim == 0 {
            return Err(Error::InvalidArgument(
                "n_agents and max_dim must be positive".into(),
            ));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidArgument("mu must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = move |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

        let mut agents = Vec::with_capacity(self.n_agents);
        let mut centers = Vec::with_capacity(self.n_agents);
        let mut radii_sq_sum = 0.0;
        for _ in 0..self.n_agents {
            let d = rng.random_range(1..=self.max_dim);
            let m = DMatrix::<f64>::from_fn(d, d, |_, _| normal(&mut rng));
            let q_mat = m.transpose() * &m + DMatrix::identity(d, d) * self.mu;
            let r = DVector::<f64>::from_fn(d, |_, _| normal(&mut rng));
            let a_mat = DMatrix::<f64>::from_fn(self.p, d, |_, _| normal(&mut rng));
            let center = DVector::<f64>::from_fn(d, |_, _| self.center_scale * normal(&mut rng));
            let b = &a_mat * &center;
            let (lo, hi) = self.radius_range;
            let inequalities = (0..self.q)
                .map(|_| {
                    let c = rng.random_range(lo..=hi);
                    radii_sq_sum += c * c / self.q as f64;
                    InequalityTerm::SquaredDistance {
                        center: convert_vec(&center),
                        radius: T::of(c),
                    }
                })
                .collect();
            agents.push(AgentProblem::new(
                Quadratic::new(convert_mat(&q_mat), convert_vec(&r), T::zero())?,
                ProxTerm::L1 {
                    weight: T::of(self.l1_weight),
                },
                inequalities,
                convert_mat(&a_mat),
                convert_vec(&b),
            )?);
            centers.push(center);
        }
        // Every feasible point lies within sqrt(sum c_i²) of the centers in the stacked
        // norm, hence within this radius of the origin blockwise.
        let max_center = centers.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let operating_radius = if self.q > 0 {
            max_center + radii_sq_sum.sqrt()
        } else {
            0.0
        };
        let slater = centers.iter().map(convert_vec).collect();
        ProblemInstance::new(
            agents,
            T::of(operating_radius),
            Some(slater),
            Some(GeneratorInfo {
                name: "paper".into(),
                seed: Some(self.seed),
                params: vec![
                    ("n_agents".into(), self.n_agents as f64),
                    ("p".into(), self.p as f64),
                    ("q".into(), self.q as f64),
                    ("mu".into(), self.mu),
                    ("center_scale".into(), self.center_scale),
                ],
            }),
        )
    }
}

/// Random instance with `f_i(x) = ½xᵀQ_i x + r_iᵀx + ‖x‖₁`, coupling `Σ A_i x_i = Σ A_i a_i`
/// and `Σ ‖x_i − a_i‖² ≤ Σ c_i²`.
pub fn make_paper_instance<T: Real>(
    n_agents: usize,
    p: usize,
    q: usize,
    seed: u64,
) -> Result<ProblemInstance<T>> {
    PaperFamily::new(n_agents, p, q, seed).generate()
}

/// `f_i(x) = ½‖x − c_i‖²`, `A_i = I`, `b_i = b / N`, no inequalities.
pub fn make_quadratic_equality_instance<T: Real>(
    centers: &[DVector<T>],
    b: &DVector<T>,
) -> Result<ProblemInstance<T>> {
    let n = centers.len();
    if n == 0 {
        return Err(Error::InvalidArgument("at least one center required".into()));
    }
    let d = b.len();
    let share = b / T::of(n as f64);
    let agents = centers
        .iter()
        .map(|c| {
            if c.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "center dimension",
                    expected: d,
                    got: c.len(),
                });
            }
            AgentProblem::new(
                Quadratic::centered(c),
                ProxTerm::Zero,
                Vec::new(),
                DMatrix::identity(d, d),
                share.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ProblemInstance::new(
        agents,
        T::zero(),
        None,
        Some(GeneratorInfo {
            name: "quadratic_equality".into(),
            seed: None,
            params: vec![("n_agents".into(), n as f64), ("d".into(), d as f64)],
        }),
    )
}

/// Closed-form optimum `x_i* = c_i + (b − Σ_j c_j)/N` of the quadratic-equality family.
pub fn quadratic_equality_optimum<T: Real>(centers: &[DVector<T>], b: &DVector<T>) -> Blocks<T> {
    let n = T::of(centers.len() as f64);
    let sum = centers
        .iter()
        .fold(DVector::zeros(b.len()), |acc, c| acc + c);
    let shift = (b - sum) / n;
    centers.iter().map(|c| c + &shift).collect()
}

/// Spectral norm by power iteration on `AᵀA` (200 iterations or 1e-10 relative change).
pub fn spectral_norm<T: Real>(a: &DMatrix<T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let ata = a.transpose() * a;
    let n = ata.ncols();
    // Fixed, dense start vector; a zero overlap with the top eigenvector is not generic.
    let mut v = DVector::from_fn(n, |i, _| T::one() + T::of(i as f64) * T::of(0.1));
    v.normalize_mut();
    let mut lambda = T::zero();
    let tol = T::floor_tol(1e-10);
    for _ in 0..200 {
        let w = &ata * &v;
        let next = w.norm();
        if next == T::zero() {
            return T::zero();
        }
        v = w / next;
        let done = (next - lambda).abs() <= tol * next;
        lambda = next;
        if done {
            break;
        }
    }
    lambda.sqrt()
}

/// `L_i = (‖A_i‖² + q L_g²) / μ` for one agent.
pub fn agent_smoothness<T: Real>(instance: &ProblemInstance<T>, i: usize) -> T {
    let a_norm = spectral_norm(&instance.agents[i].a);
    let num = a_norm * a_norm + T::of(instance.q as f64) * instance.lg * instance.lg;
    if num == T::zero() {
        return T::zero();
    }
    num / instance.mu
}

/// `L = max_i L_i`, the gradient Lipschitz constant of every local dual function.
pub fn smoothness_constant<T: Real>(instance: &ProblemInstance<T>) -> T {
    (0..instance.n_agents())
        .map(|i| agent_smoothness(instance, i))
        .fold(T::zero(), |a, b| a.max(b))
}

pub fn evaluate_objective<T: Real>(instance: &ProblemInstance<T>, x: &[DVector<T>]) -> Result<T> {
    instance.check_blocks(x)?;
    Ok(instance
        .agents
        .iter()
        .zip(x)
        .fold(T::zero(), |acc, (a, xi)| acc + a.objective(xi)))
}

/// `(Σ A_i x_i − Σ b_i, Σ g_i(x_i))`.
pub fn coupling_residuals<T: Real>(
    instance: &ProblemInstance<T>,
    x: &[DVector<T>],
) -> Result<(DVector<T>, DVector<T>)> {
    instance.check_blocks(x)?;
    let mut eq = DVector::zeros(instance.p);
    let mut ineq = DVector::zeros(instance.q);
    for (a, xi) in instance.agents.iter().zip(x) {
        eq += &a.a * xi - &a.b;
        ineq += a.g(xi);
    }
    Ok((eq, ineq))
}

fn convert_vec<T: Real>(v: &DVector<f64>) -> DVector<T> {
    v.map(T::of)
}

fn convert_mat<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn paper_instance_shape() {
        let inst = make_paper_instance::<f64>(20, 25, 1, 11).unwrap();
        assert_eq!(inst.n_agents(), 20);
        assert_eq!((inst.p, inst.q), (25, 1));
        for a in &inst.agents {
            assert!((1..=5).contains(&a.dim()));
            assert_eq!(a.a.shape(), (25, a.dim()));
        }
        assert!(inst.mu >= 1.0 - 1e-12);
        assert!(inst.lg > 0.0);
    }

    #[test]
    fn single_agent_paper_instance() {
        let inst = make_paper_instance::<f64>(1, 1, 1, 4).unwrap();
        assert_eq!(inst.n_agents(), 1);
        let slater = inst.slater.as_ref().unwrap();
        let (eq, ineq) = coupling_residuals(&inst, slater).unwrap();
        assert!(eq.norm() < 1e-12);
        assert!(ineq[0] < 0.0);
    }

    #[test]
    fn slater_point_is_strictly_feasible() {
        let inst = make_paper_instance::<f64>(3, 2, 1, 1).unwrap();
        let slater = inst.slater.clone().unwrap();
        let (eq, ineq) = coupling_residuals(&inst, &slater).unwrap();
        assert!(eq.norm() < 1e-12);
        // g_i(a_i) = -c_i², summed independently of the generator
        let expected: f64 = inst
            .agents
            .iter()
            .map(|a| match &a.inequalities[0] {
                InequalityTerm::SquaredDistance { radius, .. } => -radius * radius,
                _ => unreachable!(),
            })
            .sum();
        assert!((ineq[0] - expected).abs() < 1e-12);
        assert!(ineq[0] < 0.0);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = make_paper_instance::<f64>(5, 4, 1, 9).unwrap();
        let b = make_paper_instance::<f64>(5, 4, 1, 9).unwrap();
        assert_eq!(a, b);
        let c = make_paper_instance::<f64>(5, 4, 1, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn quadratic_equality_closed_form() {
        let centers = vec![scalar(1.0), scalar(2.0), scalar(3.0)];
        let x = quadratic_equality_optimum(&centers, &scalar(9.0));
        assert_eq!(x, vec![scalar(2.0), scalar(3.0), scalar(4.0)]);
        let inst = make_quadratic_equality_instance(&centers, &scalar(9.0)).unwrap();
        let (eq, _) = coupling_residuals(&inst, &x).unwrap();
        assert!(eq.norm() < 1e-14);

        assert_eq!(quadratic_equality_optimum(&[scalar(5.0)], &scalar(5.0)), vec![scalar(5.0)]);
        assert_eq!(
            quadratic_equality_optimum(&[scalar(0.0), scalar(0.0)], &scalar(0.0)),
            vec![scalar(0.0), scalar(0.0)]
        );
    }

    #[test]
    fn quadratic_equality_dimension_mismatch() {
        let err = make_quadratic_equality_instance(&[scalar(1.0), DVector::zeros(2)], &scalar(0.0));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    fn one_dim_agent(a: f64, with_g: bool) -> AgentProblem<f64> {
        AgentProblem::new(
            Quadratic::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap(),
            ProxTerm::Zero,
            if with_g {
                vec![InequalityTerm::Affine {
                    normal: scalar(1.0),
                    offset: 0.0,
                }]
            } else {
                vec![]
            },
            DMatrix::from_element(1, 1, a),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn smoothness_formula() {
        // ‖A‖ = 1, q = 1, L_g = 1, μ = 1
        let inst = ProblemInstance::new(vec![one_dim_agent(1.0, true)], 0.0, None, None).unwrap();
        assert_eq!(inst.lg, 1.0);
        assert_eq!(inst.mu, 1.0);
        assert!((smoothness_constant(&inst) - 2.0).abs() < 1e-12);

        let zero = ProblemInstance::new(vec![one_dim_agent(0.0, false)], 0.0, None, None).unwrap();
        assert_eq!(smoothness_constant(&zero), 0.0);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a = DMatrix::<f64>::from_fn(3, 2, |_, _| rng.sample(StandardNormal));
            let svd_norm = a.clone().svd(false, false).singular_values.max();
            let power = spectral_norm(&a);
            assert!((svd_norm - power).abs() <= 1e-8 * svd_norm, "{svd_norm} vs {power}");
        }
    }

    #[test]
    fn objective_evaluation() {
        let inst = make_paper_instance::<f64>(6, 3, 1, 2).unwrap();
        assert_eq!(evaluate_objective(&inst, &inst.zero_blocks()).unwrap(), 0.0);

        let single = ProblemInstance::new(vec![one_dim_agent(1.0, false)], 0.0, None, None).unwrap();
        assert_eq!(evaluate_objective(&single, &[scalar(2.0)]).unwrap(), 2.0);

        let x: Blocks<f64> = inst.dims().iter().map(|&d| DVector::from_fn(d, |i, _| i as f64 - 0.7)).collect();
        let mut by_hand = 0.0;
        for (a, xi) in inst.agents.iter().zip(&x) {
            for r in 0..xi.len() {
                for c in 0..xi.len() {
                    by_hand += 0.5 * xi[r] * a.smooth.hessian[(r, c)] * xi[c];
                }
                by_hand += a.smooth.linear[r] * xi[r] + xi[r].abs();
            }
        }
        assert!((evaluate_objective(&inst, &x).unwrap() - by_hand).abs() < 1e-10);

        assert!(evaluate_objective(&inst, &x[1..]).is_err());
    }

    #[test]
    fn residual_is_linear_in_perturbation() {
        let inst = make_paper_instance::<f64>(4, 3, 1, 5).unwrap();
        let base = inst.slater.clone().unwrap();
        let mut moved = base.clone();
        let delta = DVector::from_fn(moved[2].len(), |i, _| 0.3 - 0.1 * i as f64);
        moved[2] += &delta;
        let (eq, _) = coupling_residuals(&inst, &moved).unwrap();
        let expected = &inst.agents[2].a * &delta;
        assert!((eq - expected).norm() < 1e-12);
    }

    #[test]
    fn instance_file_round_trip() {
        let inst = make_paper_instance::<f64>(3, 2, 1, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instance.json");
        inst.save_json(&path).unwrap();
        assert_eq!(ProblemInstance::<f64>::load_json(&path).unwrap(), inst);
        assert!(matches!(
            ProblemInstance::<f64>::load_json(dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn l1_prox_matches_grid_search() {
        let prox = ProxTerm::L1 { weight: 1.0 };
        for &(v, t) in &[(2.5, 1.0), (-0.3, 0.5), (0.7, 0.7), (-4.0, 1.5), (0.1, 2.0)] {
            let closed = prox.prox(&scalar(v), t)[0];
            let objective = |u: f64| u.abs() + (u - v).powi(2) / (2.0 * t);
            let best = (-60_000..=60_000)
                .map(|k| k as f64 * 1e-4)
                .min_by(|a, b| objective(*a).partial_cmp(&objective(*b)).unwrap())
                .unwrap();
            assert!((closed - best).abs() <= 1e-4, "v={v} t={t}: {closed} vs {best}");
        }
    }

    proptest! {
        #[test]
        fn inequality_subgradients_satisfy_convexity(
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            y in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
            let center = DVector::from_vec(vec![0.5, -1.0, 2.0]);
            let terms = [
                InequalityTerm::SquaredDistance { center: center.clone(), radius: 1.5 },
                InequalityTerm::Affine { normal: center.clone(), offset: 0.3 },
                InequalityTerm::L1Distance { center, radius: 1.0 },
            ];
            for g in &terms {
                let s = g.subgradient(&x);
                prop_assert!(g.value(&y) >= g.value(&x) + s.dot(&(&y - &x)) - 1e-9);
            }
        }

        #[test]
        fn objectives_are_strongly_convex(seed in any::<u64>(), t in 0.0f64..1.0) {
            let inst = make_paper_instance::<f64>(3, 2, 1, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for a in &inst.agents {
                let d = a.dim();
                let x = DVector::<f64>::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
                let y = DVector::<f64>::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0 + t);
                let s = a.smooth.gradient(&x) + a.prox.subgradient(&x);
                let lower = a.objective(&x) + s.dot(&(&y - &x)) + 0.5 * inst.mu * (&y - &x).norm_squared();
                prop_assert!(a.objective(&y) >= lower - 1e-9 * (1.0 + lower.abs()));
            }
        }

        #[test]
        fn subgradients_bounded_on_operating_ball(seed in any::<u64>(), dir in proptest::collection::vec(-1.0f64..1.0, 5), frac in 0.0f64..1.0) {
            let inst = make_paper_instance::<f64>(4, 3, 1, seed).unwrap();
            for a in &inst.agents {
                let d = a.dim();
                let mut x = DVector::from_iterator(d, dir.iter().copied().take(d));
                if x.norm() > 0.0 {
                    x *= frac * inst.operating_radius / x.norm();
                }
                for g in &a.inequalities {
                    prop_assert!(g.subgradient(&x).norm() <= inst.lg * (1.0 + 1e-12));
                }
            }
        }
    }
}
