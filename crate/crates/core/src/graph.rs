//! Time-varying communication digraphs and their doubly stochastic mixing matrices.
//!
//! Round `k >= 1` of a [`GraphSequence`] is the edge union of all self-loops and
//! `n_cycles` random permutations, the first of which is a single cycle through every
//! agent. The mixing matrix is the matching convex combination of permutation
//! matrices, so it is doubly stochastic with exactly the digraph's support. Round 0 is
//! the self-loop graph with identity weights.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance on row and column sums used by [`validate_weight_matrix`].
pub const DOUBLY_STOCHASTIC_TOL: f64 = 1e-12;

/// Directed graph on agents `0..n`. An edge `(j, i)` means `j` sends to `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digraph {
    n_agents: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Digraph {
    pub fn new(n_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        if let Some(&(j, i)) = edges.iter().find(|&&(j, i)| j >= n_agents || i >= n_agents) {
            return Err(Error::UnknownAgent(j.max(i)));
        }
        Ok(Self { n_agents, edges })
    }

    pub fn self_loops(n_agents: usize) -> Self {
        Self {
            n_agents,
            edges: (0..n_agents).map(|i| (i, i)).collect(),
        }
    }

    /// Self-loops plus the edges `j -> perm[j]` of every permutation.
    pub fn from_permutations(n_agents: usize, permutations: &[Permutation]) -> Result<Self> {
        let mut edges: BTreeSet<_> = (0..n_agents).map(|i| (i, i)).collect();
        for perm in permutations {
            if perm.len() != n_agents {
                return Err(Error::DimensionMismatch {
                    context: "permutation length",
                    expected: n_agents,
                    got: perm.len(),
                });
            }
            edges.extend(perm.edges());
        }
        Ok(Self { n_agents, edges })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n_agents).all(|i| self.contains(i, i))
    }

    /// Agents `j` with an edge `j -> i`, in increasing order. Always contains `i` for a
    /// graph with self-loops.
    pub fn in_neighbors(&self, i: usize) -> Result<Vec<usize>> {
        if i >= self.n_agents {
            return Err(Error::UnknownAgent(i));
        }
        Ok(self
            .edges
            .iter()
            .filter(|&&(_, to)| to == i)
            .map(|&(from, _)| from)
            .collect())
    }

    pub fn out_neighbors(&self, j: usize) -> Result<Vec<usize>> {
        if j >= self.n_agents {
            return Err(Error::UnknownAgent(j));
        }
        Ok(self
            .edges
            .range((j, 0)..=(j, usize::MAX))
            .map(|&(_, to)| to)
            .collect())
    }

    fn reaches_all(&self, forward: bool) -> bool {
        let n = self.n_agents;
        let mut adj = vec![Vec::new(); n];
        for &(j, i) in &self.edges {
            if forward {
                adj[j].push(i);
            } else {
                adj[i].push(j);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(a) = queue.pop_front() {
            for &b in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    count += 1;
                    queue.push_back(b);
                }
            }
        }
        count == n
    }
}

/// True iff every agent reaches every other agent. Forward and reverse BFS from agent 0.
pub fn check_strong_connectivity(digraph: &Digraph) -> bool {
    digraph.n_agents == 0 || (digraph.reaches_all(true) && digraph.reaches_all(false))
}

/// A permutation of agents; agent `j` sends to `self[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(targets: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; targets.len()];
        for &t in &targets {
            if t >= targets.len() || seen[t] {
                return Err(Error::InvalidArgument(format!(
                    "{targets:?} is not a permutation"
                )));
            }
            seen[t] = true;
        }
        Ok(Self(targets))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// The cycle `order[0] -> order[1] -> ... -> order[n-1] -> order[0]`.
    pub fn cycle(order: &[usize]) -> Result<Self> {
        let n = order.len();
        let mut targets = vec![usize::MAX; n];
        for t in 0..n {
            let from = order[t];
            if from >= n {
                return Err(Error::UnknownAgent(from));
            }
            targets[from] = order[(t + 1) % n];
        }
        Self::new(targets)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(j, &i)| i == j)
    }

    pub fn target(&self, j: usize) -> usize {
        self.0[j]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().enumerate().map(|(j, &i)| (j, i))
    }
}

/// Row-major mixing matrix; entry `(i, j)` weighs agent `j`'s message at agent `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix<T: Real> {
    entries: DMatrix<T>,
}

impl<T: Real> WeightMatrix<T> {
    pub fn from_matrix(entries: DMatrix<T>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                context: "weight matrix must be square",
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    /// Nonzero entries `(j, w_ij)` of row `i`.
    pub fn row_support(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let row = self.entries.row(i);
        (0..self.entries.ncols()).filter_map(move |j| {
            let w = row[j];
            (w > T::zero()).then_some((j, w))
        })
    }
}

/// `sum_m weights[m] * P_m` over the permutation matrices, checked against `digraph`.
pub fn build_weight_matrix<T: Real>(
    digraph: &Digraph,
    permutations: &[Permutation],
    mixing_weights: &[T],
) -> Result<WeightMatrix<T>> {
    let n = digraph.n_agents();
    if permutations.len() != mixing_weights.len() {
        return Err(Error::DimensionMismatch {
            context: "one mixing weight per permutation",
            expected: permutations.len(),
            got: mixing_weights.len(),
        });
    }
    if !permutations.iter().any(Permutation::is_identity) {
        return Err(Error::InvalidArgument(
            "the identity must be among the permutations".into(),
        ));
    }
    if mixing_weights.iter().any(|&a| a <= T::zero()) {
        return Err(Error::InvalidArgument("mixing weights must be positive".into()));
    }
    let total = mixing_weights.iter().fold(T::zero(), |acc, &a| acc + a);
    if (total - T::one()).abs() > T::floor_tol(DOUBLY_STOCHASTIC_TOL) {
        return Err(Error::InvalidArgument(format!(
            "mixing weights sum to {total}, not 1"
        )));
    }

    let mut entries = DMatrix::<T>::zeros(n, n);
    for (perm, &alpha) in permutations.iter().zip(mixing_weights) {
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                context: "permutation length",
                expected: n,
                got: perm.len(),
            });
        }
        for (j, i) in perm.edges() {
            entries[(i, j)] += alpha;
        }
    }
    let w = WeightMatrix { entries };
    let mismatches = support_mismatches(&w, digraph);
    if !mismatches.is_empty() {
        return Err(Error::SupportMismatch(mismatches.len()));
    }
    Ok(w)
}

fn support_mismatches<T: Real>(w: &WeightMatrix<T>, digraph: &Digraph) -> Vec<(usize, usize)> {
    let n = w.n_agents();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if (w.get(i, j) > T::zero()) != digraph.contains(j, i) {
                out.push((j, i));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightReport {
    pub pass: bool,
    pub max_row_deviation: f64,
    pub max_col_deviation: f64,
    /// Largest of the row and column deviations.
    pub max_deviation: f64,
    pub negative_entries: usize,
    /// Edges `(j, i)` where positivity of `w_ij` disagrees with the digraph.
    pub support_mismatches: Vec<(usize, usize)>,
}

pub fn validate_weight_matrix<T: Real>(w: &WeightMatrix<T>, digraph: &Digraph) -> Result<WeightReport> {
    let n = digraph.n_agents();
    if w.n_agents() != n {
        return Err(Error::DimensionMismatch {
            context: "weight matrix vs digraph",
            expected: n,
            got: w.n_agents(),
        });
    }
    let e = w.entries();
    let max_row_deviation = (0..n)
        .map(|i| (e.row(i).sum() - T::one()).abs().as_f64())
        .fold(0.0, f64::max);
    let max_col_deviation = (0..n)
        .map(|j| (e.column(j).sum() - T::one()).abs().as_f64())
        .fold(0.0, f64::max);
    let negative_entries = e.iter().filter(|&&x| x < T::zero()).count();
    let support_mismatches = support_mismatches(w, digraph);
    let max_deviation = max_row_deviation.max(max_col_deviation);
    let tol = T::floor_tol(DOUBLY_STOCHASTIC_TOL).as_f64();
    Ok(WeightReport {
        pass: max_deviation <= tol && negative_entries == 0 && support_mismatches.is_empty(),
        max_row_deviation,
        max_col_deviation,
        max_deviation,
        negative_entries,
        support_mismatches,
    })
}

/// One round of a [`GraphSequence`].
#[derive(Clone, Debug)]
pub struct GraphRound<T: Real> {
    pub round: usize,
    pub digraph: Digraph,
    pub weights: WeightMatrix<T>,
    /// Permutations whose union is the digraph; the identity comes first.
    pub permutations: Vec<Permutation>,
}

/// Reproducible sequence of (digraph, weight matrix) pairs, addressable by round.
///
/// Each round draws from its own ChaCha stream keyed by the round index, so
/// `round(k)` does not depend on which other rounds were generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSequence {
    n_agents: usize,
    n_cycles: usize,
    seed: u64,
    /// Weights for `[identity, cycle_1, ..., cycle_n]`; uniform when absent.
    mixing_weights: Option<Vec<f64>>,
}

impl GraphSequence {
    pub fn new(n_agents: usize, n_cycles: usize, seed: u64) -> Result<Self> {
        if n_agents == 0 || n_cycles == 0 {
            return Err(Error::InvalidArgument(
                "n_agents and n_cycles must be positive".into(),
            ));
        }
        Ok(Self {
            n_agents,
            n_cycles,
            seed,
            mixing_weights: None,
        })
    }

    pub fn with_mixing_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_cycles + 1 {
            return Err(Error::DimensionMismatch {
                context: "mixing weights (identity + cycles)",
                expected: self.n_cycles + 1,
                got: weights.len(),
            });
        }
        self.mixing_weights = Some(weights);
        Ok(self)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_cycles(&self) -> usize {
        self.n_cycles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn round<T: Real>(&self, k: usize) -> GraphRound<T> {
        let n = self.n_agents;
        if k == 0 {
            return GraphRound {
                round: 0,
                digraph: Digraph::self_loops(n),
                weights: WeightMatrix::identity(n),
                permutations: vec![Permutation::identity(n)],
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);

        let mut permutations = Vec::with_capacity(self.n_cycles + 1);
        permutations.push(Permutation::identity(n));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        permutations.push(Permutation::cycle(&order).expect("shuffled order is a permutation"));
        for _ in 1..self.n_cycles {
            let mut targets: Vec<usize> = (0..n).collect();
            targets.shuffle(&mut rng);
            permutations.push(Permutation(targets));
        }

        let weights: Vec<T> = match &self.mixing_weights {
            Some(w) => w.iter().map(|&a| T::of(a)).collect(),
            None => vec![T::one() / T::of((self.n_cycles + 1) as f64); self.n_cycles + 1],
        };
        let digraph = Digraph::from_permutations(n, &permutations).expect("lengths agree");
        let weights = build_weight_matrix(&digraph, &permutations, &weights)
            .expect("permutation union always matches its own support");
        GraphRound {
            round: k,
            digraph,
            weights,
            permutations,
        }
    }

    /// Write `round,from,to,weight` rows for rounds `0..rounds`.
    pub fn write_edge_csv(&self, path: impl AsRef<Path>, rounds: usize) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "round,from,to,weight")?;
            for k in 0..rounds {
                let r = self.round::<f64>(k);
                for (j, i) in r.digraph.edges() {
                    writeln!(out, "{k},{j},{i},{:e}", r.weights.get(i, j))?;
                }
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}
