//! Directed communication graphs and the mixing matrices built on them.
//!
//! Every node carries an implicit self-loop that is never stored as an edge
//! and never counted in the out-degree. Weight matrices are indexed
//! `(receiver, sender)`, so column `j` describes where agent `j`'s mass goes.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::SimRng;

/// Relative tolerance used by [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Iteration cap used by [`spectral_norm`].
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n_agents: usize,
    out: Vec<BTreeSet<usize>>,
}

impl DirectedGraph {
    /// Builds a graph from `(from, to)` pairs. Self-edges and duplicates are
    /// rejected.
    pub fn new(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut out = vec![BTreeSet::new(); n_agents];
        for &(i, j) in edges {
            if i >= n_agents || j >= n_agents {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) references a node outside [0, {n_agents})"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!(
                    "explicit self-edge ({i}, {i}); self-loops are implicit"
                )));
            }
            if !out[i].insert(j) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(Self { n_agents, out })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn out_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.out[j].iter().copied()
    }

    /// Number of out-neighbors of `j`, self excluded.
    pub fn out_degree(&self, j: usize) -> usize {
        self.out[j].len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.out.get(from).is_some_and(|s| s.contains(&to))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.iter().map(move |&j| (i, j)))
    }

    pub fn n_edges(&self) -> usize {
        self.out.iter().map(BTreeSet::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetric_edge().is_none()
    }

    fn asymmetric_edge(&self) -> Option<(usize, usize)> {
        self.edges().find(|&(i, j)| !self.has_edge(j, i))
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn cycle(n: usize) -> Result<Self> {
        let edges: Vec<_> = if n > 1 {
            (0..n).map(|i| (i, (i + 1) % n)).collect()
        } else {
            Vec::new()
        };
        Self::new(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self::new(n, &edges)
    }

    /// Random digraph that is strongly connected by construction: a random
    /// Hamiltonian cycle plus every other ordered pair with probability
    /// `edge_prob`.
    pub fn random_strongly_connected(n: usize, edge_prob: f64, rng: &mut SimRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&edge_prob) {
            return Err(Error::InvalidGraph(format!("edge probability {edge_prob} not in [0, 1]")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut set = BTreeSet::new();
        if n > 1 {
            for w in 0..n {
                set.insert((order[w], order[(w + 1) % n]));
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && !set.contains(&(i, j)) && rng.random::<f64>() < edge_prob {
                    set.insert((i, j));
                }
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        Self::new(n, &edges)
    }

    /// Random connected undirected graph (stored with both directions): a
    /// random spanning tree plus every other pair with probability `edge_prob`.
    pub fn random_connected_undirected(n: usize, edge_prob: f64, rng: &mut SimRng) -> Result<Self> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut set = BTreeSet::new();
        for w in 1..n {
            let parent = order[rng.random_range(0..w)];
            let child = order[w];
            set.insert((parent.min(child), parent.max(child)));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if !set.contains(&(i, j)) && rng.random::<f64>() < edge_prob {
                    set.insert((i, j));
                }
            }
        }
        let edges: Vec<_> = set.into_iter().flat_map(|(i, j)| [(i, j), (j, i)]).collect();
        Self::new(n, &edges)
    }

    /// Edge-list text: first line `N`, then one `i j` line per edge in
    /// lexicographic order.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n_agents);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (first, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty edge list".into(),
        })?;
        let n: usize = header.parse().map_err(|_| Error::Parse {
            line: first,
            msg: format!("expected node count, found {header:?}"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let parts: Vec<&str> = l.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad node index {s:?}"),
                })
            };
            if parts.len() != 2 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `i j`, found {l:?}"),
                });
            }
            edges.push((parse(parts[0])?, parse(parts[1])?));
        }
        Self::new(n, &edges)
    }
}

/// True iff every node reaches every other node along directed edges.
pub fn is_strongly_connected(g: &DirectedGraph) -> bool {
    let n = g.n_agents();
    let mut reverse = vec![Vec::new(); n];
    for (i, j) in g.edges() {
        reverse[j].push(i);
    }
    let forward_all = reach_count(n, |u| g.out[u].iter().copied().collect()) == n;
    forward_all && reach_count(n, |u| reverse[u].clone()) == n
}

fn reach_count(n: usize, next: impl Fn(usize) -> Vec<usize>) -> usize {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for v in next(u) {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

/// An `N x N` nonnegative mixing matrix, indexed `(receiver, sender)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DMatrix<f64>);

impl WeightMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                what: "weight matrix columns",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if let Some(v) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidGraph(format!("weight {v} outside [0, 1]")));
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn max_column_sum_deviation(&self) -> f64 {
        (0..self.dim())
            .map(|j| (self.0.column(j).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_row_sum_deviation(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.0.row(i).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Zero wherever `g` has neither an edge `j -> i` nor `i == j`.
    pub fn respects(&self, g: &DirectedGraph) -> bool {
        let n = self.dim();
        n == g.n_agents()
            && (0..n).all(|i| (0..n).all(|j| i == j || g.has_edge(j, i) || self.0[(i, j)] == 0.0))
    }
}

/// Push-sum weights: column `j` puts `1/(1+d_j)` on `j` and each out-neighbor.
pub fn build_push_sum_weights(g: &DirectedGraph) -> Result<WeightMatrix> {
    if !is_strongly_connected(g) {
        return Err(Error::NotStronglyConnected);
    }
    let n = g.n_agents();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let w = 1.0 / (1 + g.out_degree(j)) as f64;
        m[(j, j)] = w;
        for i in g.out_neighbors(j) {
            m[(i, j)] = w;
        }
    }
    Ok(WeightMatrix(m))
}

/// Per-entry push-sum matrices for one round. `selections[j]` is the entry
/// sender `j` transmits. For that entry, column `j` of `B^k` spreads mass
/// `1/(1+d_j)` over `j` and its out-neighbors; for every other entry, column
/// `j` is `e_j` (the sender keeps all of it).
pub fn build_entrywise_push_weights(
    g: &DirectedGraph,
    selections: &[usize],
    k: usize,
) -> Result<Vec<WeightMatrix>> {
    let n = g.n_agents();
    check_selections(n, selections, k)?;
    let mut mats = vec![DMatrix::zeros(n, n); k];
    for (j, &sel) in selections.iter().enumerate() {
        for (entry, m) in mats.iter_mut().enumerate() {
            if entry == sel {
                let w = 1.0 / (1 + g.out_degree(j)) as f64;
                m[(j, j)] = w;
                for i in g.out_neighbors(j) {
                    m[(i, j)] = w;
                }
            } else {
                m[(j, j)] = 1.0;
            }
        }
    }
    Ok(mats.into_iter().map(WeightMatrix).collect())
}

pub(crate) fn check_selections(n: usize, selections: &[usize], k: usize) -> Result<()> {
    if selections.len() != n {
        return Err(Error::DimensionMismatch {
            what: "selections",
            expected: n,
            found: selections.len(),
        });
    }
    match selections.iter().position(|&s| s >= k) {
        Some(agent) => Err(Error::SelectionOutOfRange {
            agent,
            index: selections[agent],
            k,
        }),
        None => Ok(()),
    }
}

/// Metropolis weights on a symmetric edge set. Disconnected graphs are
/// accepted; each component mixes on its own.
pub fn build_metropolis_weights(g: &DirectedGraph) -> Result<WeightMatrix> {
    if let Some((from, to)) = g.asymmetric_edge() {
        return Err(Error::AsymmetricEdges { from, to });
    }
    let neighbors: Vec<Vec<usize>> = (0..g.n_agents()).map(|i| g.out_neighbors(i).collect()).collect();
    Ok(metropolis_from_neighbors(&neighbors))
}

/// `neighbors` must be symmetric.
pub(crate) fn metropolis_from_neighbors(neighbors: &[Vec<usize>]) -> WeightMatrix {
    let n = neighbors.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in &neighbors[i] {
            let w = 1.0 / (1 + neighbors[i].len().max(neighbors[j].len())) as f64;
            m[(i, j)] = w;
            off += w;
        }
        m[(i, i)] = 1.0 - off;
    }
    WeightMatrix(m)
}

/// `NK x NK` aggregate `sum_k C^k (x) e_k e_k^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeightMatrix {
    entries: DMatrix<f64>,
    k: usize,
}

impl BlockWeightMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn block_size(&self) -> usize {
        self.k
    }

    pub fn n_agents(&self) -> usize {
        self.entries.nrows() / self.k
    }
}

pub fn build_block_matrix(mats: &[WeightMatrix]) -> Result<BlockWeightMatrix> {
    let k = mats.len();
    let Some(first) = mats.first() else {
        return Err(Error::DimensionMismatch {
            what: "block factor count",
            expected: 1,
            found: 0,
        });
    };
    let n = first.dim();
    if let Some(bad) = mats.iter().find(|m| m.dim() != n) {
        return Err(Error::DimensionMismatch {
            what: "block factor size",
            expected: n,
            found: bad.dim(),
        });
    }
    let mut entries = DMatrix::zeros(n * k, n * k);
    for (entry, c) in mats.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                entries[(i * k + entry, j * k + entry)] = c.get(i, j);
            }
        }
    }
    Ok(BlockWeightMatrix { entries, k })
}

/// `(I_N - 11^T/N) (x) I_K` for a matrix of dimension `N*K`.
pub fn disagreement_projector(n_agents: usize, block: usize) -> DMatrix<f64> {
    let dim = n_agents * block;
    DMatrix::from_fn(dim, dim, |r, c| {
        if r % block != c % block {
            0.0
        } else {
            let diag = if r == c { 1.0 } else { 0.0 };
            diag - 1.0 / n_agents as f64
        }
    })
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration
/// with a Rayleigh-quotient estimate.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what: "spectral norm input columns",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    // Irrational-phase start vector; never orthogonal to a structured eigenvector.
    let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 1.618_033_988_75).sin());
    x /= x.norm();
    let mut estimate = 0.0;
    for _ in 0..SPECTRAL_MAX_ITERS {
        let y = m * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let rayleigh = x.dot(&y);
        let residual = (&y - &x * rayleigh).norm();
        x = y / norm;
        let prev = estimate;
        estimate = rayleigh.abs();
        if residual <= SPECTRAL_TOL * estimate || (estimate - prev).abs() <= f64::EPSILON * estimate {
            break;
        }
    }
    Ok(estimate)
}

/// Source of i.i.d. weight-matrix samples for [`check_weight_assumptions`].
pub trait WeightSampler {
    /// Dimension of each sample.
    fn dim(&self) -> usize;

    /// Number of entries per agent (`K` for block matrices, 1 otherwise).
    fn block_size(&self) -> usize {
        1
    }

    fn sample(&mut self, rng: &mut SimRng) -> DMatrix<f64>;

    /// Closed-form mean, when known.
    fn exact_mean(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Allowed nonzero pattern, when the sampler is tied to a graph.
    fn support(&self) -> Option<DMatrix<bool>> {
        None
    }
}

/// Always returns the same matrix.
#[derive(Debug, Clone)]
pub struct FixedSampler {
    matrix: DMatrix<f64>,
    block: usize,
    support: Option<DMatrix<bool>>,
}

impl FixedSampler {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            block: 1,
            support: None,
        }
    }

    pub fn block(b: &BlockWeightMatrix) -> Self {
        Self {
            matrix: b.matrix().clone(),
            block: b.block_size(),
            support: None,
        }
    }

    pub fn with_graph(mut self, g: &DirectedGraph) -> Self {
        self.support = Some(graph_support(g, self.block));
        self
    }
}

impl WeightSampler for FixedSampler {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn block_size(&self) -> usize {
        self.block
    }
    fn sample(&mut self, _rng: &mut SimRng) -> DMatrix<f64> {
        self.matrix.clone()
    }
    fn exact_mean(&self) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
    fn support(&self) -> Option<DMatrix<bool>> {
        self.support.clone()
    }
}

fn graph_support(g: &DirectedGraph, block: usize) -> DMatrix<bool> {
    let dim = g.n_agents() * block;
    DMatrix::from_fn(dim, dim, |r, c| {
        let (i, j) = (r / block, c / block);
        i == j || g.has_edge(j, i)
    })
}

/// Per-round block matrices of the coordinated entry-wise consensus scheme:
/// each agent proposes an entry, every undirected edge carries the smaller of
/// its endpoints' proposals, and entry `k` mixes with Metropolis weights on
/// the edges that carry it.
#[derive(Debug, Clone)]
pub struct EntrywiseConsensusSampler {
    graph: DirectedGraph,
    probs: Vec<Vec<f64>>,
}

impl EntrywiseConsensusSampler {
    pub fn new(graph: DirectedGraph, probs: Vec<Vec<f64>>) -> Result<Self> {
        if let Some((from, to)) = graph.asymmetric_edge() {
            return Err(Error::AsymmetricEdges { from, to });
        }
        if probs.len() != graph.n_agents() {
            return Err(Error::DimensionMismatch {
                what: "selection probability rows",
                expected: graph.n_agents(),
                found: probs.len(),
            });
        }
        Ok(Self { graph, probs })
    }

    fn k(&self) -> usize {
        self.probs[0].len()
    }
}

impl WeightSampler for EntrywiseConsensusSampler {
    fn dim(&self) -> usize {
        self.graph.n_agents() * self.k()
    }
    fn block_size(&self) -> usize {
        self.k()
    }
    fn sample(&mut self, rng: &mut SimRng) -> DMatrix<f64> {
        let proposals: Vec<usize> = self.probs.iter().map(|p| sample_index(p, rng)).collect();
        let mats = coordinated_consensus_weights(&self.graph, &proposals, self.k());
        build_block_matrix(&mats)
            .expect("factors share the graph dimension")
            .into_inner()
    }
    fn support(&self) -> Option<DMatrix<bool>> {
        Some(graph_support(&self.graph, self.k()))
    }
}

/// Entry carried by the undirected edge `{i, j}` under proposal coordination.
pub fn edge_entry(proposals: &[usize], i: usize, j: usize) -> usize {
    proposals[i].min(proposals[j])
}

/// One `C^k` per entry: Metropolis weights over the edges whose coordinated
/// entry is `k`, identity rows for agents that exchange nothing on `k`.
pub fn coordinated_consensus_weights(g: &DirectedGraph, proposals: &[usize], k: usize) -> Vec<WeightMatrix> {
    let n = g.n_agents();
    (0..k)
        .map(|entry| {
            let neighbors: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    g.out_neighbors(i)
                        .filter(|&j| edge_entry(proposals, i, j) == entry)
                        .collect()
                })
                .collect();
            metropolis_from_neighbors(&neighbors)
        })
        .collect()
}

/// Inverse-CDF draw from a discrete distribution.
pub(crate) fn sample_index(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub value: f64,
    pub pass: bool,
}

/// Outcome of the four weight-matrix conditions checked by
/// [`check_weight_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// Max over samples of `max_i |row_sum_i - 1|`.
    pub row_stochastic: Check,
    /// Smallest positive entry seen, compared against `eta`.
    pub min_positive_entry: Check,
    /// `max_j |col_sum_j(E[C]) - 1|`.
    pub mean_column_stochastic: Check,
    /// Spectral norm of `E[C^T (I - 11^T/N) C]`; must be below one.
    pub contraction_norm: Check,
    /// `None` when the sampler does not declare a support pattern.
    pub respects_graph: Option<bool>,
    pub used_exact_mean: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.row_stochastic.pass
            && self.min_positive_entry.pass
            && self.mean_column_stochastic.pass
            && self.contraction_norm.pass
            && self.respects_graph.unwrap_or(true)
    }
}

pub fn check_weight_assumptions(
    sampler: &mut dyn WeightSampler,
    n_samples: usize,
    eta: f64,
    tol: f64,
    rng: &mut SimRng,
) -> Result<AssumptionReport> {
    if n_samples < 1 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let dim = sampler.dim();
    let block = sampler.block_size();
    let projector = disagreement_projector(dim / block, block);
    let support = sampler.support();

    let mut row_dev: f64 = 0.0;
    let mut min_pos = f64::INFINITY;
    let mut sum = DMatrix::zeros(dim, dim);
    let mut quad = DMatrix::zeros(dim, dim);
    let mut respects = true;
    for _ in 0..n_samples {
        let c = sampler.sample(rng);
        for i in 0..dim {
            row_dev = row_dev.max((c.row(i).sum() - 1.0).abs());
        }
        for (idx, &v) in c.iter().enumerate() {
            if v > 0.0 {
                min_pos = min_pos.min(v);
                if let Some(s) = &support {
                    respects &= s[idx];
                }
            }
        }
        quad += c.transpose() * &projector * &c;
        sum += c;
    }
    let inv = 1.0 / n_samples as f64;
    let exact = sampler.exact_mean();
    let used_exact_mean = exact.is_some();
    let mean = exact.unwrap_or(sum * inv);
    let col_dev = (0..dim)
        .map(|j| (mean.column(j).sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let norm = spectral_norm(&(quad * inv))?;

    Ok(AssumptionReport {
        row_stochastic: Check {
            value: row_dev,
            pass: row_dev <= tol,
        },
        min_positive_entry: Check {
            value: min_pos,
            pass: min_pos >= eta,
        },
        mean_column_stochastic: Check {
            value: col_dev,
            pass: col_dev <= tol,
        },
        contraction_norm: Check {
            value: norm,
            pass: norm < 1.0 - tol,
        },
        respects_graph: support.map(|_| respects),
        used_exact_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    #[test]
    fn strong_connectivity_examples() {
        assert!(is_strongly_connected(&DirectedGraph::cycle(3).unwrap()));
        assert!(!is_strongly_connected(&DirectedGraph::new(2, &[(0, 1)]).unwrap()));
        assert!(is_strongly_connected(&DirectedGraph::complete(5).unwrap()));
        assert!(is_strongly_connected(&DirectedGraph::new(1, &[]).unwrap()));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(DirectedGraph::new(2, &[(0, 2)]).is_err());
        assert!(DirectedGraph::new(2, &[(0, 1), (0, 1)]).is_err());
        assert!(DirectedGraph::new(2, &[(1, 1)]).is_err());
        assert!(DirectedGraph::new(0, &[]).is_err());
    }

    #[test]
    fn push_sum_weights_on_cycle_are_halves() {
        let b = build_push_sum_weights(&DirectedGraph::cycle(3).unwrap()).unwrap();
        for j in 0..3 {
            assert_eq!(b.get(j, j), 0.5);
            assert_eq!(b.get((j + 1) % 3, j), 0.5);
            assert_eq!(b.get((j + 2) % 3, j), 0.0);
        }
    }

    #[test]
    fn push_sum_weights_single_node_and_star() {
        let one = build_push_sum_weights(&DirectedGraph::new(1, &[]).unwrap()).unwrap();
        assert_eq!(one.matrix(), &DMatrix::from_element(1, 1, 1.0));

        // 0 -> 1,2,3 plus return edges so the graph is strongly connected.
        let g = DirectedGraph::new(4, &[(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0)]).unwrap();
        let b = build_push_sum_weights(&g).unwrap();
        for i in 0..4 {
            assert_eq!(b.get(i, 0), 0.25);
        }
        assert!(b.max_column_sum_deviation() < 1e-15);
    }

    #[test]
    fn push_sum_rejects_weakly_connected() {
        let g = DirectedGraph::new(2, &[(0, 1)]).unwrap();
        assert!(matches!(build_push_sum_weights(&g), Err(Error::NotStronglyConnected)));
    }

    #[test]
    fn entrywise_k1_matches_push_sum() {
        let g = DirectedGraph::random_strongly_connected(6, 0.3, &mut rng(3)).unwrap();
        let b = build_push_sum_weights(&g).unwrap();
        let bk = build_entrywise_push_weights(&g, &[0; 6], 1).unwrap();
        assert_eq!(bk.len(), 1);
        assert_eq!(bk[0], b);
    }

    #[test]
    fn entrywise_two_agents_opposite_picks() {
        let g = DirectedGraph::complete(2).unwrap();
        let bk = build_entrywise_push_weights(&g, &[0, 1], 2).unwrap();
        // B^0: column 0 spreads, column 1 keeps.
        assert_eq!(bk[0].get(0, 0), 0.5);
        assert_eq!(bk[0].get(1, 0), 0.5);
        assert_eq!(bk[0].get(0, 1), 0.0);
        assert_eq!(bk[0].get(1, 1), 1.0);
        // B^1 mirrors it.
        assert_eq!(bk[1].get(0, 0), 1.0);
        assert_eq!(bk[1].get(1, 0), 0.0);
        assert_eq!(bk[1].get(0, 1), 0.5);
        assert_eq!(bk[1].get(1, 1), 0.5);
        for m in &bk {
            assert_eq!(m.max_column_sum_deviation(), 0.0);
        }
    }

    #[test]
    fn entrywise_selection_out_of_range() {
        let g = DirectedGraph::complete(2).unwrap();
        assert!(matches!(
            build_entrywise_push_weights(&g, &[0, 2], 2),
            Err(Error::SelectionOutOfRange { agent: 1, index: 2, k: 2 })
        ));
    }

    #[test]
    fn metropolis_examples() {
        let pair = build_metropolis_weights(&DirectedGraph::complete(2).unwrap()).unwrap();
        assert_eq!(pair.matrix(), &DMatrix::from_element(2, 2, 0.5));

        let path = DirectedGraph::new(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let w = build_metropolis_weights(&path).unwrap();
        let third = 1.0 / 3.0;
        assert_relative_eq!(w.get(0, 1), third);
        assert_relative_eq!(w.get(1, 2), third);
        assert_eq!(w.get(0, 2), 0.0);
        assert_relative_eq!(w.get(0, 0), 2.0 * third, epsilon = 1e-15);
        assert_relative_eq!(w.get(1, 1), third, epsilon = 1e-15);
        assert_relative_eq!(w.get(2, 2), 2.0 * third, epsilon = 1e-15);

        let single = build_metropolis_weights(&DirectedGraph::new(1, &[]).unwrap()).unwrap();
        assert_eq!(single.get(0, 0), 1.0);
    }

    #[test]
    fn metropolis_rejects_asymmetric() {
        let g = DirectedGraph::cycle(3).unwrap();
        assert!(matches!(build_metropolis_weights(&g), Err(Error::AsymmetricEdges { .. })));
    }

    #[test]
    fn block_matrix_examples() {
        let c = build_metropolis_weights(&DirectedGraph::complete(3).unwrap()).unwrap();
        let single = build_block_matrix(std::slice::from_ref(&c)).unwrap();
        assert_eq!(single.matrix(), c.matrix());

        let id = WeightMatrix::identity(2);
        let b = build_block_matrix(&[id.clone(), id]).unwrap();
        assert_eq!(b.matrix(), &DMatrix::identity(4, 4));

        let err = build_block_matrix(&[WeightMatrix::identity(2), WeightMatrix::identity(3)]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn block_matrix_matches_kronecker_sum() {
        let c1 = WeightMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0])).unwrap();
        let c2 = WeightMatrix::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4])).unwrap();
        let b = build_block_matrix(&[c1.clone(), c2.clone()]).unwrap();
        let mut brute = DMatrix::zeros(4, 4);
        for (k, c) in [c1, c2].iter().enumerate() {
            let mut ek = DMatrix::zeros(2, 2);
            ek[(k, k)] = 1.0;
            brute += c.matrix().kronecker(&ek);
        }
        assert_eq!(b.matrix(), &brute);
    }

    #[test]
    fn spectral_norm_examples() {
        assert_relative_eq!(spectral_norm(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.2]));
        assert_relative_eq!(spectral_norm(&d).unwrap(), 0.5, epsilon = 1e-10);
        let p = disagreement_projector(2, 1);
        assert_relative_eq!(spectral_norm(&p).unwrap(), 1.0, epsilon = 1e-10);
        assert!(spectral_norm(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn assumption_checks_metropolis_path() {
        let path = DirectedGraph::new(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let w = build_metropolis_weights(&path).unwrap();
        let mut s = FixedSampler::new(w.matrix().clone()).with_graph(&path);
        let r = check_weight_assumptions(&mut s, 1, 0.1, 1e-12, &mut rng(0)).unwrap();
        assert!(r.all_pass(), "{r:?}");
        // Eigenvalues of W^T P W computed directly.
        let q = w.matrix().transpose() * disagreement_projector(3, 1) * w.matrix();
        let direct = q.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert_relative_eq!(r.contraction_norm.value, direct, epsilon = 1e-9);
        assert!(r.contraction_norm.value < 1.0);
    }

    #[test]
    fn assumption_checks_identity_fails_contraction_only() {
        let mut s = FixedSampler::new(DMatrix::identity(4, 4));
        let r = check_weight_assumptions(&mut s, 3, 0.1, 1e-12, &mut rng(0)).unwrap();
        assert!(r.row_stochastic.pass);
        assert!(r.min_positive_entry.pass);
        assert!(r.mean_column_stochastic.pass);
        assert!(!r.contraction_norm.pass);
        assert_relative_eq!(r.contraction_norm.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn assumption_checks_reject_zero_samples() {
        let mut s = FixedSampler::new(DMatrix::identity(2, 2));
        assert!(check_weight_assumptions(&mut s, 0, 0.1, 1e-9, &mut rng(0)).is_err());
    }

    #[test]
    fn entrywise_consensus_sampler_passes() {
        let g = DirectedGraph::complete(4).unwrap();
        let mut s = EntrywiseConsensusSampler::new(g, vec![vec![0.5, 0.5]; 4]).unwrap();
        let r = check_weight_assumptions(&mut s, 400, 1e-3, 1e-9, &mut rng(5)).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert!(!r.used_exact_mean);
    }

    #[test]
    fn edge_list_round_trip_example() {
        let g = DirectedGraph::new(3, &[(2, 0), (0, 1), (1, 2)]).unwrap();
        let text = g.to_edge_list();
        assert_eq!(text, "3\n0 1\n1 2\n2 0\n");
        assert_eq!(DirectedGraph::from_edge_list(&text).unwrap(), g);
        assert!(DirectedGraph::from_edge_list("3\n0 x\n").is_err());
    }

    proptest! {
        #[test]
        fn push_matrices_are_column_stochastic(
            seed in any::<u64>(),
            n in 1usize..8,
            k in 1usize..5,
            p in 0.0f64..0.6,
        ) {
            let mut r = rng(seed);
            let g = DirectedGraph::random_strongly_connected(n, p, &mut r).unwrap();
            prop_assert!(is_strongly_connected(&g));
            let b = build_push_sum_weights(&g).unwrap();
            prop_assert!(b.max_column_sum_deviation() <= 1e-12);
            prop_assert!(b.respects(&g));
            let sel: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
            let bk = build_entrywise_push_weights(&g, &sel, k).unwrap();
            for m in &bk {
                prop_assert!(m.max_column_sum_deviation() <= 1e-12);
                prop_assert!(m.respects(&g));
            }
            // Each sender moves mass off-diagonal in exactly one entry (when it has neighbors).
            for j in 0..n {
                let spreading = bk
                    .iter()
                    .filter(|m| (0..n).any(|i| i != j && m.get(i, j) > 0.0))
                    .count();
                prop_assert_eq!(spreading, usize::from(g.out_degree(j) > 0));
            }
        }

        #[test]
        fn block_matrix_has_kronecker_sparsity(seed in any::<u64>(), n in 1usize..5, k in 1usize..5) {
            let mut r = rng(seed);
            let mats: Vec<_> = (0..k)
                .map(|_| {
                    let g = DirectedGraph::random_connected_undirected(n, 0.5, &mut r).unwrap();
                    build_metropolis_weights(&g).unwrap()
                })
                .collect();
            let b = build_block_matrix(&mats).unwrap();
            for row in 0..n * k {
                for col in 0..n * k {
                    if row % k != col % k {
                        prop_assert_eq!(b.matrix()[(row, col)], 0.0);
                    } else {
                        prop_assert_eq!(b.matrix()[(row, col)], mats[row % k].get(row / k, col / k));
                    }
                }
            }
        }

        #[test]
        fn edge_list_round_trips(seed in any::<u64>(), n in 1usize..10, p in 0.0f64..1.0) {
            let g = DirectedGraph::random_strongly_connected(n, p, &mut rng(seed)).unwrap();
            let back = DirectedGraph::from_edge_list(&g.to_edge_list()).unwrap();
            prop_assert_eq!(back.to_edge_list(), g.to_edge_list());
            prop_assert_eq!(back, g);
        }
    }
}
