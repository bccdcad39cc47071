//! Finite networked multi-agent MDPs and the critic's linear feature map.
//!
//! Joint actions are encoded in mixed radix with agent 0 most significant.
//! State-action rows are laid out as `s * n_joint_actions + a` everywhere
//! (transition table, reward tables, feature matrix).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::textio::{join_f64, Tokens};
use crate::SimRng;

const ROW_SUM_TOL: f64 = 1e-12;
const MAX_GENERATION_ATTEMPTS: usize = 10_000;
/// Self-transition mass mixed in when a generated chain is periodic.
pub const APERIODICITY_EPS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkedMdp {
    n_states: usize,
    action_sizes: Vec<usize>,
    strides: Vec<usize>,
    n_joint: usize,
    /// `[(s * n_joint + a) * n_states + s']`
    transition: Vec<f64>,
    /// `[agent][s * n_joint + a]`
    rewards: Vec<Vec<f64>>,
    reward_noise: f64,
}

impl NetworkedMdp {
    pub fn new(
        n_states: usize,
        action_sizes: Vec<usize>,
        transition: Vec<f64>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if n_states == 0 || action_sizes.is_empty() || action_sizes.contains(&0) {
            return Err(Error::InvalidMdp("state count, agent count and action sizes must be positive".into()));
        }
        let n_joint: usize = action_sizes.iter().product();
        let mut strides = vec![1; action_sizes.len()];
        for i in (0..action_sizes.len() - 1).rev() {
            strides[i] = strides[i + 1] * action_sizes[i + 1];
        }
        let rows = n_states * n_joint;
        if transition.len() != rows * n_states {
            return Err(Error::DimensionMismatch {
                what: "transition table",
                expected: rows * n_states,
                found: transition.len(),
            });
        }
        for (row, chunk) in transition.chunks(n_states).enumerate() {
            if chunk.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidMdp(format!("negative or non-finite probability in row {row}")));
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMdp(format!("transition row {row} sums to {sum}")));
            }
        }
        if rewards.len() != action_sizes.len() {
            return Err(Error::DimensionMismatch {
                what: "reward tables",
                expected: action_sizes.len(),
                found: rewards.len(),
            });
        }
        for table in &rewards {
            if table.len() != rows {
                return Err(Error::DimensionMismatch {
                    what: "reward table",
                    expected: rows,
                    found: table.len(),
                });
            }
            if table.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidMdp("non-finite reward".into()));
            }
        }
        Ok(Self {
            n_states,
            action_sizes,
            strides,
            n_joint,
            transition,
            rewards,
            reward_noise: 0.0,
        })
    }

    /// Adds i.i.d. uniform noise on `[-amplitude, amplitude]` to sampled
    /// rewards. The conditional mean stays `R^i(s, a)`.
    pub fn with_reward_noise(mut self, amplitude: f64) -> Self {
        self.reward_noise = amplitude.abs();
        self
    }

    pub fn reward_noise(&self) -> f64 {
        self.reward_noise
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agents(&self) -> usize {
        self.action_sizes.len()
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn n_joint_actions(&self) -> usize {
        self.n_joint
    }

    pub fn n_state_actions(&self) -> usize {
        self.n_states * self.n_joint
    }

    pub fn sa_index(&self, s: usize, a: usize) -> usize {
        s * self.n_joint + a
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.sa_index(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, agent: usize, s: usize, a: usize) -> f64 {
        self.rewards[agent][self.sa_index(s, a)]
    }

    pub fn reward_table(&self, agent: usize) -> &[f64] {
        &self.rewards[agent]
    }

    /// Team-average reward `R̄(s, a)`.
    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        let idx = self.sa_index(s, a);
        self.rewards.iter().map(|t| t[idx]).sum::<f64>() / self.n_agents() as f64
    }

    /// Uniform bound on sampled rewards.
    pub fn r_max(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .fold(0.0f64, |m, r| m.max(r.abs()))
            + self.reward_noise
    }

    pub fn encode_joint(&self, actions: &[usize]) -> Result<usize> {
        if actions.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                what: "joint action",
                expected: self.n_agents(),
                found: actions.len(),
            });
        }
        let mut a = 0;
        for (i, (&ai, &size)) in actions.iter().zip(&self.action_sizes).enumerate() {
            if ai >= size {
                return Err(Error::IndexOutOfRange {
                    what: "action",
                    index: ai,
                    bound: size,
                });
            }
            a += ai * self.strides[i];
        }
        Ok(a)
    }

    pub fn decode_joint(&self, a: usize) -> Vec<usize> {
        (0..self.n_agents()).map(|i| self.agent_action(a, i)).collect()
    }

    pub fn agent_action(&self, a: usize, agent: usize) -> usize {
        (a / self.strides[agent]) % self.action_sizes[agent]
    }

    /// Joint action `a` with agent `agent`'s component replaced by `b`.
    pub fn with_agent_action(&self, a: usize, agent: usize, b: usize) -> usize {
        a - self.agent_action(a, agent) * self.strides[agent] + b * self.strides[agent]
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s < self.n_states {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "state",
                index: s,
                bound: self.n_states,
            })
        }
    }

    fn check_joint(&self, a: usize) -> Result<()> {
        if a < self.n_joint {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "joint action",
                index: a,
                bound: self.n_joint,
            })
        }
    }

    /// Structured text: dimensions header, then the transition table (one
    /// row per `(s, a)`) and one reward row per agent.
    pub fn to_text(&self) -> String {
        let mut out = String::from("netac-mdp 1\n");
        out += &format!("states {}\n", self.n_states);
        out += &format!(
            "actions {}\n",
            self.action_sizes.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
        );
        out += "transition\n";
        for row in self.transition.chunks(self.n_states) {
            out += &join_f64(row);
            out.push('\n');
        }
        out += "rewards\n";
        for table in &self.rewards {
            out += &join_f64(table);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = Tokens::new(text);
        t.expect("netac-mdp")?;
        t.expect("1")?;
        t.expect("states")?;
        let n_states = t.usize()?;
        t.expect("actions")?;
        let mut action_sizes = Vec::new();
        loop {
            let tok = t.next_str()?;
            if tok == "transition" {
                break;
            }
            action_sizes.push(tok.parse().map_err(|_| Error::Parse {
                line: 3,
                msg: format!("bad action size {tok:?}"),
            })?);
        }
        let n_joint: usize = action_sizes.iter().product();
        let transition = t.f64s(n_states * n_joint * n_states)?;
        t.expect("rewards")?;
        let rewards = (0..action_sizes.len())
            .map(|_| t.f64s(n_states * n_joint))
            .collect::<Result<Vec<_>>>()?;
        t.finish()?;
        Self::new(n_states, action_sizes, transition, rewards)
    }
}

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: usize,
    pub joint_action: usize,
    pub next_state: usize,
    pub rewards: Vec<f64>,
}

/// Draws `s'` from `P(. | s, a)` and returns the per-agent rewards.
pub fn step(mdp: &NetworkedMdp, s: usize, joint_action: usize, rng: &mut SimRng) -> Result<TransitionSample> {
    mdp.check_state(s)?;
    mdp.check_joint(joint_action)?;
    let next_state = crate::graph::sample_index(mdp.transition_row(s, joint_action), rng);
    let rewards = (0..mdp.n_agents())
        .map(|i| {
            let r = mdp.reward(i, s, joint_action);
            if mdp.reward_noise > 0.0 {
                r + mdp.reward_noise * (2.0 * rng.random::<f64>() - 1.0)
            } else {
                r
            }
        })
        .collect();
    Ok(TransitionSample {
        state: s,
        joint_action,
        next_state,
        rewards,
    })
}

/// `P^θ(s'|s) = Σ_a π(s, a) P(s'|s, a)` for a joint-policy table of shape
/// `n_states x n_joint_actions`.
pub fn induced_chain(mdp: &NetworkedMdp, joint_policy: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_joint_actions());
    if joint_policy.shape() != (ns, na) {
        return Err(Error::DimensionMismatch {
            what: "joint policy table",
            expected: ns * na,
            found: joint_policy.len(),
        });
    }
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = joint_policy[(s, a)];
            if w == 0.0 {
                continue;
            }
            for (s2, prob) in mdp.transition_row(s, a).iter().enumerate() {
                p[(s, s2)] += w * prob;
            }
        }
    }
    Ok(p)
}

/// Irreducible (one strongly connected class over positive entries) and
/// aperiodic (period 1).
pub fn validate_ergodicity(mdp: &NetworkedMdp, joint_policy: &DMatrix<f64>) -> bool {
    induced_chain(mdp, joint_policy).is_ok_and(|p| chain_is_ergodic(&p))
}

pub fn chain_is_ergodic(p: &DMatrix<f64>) -> bool {
    chain_is_irreducible(p) && chain_period(p) == 1
}

pub fn chain_is_irreducible(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let w = if forward { p[(u, v)] } else { p[(v, u)] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    n > 0 && reach(true) && reach(false)
}

/// Period of an irreducible chain: gcd over edges `u -> v` of
/// `level(u) + 1 - level(v)`, with BFS levels from state 0.
pub fn chain_period(p: &DMatrix<f64>) -> usize {
    let n = p.nrows();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] > 0.0 && level[u] != usize::MAX && level[v] != usize::MAX {
                let diff = (level[u] + 1).abs_diff(level[v]);
                g = gcd(g, diff);
            }
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Uniform joint policy table.
pub fn uniform_policy_table(mdp: &NetworkedMdp) -> DMatrix<f64> {
    DMatrix::from_element(mdp.n_states(), mdp.n_joint_actions(), 1.0 / mdp.n_joint_actions() as f64)
}

/// Random Garnet MDP. Each `(s, a)` moves to `branching` distinct states with
/// Dirichlet(1, ..., 1) probabilities; rewards are i.i.d. uniform on
/// `[0, reward_scale]`. Draws are repeated until the uniform-policy chain is
/// irreducible; a periodic chain gets `APERIODICITY_EPS` self-transition mass.
pub fn generate_garnet(
    n_states: usize,
    action_sizes: &[usize],
    branching: usize,
    reward_scale: f64,
    seed: u64,
) -> Result<NetworkedMdp> {
    if n_states == 0 || action_sizes.is_empty() || action_sizes.contains(&0) || branching == 0 {
        return Err(Error::InfeasibleSizes("all sizes must be at least 1".into()));
    }
    if branching > n_states {
        return Err(Error::InfeasibleSizes(format!(
            "branching {branching} exceeds the number of states {n_states}"
        )));
    }
    if !(reward_scale > 0.0) || !reward_scale.is_finite() {
        return Err(Error::InfeasibleSizes(format!("reward scale {reward_scale} must be positive")));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let n_joint: usize = action_sizes.iter().product();
    let rows = n_states * n_joint;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut transition = vec![0.0; rows * n_states];
        for row in transition.chunks_mut(n_states) {
            let targets = index::sample(&mut rng, n_states, branching);
            let weights: Vec<f64> = (0..branching).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = weights.iter().sum();
            for (t, w) in targets.iter().zip(&weights) {
                row[t] = w / total;
            }
            renormalize(row);
        }
        let rewards: Vec<Vec<f64>> = action_sizes
            .iter()
            .map(|_| (0..rows).map(|_| reward_scale * rng.random::<f64>()).collect())
            .collect();
        let mut mdp = NetworkedMdp::new(n_states, action_sizes.to_vec(), transition, rewards)?;
        let chain = induced_chain(&mdp, &uniform_policy_table(&mdp))?;
        if !chain_is_irreducible(&chain) {
            continue;
        }
        if chain_period(&chain) != 1 {
            for s in 0..n_states {
                for a in 0..n_joint {
                    let start = (s * n_joint + a) * n_states;
                    let row = &mut mdp.transition[start..start + n_states];
                    row.iter_mut().for_each(|p| *p *= 1.0 - APERIODICITY_EPS);
                    row[s] += APERIODICITY_EPS;
                    renormalize(row);
                }
            }
        }
        return Ok(mdp);
    }
    Err(Error::InfeasibleSizes(format!(
        "no irreducible chain found after {MAX_GENERATION_ATTEMPTS} draws"
    )))
}

/// Pushes the rounding residue into the largest entry so rows sum to one.
fn renormalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    let (imax, _) = row
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    row[imax] += 1.0 - total;
}

/// Linear features `φ(s, a) ∈ R^K` for the critic, stored as the
/// `|S||A| x K` matrix Φ.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    row_major: Vec<f64>,
    bound: f64,
}

/// Least-squares residual of `Φu = 1` must exceed this.
pub const ONES_RESIDUAL_TOL: f64 = 1e-6;
const RANK_RTOL: f64 = 1e-10;

impl FeatureMap {
    /// Validates full column rank, a bounded table, and that `Φu = 1` has no
    /// solution.
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let (rows, k) = phi.shape();
        if k == 0 {
            return Err(Error::InvalidFeatures("feature dimension must be positive".into()));
        }
        if k >= rows {
            return Err(Error::InvalidFeatures(format!(
                "K = {k} must be smaller than the number of state-action pairs {rows}"
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatures("non-finite feature entry".into()));
        }
        let bound = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diag = feature_diagnostics(&phi)?;
        if diag.rank < k {
            return Err(Error::InvalidFeatures(format!(
                "feature matrix is rank deficient (rank {} < K = {k}, singular value ratio {:e})",
                diag.rank, diag.singular_ratio
            )));
        }
        if diag.ones_residual <= ONES_RESIDUAL_TOL {
            return Err(Error::InvalidFeatures(format!(
                "the all-ones vector lies in the feature span (residual {:e})",
                diag.ones_residual
            )));
        }
        let row_major = phi.transpose().as_slice().to_vec();
        Ok(Self { phi, row_major, bound })
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.phi.nrows()
    }

    /// Max-norm bound over all feature vectors.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `φ(s, a)` for state-action row `sa`.
    pub fn row(&self, sa: usize) -> &[f64] {
        let k = self.k();
        &self.row_major[sa * k..(sa + 1) * k]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("netac-features 1\nrows {} k {}\n", self.n_rows(), self.k());
        for r in 0..self.n_rows() {
            out += &join_f64(self.phi.row(r).iter());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = Tokens::new(text);
        t.expect("netac-features")?;
        t.expect("1")?;
        t.expect("rows")?;
        let rows = t.usize()?;
        t.expect("k")?;
        let k = t.usize()?;
        let data = t.f64s(rows * k)?;
        t.finish()?;
        Self::new(DMatrix::from_row_slice(rows, k, &data))
    }
}

/// Measured quantities behind the feature conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDiagnostics {
    /// Numerical column rank at relative tolerance `1e-10`.
    pub rank: usize,
    /// Smallest over largest singular value.
    pub singular_ratio: f64,
    /// Least-squares residual `min_u ‖Φu - 1‖`.
    pub ones_residual: f64,
}

pub fn feature_diagnostics(phi: &DMatrix<f64>) -> Result<FeatureDiagnostics> {
    let rows = phi.nrows();
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank = svd.singular_values.iter().filter(|&&v| v > RANK_RTOL * smax).count();
    let ones = DVector::from_element(rows, 1.0);
    let u = svd
        .solve(&ones, RANK_RTOL * smax)
        .map_err(|e| Error::InvalidFeatures(e.to_string()))?;
    Ok(FeatureDiagnostics {
        rank,
        singular_ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        ones_residual: (phi * u - &ones).norm(),
    })
}

/// Random features uniform on `[-1, 1]`, redrawn until [`FeatureMap::new`]
/// accepts them.
pub fn generate_features(mdp: &NetworkedMdp, k: usize, seed: u64) -> Result<FeatureMap> {
    let rows = mdp.n_state_actions();
    if k == 0 || k >= rows {
        return Err(Error::InvalidFeatures(format!(
            "K = {k} must lie in [1, {rows})"
        )));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..100 {
        let phi = DMatrix::from_fn(rows, k, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        match FeatureMap::new(phi) {
            Ok(f) => return Ok(f),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
