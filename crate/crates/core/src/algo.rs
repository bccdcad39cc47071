//! The three training algorithms as seeded, resumable simulation loops:
//!
//! * `consensus-entrywise` — entry-wise consensus on an undirected graph,
//!   one coordinated entry per edge and round;
//! * `push-full` — push-sum critic on a directed graph, every entry mixed;
//! * `push-entrywise` — push-sum critic where each agent broadcasts one
//!   randomly selected entry (plus its weight) per round.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::critic::{dot, local_advantage_sample, mu_update, td_error, CriticState, Y_UNDERFLOW};
use crate::env::{step, validate_ergodicity, FeatureMap, NetworkedMdp, TransitionSample};
use crate::error::{Error, Result};
use crate::graph::{
    build_entrywise_push_weights, build_push_sum_weights, coordinated_consensus_weights, is_strongly_connected,
    sample_index, DirectedGraph, WeightMatrix,
};
use crate::oracle::PolicyEvaluation;
use crate::policy::{project, PolicyParams, SoftmaxPolicy};
use crate::textio::{fmt_f64, join_f64};
use crate::SimRng;

/// Tolerance on `Σ_k p^{ik} = 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;

pub const DEFAULT_LOG_EVERY: u64 = 100;

pub const METRICS_HEADER: [&str; 8] = [
    "t",
    "mu_mean",
    "consensus_err",
    "critic_err",
    "J_theta",
    "scalars_per_agent",
    "y_min",
    "y_max",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ConsensusEntrywise,
    PushFull,
    PushEntrywise,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::ConsensusEntrywise, Algorithm::PushFull, Algorithm::PushEntrywise];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::ConsensusEntrywise => "consensus-entrywise",
            Algorithm::PushFull => "push-full",
            Algorithm::PushEntrywise => "push-entrywise",
        }
    }

    /// Scalars each agent transmits per round (coordination excluded).
    pub fn scalars_per_round(self, k: usize) -> u64 {
        match self {
            Algorithm::ConsensusEntrywise => 1,
            Algorithm::PushFull => k as u64 + 1,
            Algorithm::PushEntrywise => 2,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == s).ok_or_else(|| {
            let tags: Vec<&str> = Self::ALL.iter().map(|a| a.tag()).collect();
            Error::InvalidConfig(format!("unknown algorithm '{s}'; valid tags: {}", tags.join(", ")))
        })
    }
}

/// Diminishing stepsizes `β_ω,t = c_ω/(t+1)^ν_ω` and `β_θ,t = c_θ/(t+1)^ν_θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub c_omega: f64,
    pub c_theta: f64,
    pub nu_omega: f64,
    pub nu_theta: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            c_omega: 1.0,
            c_theta: 1.0,
            nu_omega: 0.65,
            nu_theta: 0.85,
        }
    }
}

impl Schedule {
    /// Requires `0.5 < ν_ω < ν_θ ≤ 1`, `c_ω ∈ (0, 1]` (so that the reward
    /// tracker stays a convex combination) and `c_θ > 0`.
    pub fn validate(&self) -> Result<()> {
        let ok = 0.5 < self.nu_omega && self.nu_omega < self.nu_theta && self.nu_theta <= 1.0;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "stepsize exponents must satisfy 0.5 < nu_omega < nu_theta <= 1 (got {}, {})",
                self.nu_omega, self.nu_theta
            )));
        }
        if !(self.c_omega > 0.0 && self.c_omega <= 1.0) {
            return Err(Error::InvalidConfig(format!("c_omega must lie in (0, 1] (got {})", self.c_omega)));
        }
        if !(self.c_theta > 0.0 && self.c_theta.is_finite()) {
            return Err(Error::InvalidConfig(format!("c_theta must be positive (got {})", self.c_theta)));
        }
        Ok(())
    }

    pub fn beta_omega(&self, t: u64) -> f64 {
        self.c_omega / ((t + 1) as f64).powf(self.nu_omega)
    }

    pub fn beta_theta(&self, t: u64) -> f64 {
        self.c_theta / ((t + 1) as f64).powf(self.nu_theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub schedule: Schedule,
    pub horizon: u64,
    /// Per-agent entry-selection probabilities; uniform when absent.
    pub selection_probs: Option<Vec<Vec<f64>>>,
    pub freeze_actor: bool,
    /// Disables the TD half-step and the reward tracker, leaving pure mixing.
    pub freeze_critic_learning: bool,
    pub seed: u64,
    pub log_every: u64,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, horizon: u64, seed: u64) -> Self {
        Self {
            algorithm,
            schedule: Schedule::default(),
            horizon,
            selection_probs: None,
            freeze_actor: false,
            freeze_critic_learning: false,
            seed,
            log_every: DEFAULT_LOG_EVERY,
        }
    }

    /// Validates against the instance sizes and returns the resolved
    /// selection probabilities.
    pub fn validate(&self, n_agents: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        self.schedule.validate()?;
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be positive".into()));
        }
        let probs = match &self.selection_probs {
            None => vec![vec![1.0 / k as f64; k]; n_agents],
            Some(p) => p.clone(),
        };
        if probs.len() != n_agents {
            return Err(Error::DimensionMismatch {
                what: "selection probability rows",
                expected: n_agents,
                found: probs.len(),
            });
        }
        for (i, row) in probs.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "selection probability entries",
                    expected: k,
                    found: row.len(),
                });
            }
            if row.iter().any(|&p| !(p > 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "selection probabilities of agent {i} must be positive and sum to 1"
                )));
            }
        }
        Ok(probs)
    }
}

/// Per-coordinate mean across agents.
pub fn network_average(stacked: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = stacked.first() else {
        return Vec::new();
    };
    let n = stacked.len() as f64;
    let mut avg = vec![0.0; first.len()];
    for row in stacked {
        for (a, v) in avg.iter_mut().zip(row) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= n);
    avg
}

/// A transition together with the next action `a_{t+1}`.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub sample: &'a TransitionSample,
    pub next_action: usize,
}

/// Outcome of one critic round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// Scalars each agent transmitted this round.
    pub scalars_sent: u64,
    /// Per-agent TD errors `δ̃^i_t`.
    pub td_errors: Vec<f64>,
    /// Entry indices exchanged to agree on per-edge entries (consensus only).
    pub coordination_messages: u64,
}

fn check_round_inputs(states: &[CriticState], mdp: &NetworkedMdp, features: &FeatureMap) -> Result<()> {
    let n = mdp.n_agents();
    if states.len() != n {
        return Err(Error::DimensionMismatch {
            what: "critic states",
            expected: n,
            found: states.len(),
        });
    }
    if features.n_rows() != mdp.n_state_actions() {
        return Err(Error::DimensionMismatch {
            what: "feature rows",
            expected: mdp.n_state_actions(),
            found: features.n_rows(),
        });
    }
    if let Some(st) = states.iter().find(|s| s.k() != features.k()) {
        return Err(Error::DimensionMismatch {
            what: "critic dimension",
            expected: features.k(),
            found: st.k(),
        });
    }
    Ok(())
}

fn check_weights(weights: &[WeightMatrix], n: usize, count: usize) -> Result<()> {
    if weights.len() != count {
        return Err(Error::DimensionMismatch {
            what: "weight matrices",
            expected: count,
            found: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| w.dim() != n) {
        return Err(Error::DimensionMismatch {
            what: "weight matrix size",
            expected: n,
            found: w.dim(),
        });
    }
    Ok(())
}

/// Reward tracking and the local TD half-step `ω̃ = ω + β δ̃ φ(s, a)`, in
/// place. The TD error is evaluated at `z` (push variants) or `ω`
/// (consensus). With `beta = 0` nothing is updated.
fn local_half_step(
    states: &mut [CriticState],
    mdp: &NetworkedMdp,
    features: &FeatureMap,
    tr: Transition<'_>,
    beta: f64,
    use_ratio: bool,
) -> Result<Vec<f64>> {
    let s = tr.sample;
    let phi = features.row(mdp.sa_index(s.state, s.joint_action));
    let phi_next = features.row(mdp.sa_index(s.next_state, tr.next_action));
    states
        .iter_mut()
        .zip(&s.rewards)
        .map(|(st, &r)| {
            let est = if use_ratio { &st.z } else { &st.omega };
            let delta = td_error(r, st.mu, dot(est, phi_next), dot(est, phi));
            if beta > 0.0 {
                st.mu = mu_update(st.mu, r, beta)?;
                for (w, p) in st.omega.iter_mut().zip(phi) {
                    *w += beta * delta * p;
                }
            }
            Ok(delta)
        })
        .collect()
}

/// `out[i] = Σ_j m(i, j) values[j][entry]`.
fn mix_entry(m: &DMatrix<f64>, column: &[f64]) -> Vec<f64> {
    (0..column.len())
        .map(|i| column.iter().enumerate().map(|(j, v)| m[(i, j)] * v).sum())
        .collect()
}

/// Mixes numerators and weights entry by entry (`mat(k)` is the matrix for
/// entry `k`), then refreshes `z` and checks the weights.
fn push_mix<'m>(states: &mut [CriticState], mat: impl Fn(usize) -> &'m DMatrix<f64>, t: u64) -> Result<()> {
    let k = states[0].k();
    for entry in 0..k {
        let m = mat(entry);
        let omega: Vec<f64> = states.iter().map(|s| s.omega[entry]).collect();
        let y: Vec<f64> = states.iter().map(|s| s.y[entry]).collect();
        for (i, (w, yv)) in mix_entry(m, &omega).into_iter().zip(mix_entry(m, &y)).enumerate() {
            states[i].omega[entry] = w;
            states[i].y[entry] = yv;
        }
    }
    for (agent, st) in states.iter_mut().enumerate() {
        if let Some((entry, &value)) = st.y.iter().enumerate().find(|(_, &v)| !(v >= Y_UNDERFLOW)) {
            return Err(Error::WeightUnderflow { t, agent, entry, value });
        }
        st.refresh_ratio();
    }
    Ok(())
}

/// One push-sum critic round with a single column-stochastic matrix mixing
/// every entry; each agent sends its `K` numerator entries plus one weight.
#[allow(clippy::too_many_arguments)]
pub fn critic_round_push_full(
    states: &mut [CriticState],
    mdp: &NetworkedMdp,
    features: &FeatureMap,
    tr: Transition<'_>,
    b: &WeightMatrix,
    beta: f64,
    t: u64,
) -> Result<RoundReport> {
    check_round_inputs(states, mdp, features)?;
    check_weights(std::slice::from_ref(b), states.len(), 1)?;
    let td_errors = local_half_step(states, mdp, features, tr, beta, true)?;
    push_mix(states, |_| b.matrix(), t)?;
    Ok(RoundReport {
        scalars_sent: Algorithm::PushFull.scalars_per_round(features.k()),
        td_errors,
        coordination_messages: 0,
    })
}

/// One entry-wise push-sum critic round: entry `k` is mixed with `B^k`.
/// Each agent sends the selected numerator entry and its weight.
pub fn critic_round_push_entrywise(
    states: &mut [CriticState],
    mdp: &NetworkedMdp,
    features: &FeatureMap,
    tr: Transition<'_>,
    weights: &[WeightMatrix],
    beta: f64,
    t: u64,
) -> Result<RoundReport> {
    check_round_inputs(states, mdp, features)?;
    check_weights(weights, states.len(), features.k())?;
    let td_errors = local_half_step(states, mdp, features, tr, beta, true)?;
    push_mix(states, |k| weights[k].matrix(), t)?;
    Ok(RoundReport {
        scalars_sent: Algorithm::PushEntrywise.scalars_per_round(features.k()),
        td_errors,
        coordination_messages: 0,
    })
}

/// One entry-wise consensus critic round: entry `k` of `ω̃` is mixed with
/// the row-stochastic `C^k`. There are no push-sum weights, so `z = ω`.
/// `coordination_messages` is passed through into the report.
#[allow(clippy::too_many_arguments)]
pub fn critic_round_consensus_entrywise(
    states: &mut [CriticState],
    mdp: &NetworkedMdp,
    features: &FeatureMap,
    tr: Transition<'_>,
    weights: &[WeightMatrix],
    beta: f64,
    coordination_messages: u64,
) -> Result<RoundReport> {
    check_round_inputs(states, mdp, features)?;
    check_weights(weights, states.len(), features.k())?;
    let td_errors = local_half_step(states, mdp, features, tr, beta, false)?;
    for (entry, c) in weights.iter().enumerate() {
        let omega: Vec<f64> = states.iter().map(|s| s.omega[entry]).collect();
        for (st, w) in states.iter_mut().zip(mix_entry(c.matrix(), &omega)) {
            st.omega[entry] = w;
        }
    }
    for st in states.iter_mut() {
        st.z.clone_from(&st.omega);
    }
    Ok(RoundReport {
        scalars_sent: Algorithm::ConsensusEntrywise.scalars_per_round(features.k()),
        td_errors,
        coordination_messages,
    })
}

/// `θ^i ← project(θ^i + β A^i ψ^i)` for every agent, with the sampled local
/// advantage evaluated at `z[i]`.
#[allow(clippy::too_many_arguments)]
pub fn actor_step(
    theta: &mut PolicyParams,
    mdp: &NetworkedMdp,
    features: &FeatureMap,
    policy: &SoftmaxPolicy,
    z: &[Vec<f64>],
    s: usize,
    a: usize,
    beta: f64,
) {
    if beta == 0.0 {
        return;
    }
    for i in 0..mdp.n_agents() {
        let adv = local_advantage_sample(mdp, features, policy.features(i), i, &z[i], theta.block(i), s, a);
        if adv == 0.0 {
            continue;
        }
        let psi = policy.score(theta, i, s, mdp.agent_action(a, i));
        let moved: Vec<f64> = theta.block(i).iter().zip(&psi).map(|(t, p)| t + beta * adv * p).collect();
        let projected = project(&moved, theta.theta_max());
        theta.set_block(i, &projected);
    }
}

/// One logged line of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub mu_mean: f64,
    /// `max_i ‖z^i - ⟨ω⟩‖_∞`.
    pub consensus_err: f64,
    /// `max_i ‖z^i - ω_θ‖_2`, when an oracle is attached.
    pub critic_err: Option<f64>,
    pub j_theta: Option<f64>,
    /// Cumulative scalars transmitted by each agent.
    pub scalars_per_agent: u64,
    pub y_min: f64,
    pub y_max: f64,
}

impl MetricsRow {
    fn record(&self) -> [String; 8] {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        [
            self.t.to_string(),
            fmt_f64(self.mu_mean),
            fmt_f64(self.consensus_err),
            opt(self.critic_err),
            opt(self.j_theta),
            self.scalars_per_agent.to_string(),
            fmt_f64(self.y_min),
            fmt_f64(self.y_max),
        ]
    }
}

/// CSV sink with the fixed metrics header.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(METRICS_HEADER).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.record()).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = MetricsWriter::new(Vec::new())?;
    for r in rows {
        w.write(r)?;
    }
    Ok(String::from_utf8(w.finish()?).expect("csv output is utf-8"))
}

#[derive(Debug, Clone)]
struct OracleCache {
    theta: PolicyParams,
    j: f64,
    omega: DVector<f64>,
}

/// One seeded training run. Environment and policy sampling draw from one
/// random stream, gossip selections from another, so changing the
/// communication scheme never perturbs the trajectory's randomness.
pub struct Simulation<'a> {
    mdp: &'a NetworkedMdp,
    graph: &'a DirectedGraph,
    features: &'a FeatureMap,
    policy: &'a SoftmaxPolicy,
    config: RunConfig,
    probs: Vec<Vec<f64>>,
    push_weights: Option<WeightMatrix>,
    theta: PolicyParams,
    critics: Vec<CriticState>,
    t: u64,
    state: usize,
    action: usize,
    env_rng: SimRng,
    gossip_rng: SimRng,
    scalars_per_agent: u64,
    coordination_messages: u64,
    y_min_seen: f64,
    y_max_seen: f64,
    oracle: Option<OracleCache>,
    oracle_enabled: bool,
}

impl<'a> Simulation<'a> {
    pub fn new(
        mdp: &'a NetworkedMdp,
        graph: &'a DirectedGraph,
        features: &'a FeatureMap,
        policy: &'a SoftmaxPolicy,
        theta0: PolicyParams,
        config: RunConfig,
    ) -> Result<Self> {
        let n = mdp.n_agents();
        if graph.n_agents() != n {
            return Err(Error::DimensionMismatch {
                what: "graph agents",
                expected: n,
                found: graph.n_agents(),
            });
        }
        if features.n_rows() != mdp.n_state_actions() {
            return Err(Error::DimensionMismatch {
                what: "feature rows",
                expected: mdp.n_state_actions(),
                found: features.n_rows(),
            });
        }
        policy.check(mdp, &theta0)?;
        let probs = config.validate(n, features.k())?;
        if !is_strongly_connected(graph) {
            return Err(Error::NotStronglyConnected);
        }
        let push_weights = match config.algorithm {
            Algorithm::ConsensusEntrywise => {
                if let Some((from, to)) = graph.edges().find(|&(f, t)| !graph.has_edge(t, f)) {
                    return Err(Error::AsymmetricEdges { from, to });
                }
                None
            }
            Algorithm::PushFull => Some(build_push_sum_weights(graph)?),
            Algorithm::PushEntrywise => None,
        };
        if !validate_ergodicity(mdp, &policy.joint_table(mdp, &theta0)) {
            return Err(Error::InvalidMdp("chain under the initial policy is not ergodic".into()));
        }
        let mut env_rng = SimRng::seed_from_u64(config.seed);
        env_rng.set_stream(0);
        let mut gossip_rng = SimRng::seed_from_u64(config.seed);
        gossip_rng.set_stream(1);
        let state = sample_index(&vec![1.0 / mdp.n_states() as f64; mdp.n_states()], &mut env_rng);
        let action = policy.sample_joint(mdp, &theta0, state, &mut env_rng);
        let k = features.k();
        Ok(Self {
            mdp,
            graph,
            features,
            policy,
            probs,
            push_weights,
            theta: theta0,
            critics: vec![CriticState::new(k); n],
            t: 0,
            state,
            action,
            env_rng,
            gossip_rng,
            scalars_per_agent: 0,
            coordination_messages: 0,
            y_min_seen: 1.0,
            y_max_seen: 1.0,
            oracle: None,
            oracle_enabled: false,
            config,
        })
    }

    /// Replaces the initial numerators (weights reset to one). Only valid
    /// before the first iteration.
    pub fn with_initial_omega(mut self, omegas: Vec<Vec<f64>>) -> Result<Self> {
        if self.t != 0 {
            return Err(Error::InvalidConfig("initial values can only be set before the first iteration".into()));
        }
        if omegas.len() != self.critics.len() {
            return Err(Error::DimensionMismatch {
                what: "initial numerators",
                expected: self.critics.len(),
                found: omegas.len(),
            });
        }
        let k = self.features.k();
        if let Some(w) = omegas.iter().find(|w| w.len() != k) {
            return Err(Error::DimensionMismatch {
                what: "initial numerator entries",
                expected: k,
                found: w.len(),
            });
        }
        self.critics = omegas.into_iter().map(CriticState::from_omega).collect();
        Ok(self)
    }

    /// Adds oracle columns (`critic_err`, `J_theta`) to the metrics.
    pub fn with_oracle(mut self) -> Self {
        self.oracle_enabled = true;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.horizon
    }

    pub fn theta(&self) -> &PolicyParams {
        &self.theta
    }

    /// State and joint action the next iteration will start from.
    pub fn pending(&self) -> (usize, usize) {
        (self.state, self.action)
    }

    pub fn critics(&self) -> &[CriticState] {
        &self.critics
    }

    pub fn scalars_per_agent(&self) -> u64 {
        self.scalars_per_agent
    }

    pub fn coordination_messages(&self) -> u64 {
        self.coordination_messages
    }

    /// Smallest push-sum weight seen so far (the run's observed `α`).
    pub fn observed_alpha(&self) -> f64 {
        self.y_min_seen
    }

    pub fn observed_y_max(&self) -> f64 {
        self.y_max_seen
    }

    pub fn omega_average(&self) -> Vec<f64> {
        let stacked: Vec<Vec<f64>> = self.critics.iter().map(|c| c.omega.clone()).collect();
        network_average(&stacked)
    }

    pub fn mu_mean(&self) -> f64 {
        self.critics.iter().map(|c| c.mu).sum::<f64>() / self.critics.len() as f64
    }

    /// `max_i ‖z^i - ⟨ω⟩‖_∞`.
    pub fn consensus_error(&self) -> f64 {
        let avg = self.omega_average();
        self.critics
            .iter()
            .flat_map(|c| c.z.iter().zip(&avg).map(|(z, a)| (z - a).abs()))
            .fold(0.0, f64::max)
    }

    /// Executes one iteration: environment step, next-action draw, critic
    /// round, actor step.
    pub fn step(&mut self) -> Result<RoundReport> {
        let t = self.t;
        let (mdp, features, policy) = (self.mdp, self.features, self.policy);
        let beta_omega = if self.config.freeze_critic_learning {
            0.0
        } else {
            self.config.schedule.beta_omega(t)
        };
        let sample = step(mdp, self.state, self.action, &mut self.env_rng)?;
        let next_action = policy.sample_joint(mdp, &self.theta, sample.next_state, &mut self.env_rng);
        let tr = Transition {
            sample: &sample,
            next_action,
        };
        let z_snapshot: Option<Vec<Vec<f64>>> =
            (!self.config.freeze_actor).then(|| self.critics.iter().map(|c| c.z.clone()).collect());

        let k = features.k();
        let report = match self.config.algorithm {
            Algorithm::PushFull => {
                let b = self.push_weights.as_ref().expect("push-full weights are built at construction");
                critic_round_push_full(&mut self.critics, mdp, features, tr, b, beta_omega, t)?
            }
            Algorithm::PushEntrywise => {
                let selections: Vec<usize> = self.probs.iter().map(|p| sample_index(p, &mut self.gossip_rng)).collect();
                let weights = build_entrywise_push_weights(self.graph, &selections, k)?;
                critic_round_push_entrywise(&mut self.critics, mdp, features, tr, &weights, beta_omega, t)?
            }
            Algorithm::ConsensusEntrywise => {
                let proposals: Vec<usize> = self.probs.iter().map(|p| sample_index(p, &mut self.gossip_rng)).collect();
                let weights = coordinated_consensus_weights(self.graph, &proposals, k);
                let coordination = self.graph.n_edges() as u64;
                critic_round_consensus_entrywise(&mut self.critics, mdp, features, tr, &weights, beta_omega, coordination)?
            }
        };

        if let Some(z) = z_snapshot {
            let beta_theta = self.config.schedule.beta_theta(t);
            actor_step(&mut self.theta, mdp, features, policy, &z, sample.state, sample.joint_action, beta_theta);
        }

        self.state = sample.next_state;
        self.action = next_action;
        self.t += 1;
        self.scalars_per_agent += report.scalars_sent;
        self.coordination_messages += report.coordination_messages;
        for c in &self.critics {
            if !c.mu.is_finite() || c.omega.iter().chain(&c.z).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t });
            }
            for &y in &c.y {
                self.y_min_seen = self.y_min_seen.min(y);
                self.y_max_seen = self.y_max_seen.max(y);
            }
        }
        if self.theta.blocks().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        Ok(report)
    }

    fn oracle_values(&mut self) -> Result<Option<(f64, DVector<f64>)>> {
        if !self.oracle_enabled {
            return Ok(None);
        }
        let stale = self.oracle.as_ref().is_none_or(|c| c.theta != self.theta);
        if stale {
            let eval = PolicyEvaluation::compute(self.mdp, self.policy, &self.theta)?;
            let omega = eval.td_fixed_point(self.mdp, self.features)?;
            self.oracle = Some(OracleCache {
                theta: self.theta.clone(),
                j: eval.j,
                omega,
            });
        }
        let c = self.oracle.as_ref().expect("cache filled above");
        Ok(Some((c.j, c.omega.clone())))
    }

    /// Snapshot of the current metrics.
    pub fn metrics_row(&mut self) -> Result<MetricsRow> {
        let oracle = self.oracle_values()?;
        let critic_err = oracle.as_ref().map(|(_, omega)| {
            self.critics
                .iter()
                .map(|c| c.z.iter().zip(omega.iter()).map(|(z, w)| (z - w).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        });
        let ys = self.critics.iter().flat_map(|c| c.y.iter().copied());
        let (y_min, y_max) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        Ok(MetricsRow {
            t: self.t,
            mu_mean: self.mu_mean(),
            consensus_err: self.consensus_error(),
            critic_err,
            j_theta: oracle.map(|(j, _)| j),
            scalars_per_agent: self.scalars_per_agent,
            y_min,
            y_max,
        })
    }

    /// Runs to the horizon, handing a metrics row to `sink` every
    /// `log_every` completed iterations and after the last one.
    pub fn run_with(&mut self, mut sink: impl FnMut(&MetricsRow) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            self.step()?;
            if self.t % self.config.log_every == 0 || self.is_done() {
                let row = self.metrics_row()?;
                sink(&row)?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        self.run_with(|r| {
            rows.push(r.clone());
            Ok(())
        })?;
        Ok(rows)
    }

    /// Plain-text dump of the learner state and policy parameters.
    pub fn final_state_text(&self) -> String {
        let mut out = String::from("netac-final 1\n");
        let _ = writeln!(out, "t {}", self.t);
        let _ = writeln!(out, "algorithm {}", self.config.algorithm);
        let _ = writeln!(out, "scalars_per_agent {}", self.scalars_per_agent);
        let _ = writeln!(out, "coordination_messages {}", self.coordination_messages);
        let _ = writeln!(out, "observed_alpha {}", fmt_f64(self.y_min_seen));
        let _ = writeln!(out, "observed_y_max {}", fmt_f64(self.y_max_seen));
        for (i, c) in self.critics.iter().enumerate() {
            let _ = writeln!(out, "agent {i}");
            let _ = writeln!(out, "mu {}", fmt_f64(c.mu));
            let _ = writeln!(out, "omega {}", join_f64(&c.omega));
            let _ = writeln!(out, "y {}", join_f64(&c.y));
            let _ = writeln!(out, "z {}", join_f64(&c.z));
        }
        out.push_str(&self.theta.to_text());
        out
    }
}
