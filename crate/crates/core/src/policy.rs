//! Per-agent softmax policies over local policy features, with a box
//! projection for the parameters.

use nalgebra::DMatrix;
use rand::Rng;

use crate::env::NetworkedMdp;
use crate::error::{Error, Result};
use crate::textio::{join_f64, Tokens};
use crate::SimRng;

/// Default half-width of the parameter box.
pub const DEFAULT_THETA_MAX: f64 = 10.0;

/// Policy feature table `x(s, b) ∈ R^m` for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFeatures {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PolicyFeatures {
    pub fn new(n_states: usize, n_actions: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_states * n_actions * dim {
            return Err(Error::DimensionMismatch {
                what: "policy feature table",
                expected: n_states * n_actions * dim,
                found: data.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            dim,
            data,
        })
    }

    /// One-hot over `(s, b)`: the softmax becomes exactly tabular.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let dim = n_states * n_actions;
        let mut data = vec![0.0; dim * dim];
        for row in 0..dim {
            data[row * dim + row] = 1.0;
        }
        Self {
            n_states,
            n_actions,
            dim,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn x(&self, s: usize, b: usize) -> &[f64] {
        let start = (s * self.n_actions + b) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `π(b | s) ∝ exp(θᵀ x(s, b))`.
pub fn action_probs(theta_i: &[f64], feats: &PolicyFeatures, s: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..feats.n_actions).map(|b| dot(theta_i, feats.x(s, b))).collect();
    softmax(&logits)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `∇_θ log π(a_i | s) = x(s, a_i) - Σ_b π(b|s) x(s, b)`.
pub fn score(theta_i: &[f64], feats: &PolicyFeatures, s: usize, a_i: usize) -> Vec<f64> {
    let probs = action_probs(theta_i, feats, s);
    let mut psi = feats.x(s, a_i).to_vec();
    for (b, p) in probs.iter().enumerate() {
        for (v, xb) in psi.iter_mut().zip(feats.x(s, b)) {
            *v -= p * xb;
        }
    }
    psi
}

/// Coordinate-wise clamp onto `[-theta_max, theta_max]^m`.
pub fn project(theta_i: &[f64], theta_max: f64) -> Vec<f64> {
    theta_i.iter().map(|v| v.clamp(-theta_max, theta_max)).collect()
}

/// Concatenated per-agent parameter blocks inside a common box.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    blocks: Vec<Vec<f64>>,
    theta_max: f64,
}

impl PolicyParams {
    pub fn new(blocks: Vec<Vec<f64>>, theta_max: f64) -> Result<Self> {
        if !(theta_max > 0.0) {
            return Err(Error::InvalidConfig(format!("theta_max {theta_max} must be positive")));
        }
        if let Some(v) = blocks.iter().flatten().find(|v| !(v.abs() <= theta_max)) {
            return Err(Error::InvalidConfig(format!("parameter {v} outside the box [-{theta_max}, {theta_max}]")));
        }
        Ok(Self { blocks, theta_max })
    }

    pub fn zeros(dims: &[usize], theta_max: f64) -> Self {
        Self {
            blocks: dims.iter().map(|&m| vec![0.0; m]).collect(),
            theta_max,
        }
    }

    /// Uniform on `[-scale, scale]` per coordinate, clamped to the box.
    pub fn random(dims: &[usize], scale: f64, theta_max: f64, rng: &mut SimRng) -> Self {
        let blocks = dims
            .iter()
            .map(|&m| {
                let raw: Vec<f64> = (0..m).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
                project(&raw, theta_max)
            })
            .collect();
        Self { blocks, theta_max }
    }

    pub fn n_agents(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    /// Replaces block `i` with the projection of `value`.
    pub fn set_block(&mut self, i: usize, value: &[f64]) {
        self.blocks[i] = project(value, self.theta_max);
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "netac-theta 1\nagents {} theta_max {}\n",
            self.blocks.len(),
            crate::textio::fmt_f64(self.theta_max)
        );
        for (i, b) in self.blocks.iter().enumerate() {
            out += &format!("agent {i} {}\n{}\n", b.len(), join_f64(b));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = Tokens::new(text);
        t.expect("netac-theta")?;
        t.expect("1")?;
        t.expect("agents")?;
        let n = t.usize()?;
        t.expect("theta_max")?;
        let theta_max = t.f64()?;
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            t.expect("agent")?;
            t.expect(&i.to_string())?;
            let m = t.usize()?;
            blocks.push(t.f64s(m)?);
        }
        t.finish()?;
        Self::new(blocks, theta_max)
    }
}

/// The joint policy `π_θ(s, a) = Π_i π^i(a_i | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    features: Vec<PolicyFeatures>,
}

impl SoftmaxPolicy {
    pub fn new(features: Vec<PolicyFeatures>) -> Self {
        Self { features }
    }

    /// One-hot features for every agent of `mdp`.
    pub fn one_hot(mdp: &NetworkedMdp) -> Self {
        Self::new(
            mdp.action_sizes()
                .iter()
                .map(|&n| PolicyFeatures::one_hot(mdp.n_states(), n))
                .collect(),
        )
    }

    pub fn features(&self, i: usize) -> &PolicyFeatures {
        &self.features[i]
    }

    pub fn n_agents(&self) -> usize {
        self.features.len()
    }

    pub fn param_dims(&self) -> Vec<usize> {
        self.features.iter().map(PolicyFeatures::dim).collect()
    }

    /// Checks that the feature tables and parameter blocks line up with `mdp`.
    pub fn check(&self, mdp: &NetworkedMdp, theta: &PolicyParams) -> Result<()> {
        if self.features.len() != mdp.n_agents() || theta.n_agents() != mdp.n_agents() {
            return Err(Error::DimensionMismatch {
                what: "policy agents",
                expected: mdp.n_agents(),
                found: theta.n_agents(),
            });
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.n_states != mdp.n_states() || f.n_actions != mdp.action_sizes()[i] {
                return Err(Error::InvalidConfig(format!("policy features of agent {i} do not match the MDP")));
            }
            if theta.block(i).len() != f.dim {
                return Err(Error::DimensionMismatch {
                    what: "policy parameter block",
                    expected: f.dim,
                    found: theta.block(i).len(),
                });
            }
        }
        Ok(())
    }

    pub fn action_probs(&self, theta: &PolicyParams, i: usize, s: usize) -> Vec<f64> {
        action_probs(theta.block(i), &self.features[i], s)
    }

    pub fn joint_prob(&self, mdp: &NetworkedMdp, theta: &PolicyParams, s: usize, a: usize) -> f64 {
        (0..self.n_agents())
            .map(|i| self.action_probs(theta, i, s)[mdp.agent_action(a, i)])
            .product()
    }

    /// Joint policy as an `n_states x n_joint_actions` table.
    pub fn joint_table(&self, mdp: &NetworkedMdp, theta: &PolicyParams) -> DMatrix<f64> {
        let mut table = DMatrix::zeros(mdp.n_states(), mdp.n_joint_actions());
        for s in 0..mdp.n_states() {
            let per_agent: Vec<Vec<f64>> = (0..self.n_agents()).map(|i| self.action_probs(theta, i, s)).collect();
            for a in 0..mdp.n_joint_actions() {
                table[(s, a)] = per_agent
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p[mdp.agent_action(a, i)])
                    .product();
            }
        }
        table
    }

    pub fn score(&self, theta: &PolicyParams, i: usize, s: usize, a_i: usize) -> Vec<f64> {
        score(theta.block(i), &self.features[i], s, a_i)
    }

    /// Each agent draws its own action by inverse CDF; returns the joint index.
    pub fn sample_joint(&self, mdp: &NetworkedMdp, theta: &PolicyParams, s: usize, rng: &mut SimRng) -> usize {
        let actions: Vec<usize> = (0..self.n_agents())
            .map(|i| crate::graph::sample_index(&self.action_probs(theta, i, s), rng))
            .collect();
        mdp.encode_joint(&actions).expect("sampled actions are in range")
    }
}
