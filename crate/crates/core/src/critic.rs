//! Linear action-value critic: `Q(s, a; z) = zᵀφ(s, a)`.

use crate::env::{FeatureMap, NetworkedMdp};
use crate::error::{Error, Result};
use crate::policy::{action_probs, PolicyFeatures};

/// Smallest push-sum weight tolerated before a run aborts.
pub const Y_UNDERFLOW: f64 = 1e-14;

/// One agent's learner variables.
///
/// `omega` is the push-sum numerator, `y` the per-entry push-sum weights and
/// `z = omega / y` the estimate actually used for Q. `mu` tracks the agent's
/// long-run reward.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub omega: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub mu: f64,
}

impl CriticState {
    pub fn new(k: usize) -> Self {
        Self {
            omega: vec![0.0; k],
            y: vec![1.0; k],
            z: vec![0.0; k],
            mu: 0.0,
        }
    }

    /// Fresh weights (`y = 1`) around a given numerator.
    pub fn from_omega(omega: Vec<f64>) -> Self {
        let k = omega.len();
        Self {
            z: omega.clone(),
            omega,
            y: vec![1.0; k],
            mu: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.omega.len()
    }

    /// Recomputes `z = omega / y` entry-wise.
    pub fn refresh_ratio(&mut self) {
        for ((z, w), y) in self.z.iter_mut().zip(&self.omega).zip(&self.y) {
            *z = w / y;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn q_value(z: &[f64], phi_sa: &[f64]) -> Result<f64> {
    if z.len() != phi_sa.len() {
        return Err(Error::DimensionMismatch {
            what: "critic parameter",
            expected: phi_sa.len(),
            found: z.len(),
        });
    }
    Ok(dot(z, phi_sa))
}

/// `r - mu + q_next - q_cur`.
pub fn td_error(r: f64, mu: f64, q_next: f64, q_cur: f64) -> f64 {
    r - mu + q_next - q_cur
}

/// `(1 - beta) mu + beta r`, for `beta ∈ (0, 1]`.
pub fn mu_update(mu: f64, r: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidStepSize(beta));
    }
    if beta == 1.0 || mu == r {
        return Ok(r);
    }
    Ok((1.0 - beta) * mu + beta * r)
}

/// Sampled local advantage of agent `agent`:
/// `Q(s, a; z) - Σ_b π^i(b|s) Q(s, (b, a^{-i}); z)`.
#[allow(clippy::too_many_arguments)]
pub fn local_advantage_sample(
    mdp: &NetworkedMdp,
    features: &FeatureMap,
    policy_features: &PolicyFeatures,
    agent: usize,
    z_i: &[f64],
    theta_i: &[f64],
    s: usize,
    a: usize,
) -> f64 {
    let q = |joint: usize| dot(z_i, features.row(mdp.sa_index(s, joint)));
    let probs = action_probs(theta_i, policy_features, s);
    let baseline: f64 = probs
        .iter()
        .enumerate()
        .map(|(b, p)| p * q(mdp.with_agent_action(a, agent, b)))
        .sum();
    q(a) - baseline
}
