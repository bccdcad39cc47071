#![allow(dead_code)]

use std::io::Write;

use netac::env::{generate_features, generate_garnet, FeatureMap, NetworkedMdp};
use netac::graph::DirectedGraph;
use netac::policy::{PolicyParams, SoftmaxPolicy, DEFAULT_THETA_MAX};
use netac::SimRng;
use rand::{Rng, SeedableRng};

/// Writes straight to the process stderr so the line survives test output
/// capture.
pub fn report(label: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("[acceptance] {label}: {verdict} — {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Three agents with two actions each, five states, four critic features,
/// a random softmax policy and a directed 3-cycle.
pub struct TrainingInstance {
    pub mdp: NetworkedMdp,
    pub features: FeatureMap,
    pub policy: SoftmaxPolicy,
    pub theta: PolicyParams,
    pub graph: DirectedGraph,
}

pub fn training_instance(seed: u64) -> TrainingInstance {
    let mdp = generate_garnet(5, &[2, 2, 2], 2, 1.0, seed).unwrap();
    let features = generate_features(&mdp, 4, seed.wrapping_add(1000)).unwrap();
    let policy = SoftmaxPolicy::one_hot(&mdp);
    let theta = PolicyParams::random(
        &policy.param_dims(),
        1.0,
        DEFAULT_THETA_MAX,
        &mut SimRng::seed_from_u64(seed.wrapping_add(2000)),
    );
    TrainingInstance {
        mdp,
        features,
        policy,
        theta,
        graph: DirectedGraph::cycle(3).unwrap(),
    }
}

/// Instance for pure averaging: `n` agents with a single action each, so the
/// environment plays no role beyond providing feature rows.
pub fn averaging_instance(n: usize, k: usize, seed: u64) -> (NetworkedMdp, FeatureMap, SoftmaxPolicy, PolicyParams) {
    let mdp = generate_garnet(k + 2, &vec![1; n], 2, 1.0, seed).unwrap();
    let features = generate_features(&mdp, k, seed).unwrap();
    let policy = SoftmaxPolicy::one_hot(&mdp);
    let theta = PolicyParams::zeros(&policy.param_dims(), DEFAULT_THETA_MAX);
    (mdp, features, policy, theta)
}

pub fn random_values(n: usize, k: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}
