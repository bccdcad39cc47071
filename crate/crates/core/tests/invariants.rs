//! Long-run properties of the training loop and the exact oracle.

mod common;

use common::{report, training_instance};
use netac::algo::{Algorithm, RunConfig, Simulation};
use netac::env::{generate_features, generate_garnet, step};
use netac::graph::DirectedGraph;
use netac::oracle::PolicyEvaluation;
use netac::policy::{PolicyParams, SoftmaxPolicy};
use netac::SimRng;
use rand::SeedableRng;

/// Disagreement `max_i ‖z^i_t - ⟨ω_t⟩‖` at `T = 2·10⁵` must fall below 10% of
/// its value at `T/10`, with errors averaged over five seeds.
#[test]
fn disagreement_decays_with_the_critic_stepsize() {
    let horizon = 200_000u64;
    let mut pass = true;
    let mut lines = Vec::new();
    for algorithm in [Algorithm::PushEntrywise, Algorithm::PushFull] {
        let seeds: Vec<u64> = (0..5).collect();
        let errs = netac::par::map(&seeds, |&seed| {
            let inst = training_instance(seed);
            let mut cfg = RunConfig::new(algorithm, horizon, seed);
            cfg.freeze_actor = true;
            let mut sim =
                Simulation::new(&inst.mdp, &inst.graph, &inst.features, &inst.policy, inst.theta.clone(), cfg).unwrap();
            let mut early = f64::NAN;
            while !sim.is_done() {
                sim.step().unwrap();
                if sim.t() == horizon / 10 {
                    early = sim.consensus_error();
                }
            }
            (early, sim.consensus_error())
        });
        let early = errs.iter().map(|e| e.0).sum::<f64>() / 5.0;
        let late = errs.iter().map(|e| e.1).sum::<f64>() / 5.0;
        let ratio = late / early;
        pass &= ratio < 0.1;
        lines.push(format!("{algorithm}: mean error {early:.3e} -> {late:.3e}, ratio {ratio:.3}"));
    }
    report("disagreement decay", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn push_full_mass_and_weight_bounds() {
    let mdp = generate_garnet(4, &[2; 5], 2, 1.0, 3).unwrap();
    let features = generate_features(&mdp, 6, 3).unwrap();
    let policy = SoftmaxPolicy::one_hot(&mdp);
    let theta = PolicyParams::random(&policy.param_dims(), 1.0, 10.0, &mut SimRng::seed_from_u64(3));
    let graph = DirectedGraph::random_strongly_connected(5, 0.3, &mut SimRng::seed_from_u64(4)).unwrap();
    let cfg = RunConfig::new(Algorithm::PushFull, 100_000, 3);
    let mut sim = Simulation::new(&mdp, &graph, &features, &policy, theta, cfg).unwrap();
    let mut worst: f64 = 0.0;
    while !sim.is_done() {
        sim.step().unwrap();
        for k in 0..features.k() {
            let mass: f64 = sim.critics().iter().map(|c| c.y[k]).sum();
            worst = worst.max((mass - 5.0).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
    assert!(sim.observed_alpha() > 0.0);
    assert!(sim.observed_y_max() <= 5.0 + 1e-9);
}

#[test]
fn reward_trackers_stay_in_reward_range() {
    let inst = training_instance(12);
    let cfg = RunConfig::new(Algorithm::PushEntrywise, 20_000, 12);
    let mut sim = Simulation::new(&inst.mdp, &inst.graph, &inst.features, &inst.policy, inst.theta.clone(), cfg).unwrap();
    let bounds: Vec<(f64, f64)> = (0..inst.mdp.n_agents())
        .map(|i| {
            let table = inst.mdp.reward_table(i);
            let lo = table.iter().copied().fold(0.0, f64::min);
            let hi = table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    while !sim.is_done() {
        sim.step().unwrap();
        for (c, (lo, hi)) in sim.critics().iter().zip(&bounds) {
            assert!(c.mu >= *lo && c.mu <= *hi);
        }
    }
}

#[test]
fn td_error_is_centred_at_the_fixed_point() {
    // E over stationary (s, a, s', a') of δ̃ φ(s, a) with μ = J, z = ω_θ and
    // the team-average reward, by exhaustive enumeration.
    for seed in 0..3 {
        let inst = training_instance(seed + 30);
        let (mdp, pol, theta) = (&inst.mdp, &inst.policy, &inst.theta);
        let eval = PolicyEvaluation::compute(mdp, pol, theta).unwrap();
        let omega = eval.td_fixed_point(mdp, &inst.features).unwrap();
        let q = |s: usize, a: usize| {
            inst.features.row(mdp.sa_index(s, a)).iter().zip(omega.iter()).map(|(p, w)| p * w).sum::<f64>()
        };
        let mut acc = vec![0.0; inst.features.k()];
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_joint_actions() {
                let w = eval.d_theta[s] * eval.pi[(s, a)];
                for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                    for a2 in 0..mdp.n_joint_actions() {
                        let pr = w * p * eval.pi[(s2, a2)];
                        let delta = mdp.mean_reward(s, a) - eval.j + q(s2, a2) - q(s, a);
                        for (x, f) in acc.iter_mut().zip(inst.features.row(mdp.sa_index(s, a))) {
                            *x += pr * delta * f;
                        }
                    }
                }
            }
        }
        assert!(acc.iter().all(|v| v.abs() < 1e-8), "{acc:?}");
    }
}

#[test]
fn averaged_return_matches_simulation() {
    let inst = training_instance(21);
    let (mdp, pol, theta) = (&inst.mdp, &inst.policy, &inst.theta);
    let j = PolicyEvaluation::compute(mdp, pol, theta).unwrap().j;
    let mut rng = SimRng::seed_from_u64(21);
    let mut s = 0;
    let mut total = 0.0;
    let steps = 1_000_000;
    for _ in 0..steps {
        let a = pol.sample_joint(mdp, theta, s, &mut rng);
        let tr = step(mdp, s, a, &mut rng).unwrap();
        total += tr.rewards.iter().sum::<f64>() / tr.rewards.len() as f64;
        s = tr.next_state;
    }
    let empirical = total / steps as f64;
    assert!((empirical - j).abs() < 1e-3, "empirical {empirical} vs exact {j}");
}
