//! Exact policy evaluation on small instances: stationary distribution,
//! averaged return, relative action values, local advantages, policy
//! gradients and the critic's TD fixed point.
//!
//! Everything is dense linear algebra over the enumerated state and
//! state-action spaces, so instances are capped at
//! [`MAX_STATE_ACTIONS`] state-action pairs.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::env::{chain_is_irreducible, induced_chain, FeatureMap, NetworkedMdp};
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, SoftmaxPolicy};
use crate::textio::{fmt_f64, join_f64};

pub const MAX_STATE_ACTIONS: usize = 10_000;

/// Residual bound enforced on the TD fixed-point system, relative to the
/// right-hand side.
pub const TD_RESIDUAL_TOL: f64 = 1e-10;

/// Unique stationary distribution of an irreducible chain, from the linear
/// system `dᵀ(P - I) = 0` with one equation replaced by `Σ d = 1`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "transition matrix columns",
            expected: n,
            found: p.ncols(),
        });
    }
    if !chain_is_irreducible(p) {
        return Err(Error::Reducible);
    }
    let mut a = p.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mut d = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("stationary distribution system".into()))?;
    // Clip round-off negatives; the exact solution is strictly positive.
    d.iter_mut().for_each(|v| *v = v.max(0.0));
    let total = d.sum();
    Ok(d / total)
}

/// Exact quantities of a fixed joint policy.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    /// Joint policy table, `n_states x n_joint_actions`.
    pub pi: DMatrix<f64>,
    /// State chain `P^θ`.
    pub p_theta: DMatrix<f64>,
    pub d_theta: DVector<f64>,
    /// Stationary state-action weights `d_θ(s) π_θ(s, a)` (diagonal of D).
    pub d_sa: DVector<f64>,
    /// Team-average reward `R̄` per state-action row.
    pub r_bar: DVector<f64>,
    pub j: f64,
    /// Relative action values, normalised so that `Σ D Q = 0`.
    pub q: DVector<f64>,
    /// Relative state values `V(s) = Σ_a π(s, a) Q(s, a)`.
    pub v: DVector<f64>,
}

impl PolicyEvaluation {
    pub fn compute(mdp: &NetworkedMdp, policy: &SoftmaxPolicy, theta: &PolicyParams) -> Result<Self> {
        policy.check(mdp, theta)?;
        if mdp.n_state_actions() > MAX_STATE_ACTIONS {
            return Err(Error::InfeasibleSizes(format!(
                "{} state-action pairs exceed the oracle cap {MAX_STATE_ACTIONS}",
                mdp.n_state_actions()
            )));
        }
        let pi = policy.joint_table(mdp, theta);
        Self::from_table(mdp, pi)
    }

    /// Evaluation of an arbitrary joint-policy table.
    pub fn from_table(mdp: &NetworkedMdp, pi: DMatrix<f64>) -> Result<Self> {
        let (ns, na) = (mdp.n_states(), mdp.n_joint_actions());
        let p_theta = induced_chain(mdp, &pi)?;
        let d_theta = stationary_distribution(&p_theta)?;
        let d_sa = DVector::from_fn(ns * na, |row, _| d_theta[row / na] * pi[(row / na, row % na)]);
        let r_bar = DVector::from_fn(ns * na, |row, _| mdp.mean_reward(row / na, row % na));
        let j = d_sa.dot(&r_bar);

        // State Poisson equation (I - P^θ + 1dᵀ) V = r_π - J 1; its solution
        // satisfies dᵀV = 0, which makes Σ D Q = 0 below.
        let r_state = DVector::from_fn(ns, |s, _| (0..na).map(|a| pi[(s, a)] * r_bar[s * na + a]).sum::<f64>());
        let mut lhs = DMatrix::identity(ns, ns) - &p_theta;
        for r in 0..ns {
            for c in 0..ns {
                lhs[(r, c)] += d_theta[c];
            }
        }
        let v = lhs
            .lu()
            .solve(&(r_state - DVector::from_element(ns, j)))
            .ok_or_else(|| Error::Singular("state Poisson equation".into()))?;
        let q = DVector::from_fn(ns * na, |row, _| {
            let (s, a) = (row / na, row % na);
            let next: f64 = mdp.transition_row(s, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum();
            r_bar[row] - j + next
        });
        Ok(Self {
            pi,
            p_theta,
            d_theta,
            d_sa,
            r_bar,
            j,
            q,
            v,
        })
    }

    pub fn q(&self, mdp: &NetworkedMdp, s: usize, a: usize) -> f64 {
        self.q[mdp.sa_index(s, a)]
    }

    /// `Q(s, a) - Σ_b π^i(b|s) Q(s, (b, a^{-i}))`.
    pub fn local_advantage(
        &self,
        mdp: &NetworkedMdp,
        policy: &SoftmaxPolicy,
        theta: &PolicyParams,
        agent: usize,
        s: usize,
        a: usize,
    ) -> f64 {
        let probs = policy.action_probs(theta, agent, s);
        let baseline: f64 = probs
            .iter()
            .enumerate()
            .map(|(b, p)| p * self.q(mdp, s, mdp.with_agent_action(a, agent, b)))
            .sum();
        self.q(mdp, s, a) - baseline
    }

    /// `Q(s, a) - V(s)`.
    pub fn advantage(&self, mdp: &NetworkedMdp, s: usize, a: usize) -> f64 {
        self.q(mdp, s, a) - self.v[s]
    }

    /// `∇_{θ^i} J = Σ_{s,a} d(s) π(s,a) ψ^i(s, a_i) A^i(s, a)`.
    pub fn policy_gradient(
        &self,
        mdp: &NetworkedMdp,
        policy: &SoftmaxPolicy,
        theta: &PolicyParams,
        agent: usize,
    ) -> Vec<f64> {
        self.weighted_score(mdp, policy, theta, agent, |s, a| {
            self.local_advantage(mdp, policy, theta, agent, s, a)
        })
    }

    /// The same gradient with the global advantage `A(s, a)` as weight.
    pub fn policy_gradient_global(
        &self,
        mdp: &NetworkedMdp,
        policy: &SoftmaxPolicy,
        theta: &PolicyParams,
        agent: usize,
    ) -> Vec<f64> {
        self.weighted_score(mdp, policy, theta, agent, |s, a| self.advantage(mdp, s, a))
    }

    fn weighted_score(
        &self,
        mdp: &NetworkedMdp,
        policy: &SoftmaxPolicy,
        theta: &PolicyParams,
        agent: usize,
        weight: impl Fn(usize, usize) -> f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; theta.block(agent).len()];
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_joint_actions() {
                let w = self.d_sa[mdp.sa_index(s, a)];
                if w == 0.0 {
                    continue;
                }
                let scale = w * weight(s, a);
                let psi = policy.score(theta, agent, s, mdp.agent_action(a, agent));
                for (g, p) in grad.iter_mut().zip(psi) {
                    *g += scale * p;
                }
            }
        }
        grad
    }

    /// `P^θ_{sa} Φ`: expected next feature vector for every state-action row.
    fn next_features(&self, mdp: &NetworkedMdp, features: &FeatureMap) -> DMatrix<f64> {
        let (ns, na, k) = (mdp.n_states(), mdp.n_joint_actions(), features.k());
        let mut phi_bar = DMatrix::<f64>::zeros(ns, k);
        for s in 0..ns {
            for a in 0..na {
                let w = self.pi[(s, a)];
                for (c, v) in features.row(s * na + a).iter().enumerate() {
                    phi_bar[(s, c)] += w * v;
                }
            }
        }
        let mut out = DMatrix::<f64>::zeros(ns * na, k);
        for s in 0..ns {
            for a in 0..na {
                for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                    if *p != 0.0 {
                        for c in 0..k {
                            out[(s * na + a, c)] += p * phi_bar[(s2, c)];
                        }
                    }
                }
            }
        }
        out
    }

    /// Solves `ΦᵀD(I - P^θ_{sa})Φ ω = ΦᵀD(R̄ - J 1)`.
    pub fn td_fixed_point(&self, mdp: &NetworkedMdp, features: &FeatureMap) -> Result<DVector<f64>> {
        let phi = features.matrix();
        if phi.nrows() != mdp.n_state_actions() {
            return Err(Error::DimensionMismatch {
                what: "feature rows",
                expected: mdp.n_state_actions(),
                found: phi.nrows(),
            });
        }
        let next = self.next_features(mdp, features);
        let d_phi_t = weighted_transpose(phi, &self.d_sa);
        let a = &d_phi_t * (phi - next);
        let b = &d_phi_t * (&self.r_bar - DVector::from_element(self.r_bar.len(), self.j));
        let omega = a.clone().lu().solve(&b).ok_or_else(|| {
            Error::InvalidFeatures("TD fixed-point system is singular (rank or all-ones condition fails)".into())
        })?;
        let residual = (&a * &omega - &b).norm();
        if !(residual <= TD_RESIDUAL_TOL * b.norm().max(1.0)) {
            return Err(Error::InvalidFeatures(format!(
                "TD fixed-point system is ill-conditioned (residual {residual:e})"
            )));
        }
        Ok(omega)
    }

    /// Residuals of the averaged critic's equilibrium conditions at
    /// `(mu, omega)`: `|mu - J|` and
    /// `‖ΦᵀD[R̄ - mu 1 + P^θ_{sa}Φω - Φω]‖`.
    pub fn equilibrium_residual(
        &self,
        mdp: &NetworkedMdp,
        features: &FeatureMap,
        mu: f64,
        omega: &DVector<f64>,
    ) -> (f64, f64) {
        let phi = features.matrix();
        let next = self.next_features(mdp, features);
        let inner = &self.r_bar - DVector::from_element(self.r_bar.len(), mu) + (next - phi) * omega;
        let drift = weighted_transpose(phi, &self.d_sa) * inner;
        ((mu - self.j).abs(), drift.norm())
    }
}

/// `ΦᵀD` for diagonal `D = diag(w)`.
fn weighted_transpose(phi: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut t = phi.transpose();
    for (c, wc) in w.iter().enumerate() {
        t.column_mut(c).scale_mut(*wc);
    }
    t
}

pub fn averaged_return(mdp: &NetworkedMdp, policy: &SoftmaxPolicy, theta: &PolicyParams) -> Result<f64> {
    Ok(PolicyEvaluation::compute(mdp, policy, theta)?.j)
}

pub fn relative_q(mdp: &NetworkedMdp, policy: &SoftmaxPolicy, theta: &PolicyParams) -> Result<DVector<f64>> {
    Ok(PolicyEvaluation::compute(mdp, policy, theta)?.q)
}

pub fn local_advantage_exact(
    mdp: &NetworkedMdp,
    policy: &SoftmaxPolicy,
    theta: &PolicyParams,
    agent: usize,
    s: usize,
    a: usize,
) -> Result<f64> {
    Ok(PolicyEvaluation::compute(mdp, policy, theta)?.local_advantage(mdp, policy, theta, agent, s, a))
}

pub fn policy_gradient(
    mdp: &NetworkedMdp,
    policy: &SoftmaxPolicy,
    theta: &PolicyParams,
    agent: usize,
) -> Result<Vec<f64>> {
    Ok(PolicyEvaluation::compute(mdp, policy, theta)?.policy_gradient(mdp, policy, theta, agent))
}

pub fn td_fixed_point(
    mdp: &NetworkedMdp,
    policy: &SoftmaxPolicy,
    theta: &PolicyParams,
    features: &FeatureMap,
) -> Result<DVector<f64>> {
    PolicyEvaluation::compute(mdp, policy, theta)?.td_fixed_point(mdp, features)
}

/// Gradients for all agents, evaluated in parallel when the `parallel`
/// feature is on.
pub fn all_policy_gradients(
    mdp: &NetworkedMdp,
    policy: &SoftmaxPolicy,
    theta: &PolicyParams,
) -> Result<Vec<Vec<f64>>> {
    let eval = PolicyEvaluation::compute(mdp, policy, theta)?;
    Ok(crate::par::map_range(mdp.n_agents(), |i| {
        eval.policy_gradient(mdp, policy, theta, i)
    }))
}

#[derive(Debug, Clone, Copy)]
pub struct AscentOptions {
    pub initial_step: f64,
    pub max_iters: usize,
    /// Stop once the projected step moves θ by less than this (max-norm).
    pub tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            initial_step: 10.0,
            max_iters: 20_000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub theta: PolicyParams,
    pub j: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Exact projected gradient ascent on `J` with a backtracking step, so that
/// `J` never decreases between accepted iterates.
pub fn projected_gradient_ascent(
    mdp: &NetworkedMdp,
    policy: &SoftmaxPolicy,
    theta0: &PolicyParams,
    opts: AscentOptions,
) -> Result<AscentResult> {
    let mut theta = theta0.clone();
    let mut eval = PolicyEvaluation::compute(mdp, policy, &theta)?;
    let mut step = opts.initial_step;
    for iter in 0..opts.max_iters {
        let grads: Vec<Vec<f64>> = (0..mdp.n_agents())
            .map(|i| eval.policy_gradient(mdp, policy, &theta, i))
            .collect();
        let mut accepted = false;
        while step > 1e-12 {
            let mut cand = theta.clone();
            for (i, g) in grads.iter().enumerate() {
                let moved: Vec<f64> = theta.block(i).iter().zip(g).map(|(t, g)| t + step * g).collect();
                cand.set_block(i, &moved);
            }
            let shift = cand
                .blocks()
                .iter()
                .flatten()
                .zip(theta.blocks().iter().flatten())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if shift < opts.tol {
                return Ok(AscentResult {
                    j: eval.j,
                    theta,
                    iters: iter,
                    converged: true,
                });
            }
            let cand_eval = PolicyEvaluation::compute(mdp, policy, &cand)?;
            if cand_eval.j >= eval.j {
                theta = cand;
                eval = cand_eval;
                accepted = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(AscentResult {
                j: eval.j,
                theta,
                iters: iter,
                converged: true,
            });
        }
    }
    Ok(AscentResult {
        j: eval.j,
        theta,
        iters: opts.max_iters,
        converged: false,
    })
}

/// Plain-text report of an evaluation: `J`, `d_θ`, `ω_θ` and per-agent
/// gradients. Byte-identical for identical inputs.
pub fn report(
    mdp: &NetworkedMdp,
    policy: &SoftmaxPolicy,
    theta: &PolicyParams,
    features: &FeatureMap,
) -> Result<String> {
    let eval = PolicyEvaluation::compute(mdp, policy, theta)?;
    let omega = eval.td_fixed_point(mdp, features)?;
    let mut out = String::from("netac-oracle 1\n");
    let _ = writeln!(out, "J {}", fmt_f64(eval.j));
    let _ = writeln!(out, "d_theta {}", join_f64(eval.d_theta.iter()));
    let _ = writeln!(out, "omega_theta {}", join_f64(omega.iter()));
    for i in 0..mdp.n_agents() {
        let g = eval.policy_gradient(mdp, policy, theta, i);
        let _ = writeln!(out, "gradient {i} {}", join_f64(&g));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_features, generate_garnet};
    use crate::policy::{PolicyFeatures, DEFAULT_THETA_MAX};
    use crate::SimRng;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn instance(seed: u64) -> (NetworkedMdp, SoftmaxPolicy, PolicyParams) {
        let mdp = generate_garnet(4, &[2, 3], 2, 1.0, seed).unwrap();
        let pol = SoftmaxPolicy::one_hot(&mdp);
        let theta = PolicyParams::random(&pol.param_dims(), 1.5, DEFAULT_THETA_MAX, &mut SimRng::seed_from_u64(seed));
        (mdp, pol, theta)
    }

    fn transitions(mdp: &NetworkedMdp) -> Vec<f64> {
        (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_joint_actions()).map(move |a| (s, a)))
            .flat_map(|(s, a)| mdp.transition_row(s, a).to_vec())
            .collect()
    }

    #[test]
    fn stationary_examples() {
        let ds = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.5, 0.2, 0.3, 0.3, 0.3, 0.4]);
        let d = stationary_distribution(&ds).unwrap();
        for v in d.iter() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
        let two = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        let d = stationary_distribution(&two).unwrap();
        assert_relative_eq!(d[0], 5.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(d[1], 1.0 / 6.0, epsilon = 1e-12);
        let back = two.transpose() * &d;
        assert!((back - &d).amax() < 1e-12);
        assert!(matches!(stationary_distribution(&DMatrix::identity(2, 2)), Err(Error::Reducible)));
    }

    #[test]
    fn evaluation_invariants() {
        for seed in 0..5 {
            let (mdp, pol, theta) = instance(seed);
            let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
            assert!((e.d_theta.sum() - 1.0).abs() < 1e-12);
            assert!(e.d_theta.iter().all(|&v| v >= 0.0));
            assert!((e.p_theta.transpose() * &e.d_theta - &e.d_theta).amax() < 1e-10);
            // State-action Poisson identity Q = R̄ - J + P_sa Q, built explicitly.
            let (ns, na) = (mdp.n_states(), mdp.n_joint_actions());
            let mut p_sa = DMatrix::zeros(ns * na, ns * na);
            for s in 0..ns {
                for a in 0..na {
                    for s2 in 0..ns {
                        for a2 in 0..na {
                            p_sa[(s * na + a, s2 * na + a2)] = mdp.transition_row(s, a)[s2] * e.pi[(s2, a2)];
                        }
                    }
                }
            }
            let resid = &e.r_bar - DVector::from_element(ns * na, e.j) + &p_sa * &e.q - &e.q;
            assert!(resid.amax() < 1e-9, "poisson residual {}", resid.amax());
            assert!(e.d_sa.dot(&e.q).abs() < 1e-12);
            // V from Q satisfies the state Poisson equation.
            let v = DVector::from_fn(ns, |s, _| (0..na).map(|a| e.pi[(s, a)] * e.q[s * na + a]).sum::<f64>());
            let r_s = DVector::from_fn(ns, |s, _| (0..na).map(|a| e.pi[(s, a)] * e.r_bar[s * na + a]).sum::<f64>());
            let state_resid = r_s - DVector::from_element(ns, e.j) + &e.p_theta * &v - &v;
            assert!(state_resid.amax() < 1e-9);
        }
    }

    #[test]
    fn constant_rewards_give_zero_q() {
        let base = generate_garnet(4, &[2, 2], 3, 1.0, 1).unwrap();
        let rows = base.n_state_actions();
        let mdp = NetworkedMdp::new(4, vec![2, 2], transitions(&base), vec![vec![0.7; rows]; 2]).unwrap();
        let pol = SoftmaxPolicy::one_hot(&mdp);
        let theta = PolicyParams::random(&pol.param_dims(), 2.0, 10.0, &mut SimRng::seed_from_u64(3));
        let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
        assert_relative_eq!(e.j, 0.7, epsilon = 1e-12);
        assert!(e.q.amax() < 1e-12);
        let feats = generate_features(&mdp, 3, 5).unwrap();
        assert!(e.td_fixed_point(&mdp, &feats).unwrap().amax() < 1e-12);
    }

    #[test]
    fn reward_shift_and_scale() {
        let (mdp, pol, theta) = instance(7);
        let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
        let shifted_tables: Vec<Vec<f64>> = (0..mdp.n_agents())
            .map(|i| mdp.reward_table(i).iter().map(|r| 3.0 * r + 0.5).collect())
            .collect();
        let transition = transitions(&mdp);
        let scaled = NetworkedMdp::new(mdp.n_states(), mdp.action_sizes().to_vec(), transition, shifted_tables).unwrap();
        let e2 = PolicyEvaluation::compute(&scaled, &pol, &theta).unwrap();
        assert_relative_eq!(e2.j, 3.0 * e.j + 0.5, epsilon = 1e-12);
        assert!((&e2.q - &e.q * 3.0).amax() < 1e-10);
    }

    #[test]
    fn local_advantage_centering_and_single_agent() {
        let (mdp, pol, theta) = instance(2);
        let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
        for agent in 0..2 {
            for s in 0..mdp.n_states() {
                let probs = pol.action_probs(&theta, agent, s);
                let total: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(b, p)| p * e.local_advantage(&mdp, &pol, &theta, agent, s, mdp.with_agent_action(1, agent, b)))
                    .sum();
                assert!(total.abs() < 1e-12);
            }
        }

        let single = generate_garnet(4, &[3], 2, 1.0, 4).unwrap();
        let pol1 = SoftmaxPolicy::one_hot(&single);
        let theta1 = PolicyParams::random(&pol1.param_dims(), 1.0, 10.0, &mut SimRng::seed_from_u64(4));
        let e1 = PolicyEvaluation::compute(&single, &pol1, &theta1).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                let independent = e1.q[s * 3 + a] - (0..3).map(|b| e1.pi[(s, b)] * e1.q[s * 3 + b]).sum::<f64>();
                assert_relative_eq!(e1.local_advantage(&single, &pol1, &theta1, 0, s, a), independent, epsilon = 1e-12);
            }
        }

        let one_action = generate_garnet(3, &[1, 2], 2, 1.0, 4).unwrap();
        let pol2 = SoftmaxPolicy::one_hot(&one_action);
        let theta2 = PolicyParams::zeros(&pol2.param_dims(), 10.0);
        assert_eq!(local_advantage_exact(&one_action, &pol2, &theta2, 0, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn gradient_forms_agree() {
        for seed in 0..4 {
            let (mdp, pol, theta) = instance(seed + 20);
            let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
            for agent in 0..2 {
                let local = e.policy_gradient(&mdp, &pol, &theta, agent);
                let global = e.policy_gradient_global(&mdp, &pol, &theta, agent);
                for (l, g) in local.iter().zip(&global) {
                    assert!((l - g).abs() < 1e-10);
                }
            }
        }
    }

    /// Two states, state-independent policy `p = π(a0)`; a0 leads to state 1,
    /// a1 to state 0, and only `(s0, a0)` pays. Then `J = p (1 - p)`, whose
    /// maximiser `p = 1/2` is interior.
    fn interior_optimum_instance() -> (NetworkedMdp, SoftmaxPolicy) {
        let transition = vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let mdp = NetworkedMdp::new(2, vec![2], transition, vec![vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let x = PolicyFeatures::new(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        (mdp, SoftmaxPolicy::new(vec![x]))
    }

    #[test]
    fn ascent_reaches_interior_stationary_point() {
        let (mdp, pol) = interior_optimum_instance();
        let theta0 = PolicyParams::new(vec![vec![1.2, -0.4]], 10.0).unwrap();
        let res = projected_gradient_ascent(&mdp, &pol, &theta0, AscentOptions::default()).unwrap();
        assert_relative_eq!(res.j, 0.25, epsilon = 1e-10);
        let g = policy_gradient(&mdp, &pol, &res.theta, 0).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn td_fixed_point_satisfies_equilibrium() {
        for seed in 0..4 {
            let (mdp, pol, theta) = instance(seed + 40);
            let feats = generate_features(&mdp, 5, seed).unwrap();
            let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
            let omega = e.td_fixed_point(&mdp, &feats).unwrap();
            let (r_mu, r_omega) = e.equilibrium_residual(&mdp, &feats, e.j, &omega);
            assert_eq!(r_mu, 0.0);
            assert!(r_omega < 1e-10, "{r_omega}");
        }
    }

    #[test]
    fn near_tabular_features_reproduce_q() {
        // Φ = identity minus one column: the span contains every Q with a
        // zero last coordinate; the fixed point then matches the relative Q
        // up to the kernel direction of (I - P_sa), which is the ones vector.
        let (mdp, pol, theta) = instance(11);
        let rows = mdp.n_state_actions();
        let phi = DMatrix::from_fn(rows, rows - 1, |r, c| if r == c { 1.0 } else { 0.0 });
        let feats = FeatureMap::new(phi.clone()).unwrap();
        let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
        let omega = e.td_fixed_point(&mdp, &feats).unwrap();
        let approx = &phi * &omega;
        let shift = e.q[rows - 1];
        let target = &e.q - DVector::from_element(rows, shift);
        let weighted = (approx - target).component_mul(&e.d_sa.map(f64::sqrt)).norm();
        assert!(weighted < 1e-9, "{weighted}");
    }

    #[test]
    fn singular_features_are_reported() {
        let (mdp, pol, theta) = instance(3);
        let rows = mdp.n_state_actions();
        // Columns 0 and 1 span the ones vector, so Φu = 1 is solvable.
        let phi = DMatrix::from_fn(rows, 2, |r, c| if (r % 2 == 0) == (c == 0) { 1.0 } else { 0.0 });
        assert!(FeatureMap::new(phi).is_err());
        let e = PolicyEvaluation::compute(&mdp, &pol, &theta).unwrap();
        assert!(e.j.is_finite());
    }

    #[test]
    fn report_is_deterministic() {
        let (mdp, pol, theta) = instance(5);
        let feats = generate_features(&mdp, 4, 1).unwrap();
        let a = report(&mdp, &pol, &theta, &feats).unwrap();
        let b = report(&mdp, &pol, &theta, &feats).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("netac-oracle 1\nJ "));
    }
}
