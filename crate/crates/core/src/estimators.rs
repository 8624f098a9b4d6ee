//! Gradient estimators for `F(θ) = Σ_s ν(s) V_θ(s)`.
//!
//! * [`sf_estimate`]: one-measurement smoothed functional, `Δ · G / δ` from a
//!   single episode at the perturbed parameter `θ + δΔ`, `Δ ~ N(0, I)`.
//! * [`lr_estimate`]: likelihood-ratio Reinforce, `Σ_k ∇log φ(s_k,a_k) G_k`.
//! * [`kw_estimate`]: Kiefer-Wolfowitz central differences, `2d` rollouts
//!   per side count.
//! * [`exact_gradient`]: policy gradient theorem with unnormalised visitation
//!   counts, solved exactly.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config, Error, Result};
use crate::mdp::{simulate_episode, Episode, MdpModel};
use crate::policy::ParamPolicy;
use crate::solve::{q_values, visitation_counts, Start};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EstimatorKind {
    #[cfg_attr(feature = "serde", serde(rename = "SF1"))]
    Sf1,
    #[cfg_attr(feature = "serde", serde(rename = "LR"))]
    Lr,
    #[cfg_attr(feature = "serde", serde(rename = "KW"))]
    Kw,
    #[cfg_attr(feature = "serde", serde(rename = "Exact"))]
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub grad: Vec<f64>,
    pub kind: EstimatorKind,
    /// Perturbation size; zero for LR and Exact.
    pub delta: f64,
    pub episodes_used: usize,
    /// Seed of the stream that produced the estimate, when the caller knows it.
    pub seed: Option<u64>,
    /// Episodes that hit the step cap (their partial return was used).
    pub truncations: usize,
}

impl GradEstimate {
    pub fn is_flagged(&self) -> bool {
        self.truncations > 0
    }

    fn check_finite(self) -> Result<Self> {
        if let Some(g) = self.grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(alloc::format!("{:?} estimate has non-finite entry {g}", self.kind)));
        }
        Ok(self)
    }
}

/// A direction `Δ` of independent standard normals.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta_vec: Vec<f64>,
}

pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Perturbation {
    Perturbation { delta_vec: (0..d).map(|_| rng.sample(StandardNormal)).collect() }
}

/// SF estimate for a given direction, rolling the episode with `episode_rng`.
///
/// Splitting the two streams lets callers reuse the same `Δ` and episode
/// noise across several `δ` (common random numbers).
pub fn sf_estimate_with<R: Rng + ?Sized>(
    model: &MdpModel,
    policy: &ParamPolicy,
    delta: f64,
    perturbation: &Perturbation,
    episode_rng: &mut R,
    step_cap: usize,
) -> Result<(GradEstimate, Episode)> {
    if !(delta > 0.0) {
        return Err(config("perturbation size delta must be positive"));
    }
    let at = policy.perturbed(delta, &perturbation.delta_vec)?;
    let table = policy.materialize(Some(&at))?;
    let episode = simulate_episode(model, &table, episode_rng, step_cap)?;
    let scale = episode.total_return / delta;
    let estimate = GradEstimate {
        grad: perturbation.delta_vec.iter().map(|d| d * scale).collect(),
        kind: EstimatorKind::Sf1,
        delta,
        episodes_used: 1,
        seed: None,
        truncations: usize::from(episode.truncated),
    }
    .check_finite()?;
    Ok((estimate, episode))
}

/// One-measurement SF estimate: draw `Δ`, run one episode at the perturbed
/// parameter, return `Δ · G / δ`.
pub fn sf_estimate<R: Rng + ?Sized>(
    model: &MdpModel,
    policy: &ParamPolicy,
    delta: f64,
    rng: &mut R,
    step_cap: usize,
) -> Result<(GradEstimate, Episode)> {
    let perturbation = sample_perturbation(rng, policy.dim());
    sf_estimate_with(model, policy, delta, &perturbation, rng, step_cap)
}

/// Score-function estimate from the steps of an episode rolled at `θ`.
pub fn lr_from_episode(policy: &ParamPolicy, episode: &Episode) -> Result<GradEstimate> {
    let mut grad = vec![0.0; policy.dim()];
    let tails = episode.tail_returns();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; policy.num_states()];
    for (step, &tail) in episode.steps.iter().zip(&tails) {
        let probs = match &rows[step.state] {
            Some(p) => p,
            None => rows[step.state].insert(policy.action_dist(None, step.state)?),
        };
        policy.add_score(step.state, step.action, probs, tail, &mut grad)?;
    }
    GradEstimate {
        grad,
        kind: EstimatorKind::Lr,
        delta: 0.0,
        episodes_used: 1,
        seed: None,
        truncations: usize::from(episode.truncated),
    }
    .check_finite()
}

/// Likelihood-ratio Reinforce estimate from one episode at `θ`.
pub fn lr_estimate<R: Rng + ?Sized>(
    model: &MdpModel,
    policy: &ParamPolicy,
    rng: &mut R,
    step_cap: usize,
) -> Result<(GradEstimate, Episode)> {
    let table = policy.materialize(None)?;
    let episode = simulate_episode(model, &table, rng, step_cap)?;
    Ok((lr_from_episode(policy, &episode)?, episode))
}

/// Kiefer-Wolfowitz estimate with `episodes_per_side` rollouts at each of
/// `θ ± δ e_i`. Also returns the mean of all returns it observed.
pub fn kw_estimate<R: Rng + ?Sized>(
    model: &MdpModel,
    policy: &ParamPolicy,
    delta: f64,
    episodes_per_side: usize,
    rng: &mut R,
    step_cap: usize,
) -> Result<(GradEstimate, f64)> {
    if !(delta > 0.0) {
        return Err(config("perturbation size delta must be positive"));
    }
    if episodes_per_side == 0 {
        return Err(config("episodes_per_side must be at least 1"));
    }
    let d = policy.dim();
    let mut grad = vec![0.0; d];
    let mut unit = vec![0.0; d];
    let mut truncations = 0;
    let mut return_sum = 0.0;
    for i in 0..d {
        unit[i] = 1.0;
        let mut side_mean = [0.0; 2];
        for (side, sign) in [(0, 1.0), (1, -1.0)] {
            let at = policy.perturbed(sign * delta, &unit)?;
            let table = policy.materialize(Some(&at))?;
            let mut sum = 0.0;
            for _ in 0..episodes_per_side {
                let ep = simulate_episode(model, &table, rng, step_cap)?;
                truncations += usize::from(ep.truncated);
                sum += ep.total_return;
            }
            return_sum += sum;
            side_mean[side] = sum / episodes_per_side as f64;
        }
        grad[i] = (side_mean[0] - side_mean[1]) / (2.0 * delta);
        unit[i] = 0.0;
    }
    let episodes_used = 2 * d * episodes_per_side;
    let estimate =
        GradEstimate { grad, kind: EstimatorKind::Kw, delta, episodes_used, seed: None, truncations }.check_finite()?;
    Ok((estimate, return_sum / episodes_used as f64))
}

/// `∇V(start) = Σ_s η(s) Σ_a ∇φ(s,a) Q(s,a)` with `∇φ = φ · score`.
pub fn exact_gradient(model: &MdpModel, policy: &ParamPolicy, start: Start) -> Result<GradEstimate> {
    let table = policy.materialize(None)?;
    let eta = visitation_counts(model, &table, start)?;
    let q = q_values(model, &table)?;
    let mut grad = vec![0.0; policy.dim()];
    for (s, &visits) in eta.iter().enumerate() {
        let probs = table.row(s);
        for (a, &pa) in probs.iter().enumerate() {
            policy.add_score(s, a, probs, visits * pa * q.get(s, a), &mut grad)?;
        }
    }
    GradEstimate { grad, kind: EstimatorKind::Exact, delta: 0.0, episodes_used: 0, seed: None, truncations: 0 }
        .check_finite()
}

/// The variant weighted by `μ = η / Σ η`; proportional to, not equal to, the
/// gradient.
pub fn exact_gradient_normalized(model: &MdpModel, policy: &ParamPolicy, start: Start) -> Result<GradEstimate> {
    let table = policy.materialize(None)?;
    let total: f64 = visitation_counts(model, &table, start)?.iter().sum();
    let mut est = exact_gradient(model, policy, start)?;
    est.grad.iter_mut().for_each(|g| *g /= total);
    Ok(est)
}
