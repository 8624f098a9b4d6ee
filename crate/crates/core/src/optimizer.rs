//! Projected stochastic-approximation loops and stationarity diagnostics.
//!
//! The SF-Reinforce recursion is
//!
//! ```text
//! θ(n+1) = Γ(θ(n) − a(n) · Δ(n) · Gⁿ / δ_n)
//! ```
//!
//! with one episode per update, rolled at `θ(n) + δ_n Δ(n)`. The same loop
//! drives the likelihood-ratio and Kiefer-Wolfowitz baselines.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{exact_gradient, kw_estimate, lr_estimate, sf_estimate};
use crate::mdp::{MdpModel, DEFAULT_STEP_CAP};
use crate::policy::{ParamPolicy, PerturbationMode};
use crate::solve::{policy_value, Start};

/// `a(n) = a0 (n+1)^−alpha`, `δ_n = delta0 (n+1)^−gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct StepSchedule {
    pub a0: f64,
    pub alpha: f64,
    pub delta0: f64,
    pub gamma: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { a0: 0.05, alpha: 1.0, delta0: 1.0, gamma: 0.3 }
    }
}

impl StepSchedule {
    pub fn step_size(&self, n: usize) -> f64 {
        self.a0 * libm::pow((n + 1) as f64, -self.alpha)
    }

    pub fn delta(&self, n: usize) -> f64 {
        self.delta0 * libm::pow((n + 1) as f64, -self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleFailure {
    /// `a0 ≤ 0` or `delta0 ≤ 0`.
    NonPositiveScale,
    /// `alpha ≤ 0`: steps do not vanish.
    StepsDoNotVanish,
    /// `alpha > 1`: `Σ a(n) < ∞`.
    StepSumFinite,
    /// `gamma ≤ 0`: `δ_n` does not vanish.
    PerturbationDoesNotVanish,
    /// `2(alpha − gamma) ≤ 1`: `Σ (a(n)/δ_n)² = ∞`.
    NoiseSumDivergent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleDiagnosis {
    pub failures: Vec<ScheduleFailure>,
}

impl ScheduleDiagnosis {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks the exponent conditions `0 < alpha ≤ 1`, `gamma > 0` and
/// `2(alpha − gamma) > 1`.
pub fn validate_schedule(s: &StepSchedule) -> ScheduleDiagnosis {
    let mut failures = Vec::new();
    if !(s.a0 > 0.0 && s.delta0 > 0.0) {
        failures.push(ScheduleFailure::NonPositiveScale);
    }
    if !(s.alpha > 0.0) {
        failures.push(ScheduleFailure::StepsDoNotVanish);
    }
    if !(s.alpha <= 1.0) {
        failures.push(ScheduleFailure::StepSumFinite);
    }
    if !(s.gamma > 0.0) {
        failures.push(ScheduleFailure::PerturbationDoesNotVanish);
    }
    if !(2.0 * (s.alpha - s.gamma) > 1.0) {
        failures.push(ScheduleFailure::NoiseSumDivergent);
    }
    ScheduleDiagnosis { failures }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Algorithm {
    #[cfg_attr(feature = "serde", serde(rename = "SF1"))]
    Sf1,
    #[cfg_attr(feature = "serde", serde(rename = "LR"))]
    Lr,
    #[cfg_attr(feature = "serde", serde(rename = "KW-descent"))]
    KwDescent,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Sf1 => "SF1",
            Algorithm::Lr => "LR",
            Algorithm::KwDescent => "KW-descent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainOptions {
    /// Number of parameter updates.
    pub iters: usize,
    /// Exact diagnostics every this many iterations (0 disables them).
    pub diag_every: usize,
    pub step_cap: usize,
    /// Run even when the schedule fails validation.
    pub allow_bad_schedule: bool,
    /// Finite step used by [`projected_grad_norm`].
    pub pgn_eps: f64,
    /// Rollouts per side for the Kiefer-Wolfowitz baseline.
    pub kw_episodes_per_side: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iters: 1000,
            diag_every: 1000,
            step_cap: DEFAULT_STEP_CAP,
            allow_bad_schedule: false,
            pgn_eps: 1e-6,
            kw_episodes_per_side: 1,
        }
    }
}

/// Exact diagnostics at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnostics {
    pub objective: f64,
    pub proj_grad_norm: f64,
    /// Coordinates of `θ` on a face of the box.
    pub boundary_coords: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRow {
    pub n: usize,
    pub step_size: f64,
    /// `δ_n`; zero for the likelihood-ratio baseline.
    pub delta: f64,
    /// `Gⁿ`, or the mean return of the update's rollouts for KW.
    pub episode_return: f64,
    pub episode_len: usize,
    pub episodes: usize,
    pub truncated: bool,
    /// FNV-1a hash of `θ(n+1)` bit patterns.
    pub theta_hash: u64,
    /// Diagnostics at `θ(n)` on cadence rows.
    pub diag: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    pub options: TrainOptions,
    pub perturbation: PerturbationMode,
    pub seed: Option<u64>,
    pub rows: Vec<IterRow>,
    pub episodes_used: usize,
    pub truncations: usize,
    /// Diagnostics that could not be computed (solver failure).
    pub failed_diagnostics: usize,
    pub initial: Option<Diagnostics>,
    pub last: Option<Diagnostics>,
}

impl RunRecord {
    /// `(n, objective)` for every diagnostic row.
    pub fn objective_series(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.diag.map(|d| (r.n, d.objective))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("step schedule fails validation: {0:?}")]
    Schedule(ScheduleDiagnosis),
    #[error("non-finite update at iteration {iteration}: {source}")]
    Aborted { iteration: usize, source: Error, partial: alloc::boxed::Box<RunRecord> },
    #[error(transparent)]
    Setup(#[from] Error),
}

fn fnv1a(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// `F(θ) = Σ_s ν(s) V_θ(s)`.
pub fn objective(model: &MdpModel, policy: &ParamPolicy) -> Result<f64> {
    let v = policy_value(model, &policy.materialize(None)?)?;
    Ok(v.iter().zip(model.initial_dist()).map(|(v, n)| v * n).sum())
}

/// `‖(Γ(θ − eps·g) − θ) / eps‖` with `g` the exact gradient of `F`.
pub fn projected_grad_norm(model: &MdpModel, policy: &ParamPolicy, eps: f64) -> Result<f64> {
    let g = exact_gradient(model, policy, Start::Initial)?.grad;
    Ok(projected_norm_of(policy, &g, eps))
}

fn projected_norm_of(policy: &ParamPolicy, grad: &[f64], eps: f64) -> f64 {
    let theta = policy.theta();
    let bounds = policy.bounds();
    let sq: f64 = theta
        .iter()
        .zip(grad)
        .zip(bounds.lower().iter().zip(bounds.upper()))
        .map(|((t, g), (lo, hi))| {
            let moved = hi.min(lo.max(t - eps * g));
            let v = (moved - t) / eps;
            v * v
        })
        .sum();
    libm::sqrt(sq)
}

pub fn diagnose(model: &MdpModel, policy: &ParamPolicy, eps: f64) -> Result<Diagnostics> {
    Ok(Diagnostics {
        objective: objective(model, policy)?,
        proj_grad_norm: projected_grad_norm(model, policy, eps)?,
        boundary_coords: policy.bounds().active_count(policy.theta()),
    })
}

/// Runs `opts.iters` projected updates of `algorithm` from `policy0`.
pub fn train<R: Rng + ?Sized>(
    model: &MdpModel,
    policy0: &ParamPolicy,
    algorithm: Algorithm,
    schedule: &StepSchedule,
    opts: &TrainOptions,
    rng: &mut R,
) -> core::result::Result<(ParamPolicy, RunRecord), TrainError> {
    // the likelihood-ratio baseline has no perturbation schedule to check
    let diagnosis = validate_schedule(schedule);
    if algorithm != Algorithm::Lr && !opts.allow_bad_schedule && !diagnosis.passed() {
        return Err(TrainError::Schedule(diagnosis));
    }
    if policy0.dim() != model.num_pairs() {
        return Err(Error::Config(format!(
            "policy has {} coordinates, model has {} state-action pairs",
            policy0.dim(),
            model.num_pairs()
        ))
        .into());
    }
    let mut policy = policy0.clone();
    let mut record = RunRecord {
        algorithm,
        schedule: *schedule,
        options: *opts,
        perturbation: policy.perturbation(),
        seed: None,
        rows: Vec::with_capacity(opts.iters),
        episodes_used: 0,
        truncations: 0,
        failed_diagnostics: 0,
        initial: None,
        last: None,
    };
    let mut next = alloc::vec![0.0; policy.dim()];
    for n in 0..opts.iters {
        let diag = if opts.diag_every > 0 && n % opts.diag_every == 0 {
            match diagnose(model, &policy, opts.pgn_eps) {
                Ok(d) => Some(d),
                Err(_) => {
                    record.failed_diagnostics += 1;
                    None
                }
            }
        } else {
            None
        };
        if n == 0 {
            record.initial = diag;
        }
        let a_n = schedule.step_size(n);
        let step = match algorithm {
            Algorithm::Sf1 => {
                let delta = schedule.delta(n);
                sf_estimate(model, &policy, delta, rng, opts.step_cap)
                    .map(|(g, ep)| (g, delta, ep.total_return, ep.len()))
            }
            Algorithm::Lr => {
                lr_estimate(model, &policy, rng, opts.step_cap).map(|(g, ep)| (g, 0.0, ep.total_return, ep.len()))
            }
            Algorithm::KwDescent => {
                let delta = schedule.delta(n);
                kw_estimate(model, &policy, delta, opts.kw_episodes_per_side, rng, opts.step_cap)
                    .map(|(g, mean)| (g, delta, mean, 0))
            }
        };
        let (estimate, delta, episode_return, episode_len) = match step {
            Ok(s) => s,
            Err(source) => {
                return Err(TrainError::Aborted { iteration: n, source, partial: alloc::boxed::Box::new(record) })
            }
        };
        for ((nx, t), g) in next.iter_mut().zip(policy.theta()).zip(&estimate.grad) {
            *nx = t - a_n * g;
        }
        if let Some(bad) = next.iter().find(|x| !x.is_finite()) {
            let source = Error::Numeric(format!("parameter update produced {bad}"));
            return Err(TrainError::Aborted { iteration: n, source, partial: alloc::boxed::Box::new(record) });
        }
        policy.set_theta(&next)?;
        record.episodes_used += estimate.episodes_used;
        record.truncations += estimate.truncations;
        record.rows.push(IterRow {
            n,
            step_size: a_n,
            delta,
            episode_return,
            episode_len,
            episodes: estimate.episodes_used,
            truncated: estimate.truncations > 0,
            theta_hash: fnv1a(policy.theta()),
            diag,
        });
    }
    record.last = diagnose(model, &policy, opts.pgn_eps).ok();
    Ok((policy, record))
}

/// SF-Reinforce: one episode per update at the perturbed parameter.
pub fn sf_reinforce<R: Rng + ?Sized>(
    model: &MdpModel,
    policy0: &ParamPolicy,
    schedule: &StepSchedule,
    opts: &TrainOptions,
    rng: &mut R,
) -> core::result::Result<(ParamPolicy, RunRecord), TrainError> {
    train(model, policy0, Algorithm::Sf1, schedule, opts, rng)
}

/// Classical Reinforce driven by [`lr_estimate`]; only `a(n)` is used.
pub fn baseline_reinforce<R: Rng + ?Sized>(
    model: &MdpModel,
    policy0: &ParamPolicy,
    schedule: &StepSchedule,
    opts: &TrainOptions,
    rng: &mut R,
) -> core::result::Result<(ParamPolicy, RunRecord), TrainError> {
    train(model, policy0, Algorithm::Lr, schedule, opts, rng)
}

/// Projected descent on Kiefer-Wolfowitz estimates (`2d·m` episodes per update).
pub fn kw_descent<R: Rng + ?Sized>(
    model: &MdpModel,
    policy0: &ParamPolicy,
    schedule: &StepSchedule,
    opts: &TrainOptions,
    rng: &mut R,
) -> core::result::Result<(ParamPolicy, RunRecord), TrainError> {
    train(model, policy0, Algorithm::KwDescent, schedule, opts, rng)
}
