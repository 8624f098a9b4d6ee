//! Experiment configuration (JSON).
//!
//! Every field has a default, so `{}` is a valid config describing the
//! 5×5 gridworld benchmark trained with SF1 over seeds 0..10. Unknown keys are
//! rejected. The resolved config (defaults filled in, CLI overrides applied)
//! is embedded in every JSON artifact.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sfreinforce_core::envs::EnvSpec;
use sfreinforce_core::{
    validate_schedule, Algorithm, BoxConstraint, MdpModel, ParamPolicy, PerturbationMode, StepSchedule, TrainOptions,
    DEFAULT_BOX_HALF_WIDTH, DEFAULT_STEP_CAP,
};

use crate::formats::load_model;

/// The 5×5 benchmark gridworld: goal in the far corner, slip 0.1, step cost 2.
pub fn default_env() -> EnvSpec {
    EnvSpec::Gridworld { width: 5, height: 5, goal: (4, 4), step_cost: 2.0, slip: 0.1 }
}

/// Convergence rule used by the training summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceRule {
    /// A seed converges when `final pgn < pgn_ratio · initial pgn` ...
    pub pgn_ratio: f64,
    /// ... and the objective, averaged over a trailing window of this many
    /// iterations, ...
    pub window: usize,
    /// ... never rises after the first `burn_in_frac · iters` iterations by
    /// more than `rel_tol` (relative) between consecutive diagnostic points.
    pub burn_in_frac: f64,
    pub rel_tol: f64,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        Self { pgn_ratio: 0.1, window: 10_000, burn_in_frac: 0.1, rel_tol: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Largest accepted relative error.
    pub tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSweepConfig {
    pub deltas: Vec<f64>,
    /// Samples per seed; at least 10⁴.
    pub n_samples: usize,
}

impl Default for BiasSweepConfig {
    fn default() -> Self {
        Self { deltas: vec![0.5, 0.25, 0.125], n_samples: 100_000 }
    }
}

pub const MIN_SWEEP_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    /// Model JSON file; replaces `env` when set.
    pub model_file: Option<PathBuf>,
    pub algorithm: Algorithm,
    /// Algorithms run by `compare`.
    pub algorithms: Vec<Algorithm>,
    pub schedule: StepSchedule,
    pub iters: usize,
    /// Episodes per algorithm and seed for `compare`.
    pub episode_budget: usize,
    pub seeds: Vec<u64>,
    pub diag_every: usize,
    pub output_dir: PathBuf,
    pub project_perturbation: bool,
    pub allow_bad_schedule: bool,
    /// Half-width of the parameter box `[-w, w]^d`.
    pub box_half_width: f64,
    pub step_cap: usize,
    pub kw_episodes_per_side: usize,
    pub pgn_eps: f64,
    /// Initial (train, compare) or evaluation (grad-check, bias-sweep, solve)
    /// parameters; zeros when absent.
    pub theta: Option<Vec<f64>>,
    pub convergence: ConvergenceRule,
    pub grad_check: GradCheckConfig,
    pub bias_sweep: BiasSweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opts = TrainOptions::default();
        Self {
            env: default_env(),
            model_file: None,
            algorithm: Algorithm::Sf1,
            algorithms: vec![Algorithm::Sf1, Algorithm::Lr, Algorithm::KwDescent],
            schedule: StepSchedule::default(),
            iters: 200_000,
            episode_budget: 200_000,
            seeds: (0..10).collect(),
            diag_every: opts.diag_every,
            output_dir: PathBuf::from("runs"),
            project_perturbation: false,
            allow_bad_schedule: false,
            box_half_width: DEFAULT_BOX_HALF_WIDTH,
            step_cap: DEFAULT_STEP_CAP,
            kw_episodes_per_side: opts.kw_episodes_per_side,
            pgn_eps: opts.pgn_eps,
            theta: None,
            convergence: ConvergenceRule::default(),
            grad_check: GradCheckConfig::default(),
            bias_sweep: BiasSweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("parsing config JSON")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("loading config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks everything that does not need the model.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("\"seeds\" is empty");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            bail!("seed {} is listed twice", w[0]);
        }
        if !self.allow_bad_schedule {
            let diagnosis = validate_schedule(&self.schedule);
            if !diagnosis.passed() {
                bail!(
                    "step schedule {:?} fails validation: {:?} (use --allow-bad-schedule to run anyway)",
                    self.schedule,
                    diagnosis.failures
                );
            }
        }
        if !(self.box_half_width > 0.0) || !self.box_half_width.is_finite() {
            bail!("\"box_half_width\" must be positive and finite");
        }
        if self.step_cap == 0 {
            bail!("\"step_cap\" must be at least 1");
        }
        if self.kw_episodes_per_side == 0 {
            bail!("\"kw_episodes_per_side\" must be at least 1");
        }
        if !(self.pgn_eps > 0.0) {
            bail!("\"pgn_eps\" must be positive");
        }
        if self.algorithms.is_empty() {
            bail!("\"algorithms\" is empty");
        }
        let c = &self.convergence;
        if !(c.pgn_ratio > 0.0) || !(0.0..1.0).contains(&c.burn_in_frac) || !(c.rel_tol >= 0.0) || c.window == 0 {
            bail!("invalid \"convergence\" rule {c:?}");
        }
        if !(self.grad_check.h > 0.0) || !(self.grad_check.tol > 0.0) {
            bail!("\"grad_check.h\" and \"grad_check.tol\" must be positive");
        }
        if self.bias_sweep.deltas.is_empty() || self.bias_sweep.deltas.iter().any(|d| !(*d > 0.0)) {
            bail!("\"bias_sweep.deltas\" must be a non-empty list of positive values");
        }
        if self.bias_sweep.n_samples < MIN_SWEEP_SAMPLES {
            bail!("\"bias_sweep.n_samples\" must be at least {MIN_SWEEP_SAMPLES}");
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<MdpModel> {
        match &self.model_file {
            Some(path) => load_model(path),
            None => self.env.build().context("building environment"),
        }
    }

    pub fn perturbation(&self) -> PerturbationMode {
        if self.project_perturbation {
            PerturbationMode::Projected
        } else {
            PerturbationMode::Unprojected
        }
    }

    /// Policy at `theta` (or zeros) inside the configured box.
    pub fn policy(&self, model: &MdpModel) -> Result<ParamPolicy> {
        let d = model.num_pairs();
        let theta = match &self.theta {
            Some(t) if t.len() != d => bail!("\"theta\" has {} entries, model needs {d}", t.len()),
            Some(t) => t.clone(),
            None => vec![0.0; d],
        };
        let bounds = BoxConstraint::cube(d, -self.box_half_width, self.box_half_width)?;
        Ok(ParamPolicy::new(model, theta, bounds)?.with_perturbation(self.perturbation()))
    }

    pub fn train_options(&self, iters: usize) -> TrainOptions {
        TrainOptions {
            iters,
            diag_every: self.diag_every,
            step_cap: self.step_cap,
            allow_bad_schedule: self.allow_bad_schedule,
            pgn_eps: self.pgn_eps,
            kw_episodes_per_side: self.kw_episodes_per_side,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig {
            env: EnvSpec::Chain { length: 3, forward_cost: 1.0, stay_cost: 2.0 },
            algorithm: Algorithm::KwDescent,
            theta: Some(vec![0.5; 6]),
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_json(r#"{"iterz": 3}"#).is_err());
        let dup = ExperimentConfig { seeds: vec![1, 2, 1], ..Default::default() };
        assert!(dup.validate().unwrap_err().to_string().contains("twice"));
        let bad = ExperimentConfig {
            schedule: StepSchedule { alpha: 0.6, gamma: 0.3, ..Default::default() },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let allowed = ExperimentConfig { allow_bad_schedule: true, ..bad };
        allowed.validate().unwrap();
        let few = ExperimentConfig {
            bias_sweep: BiasSweepConfig { n_samples: 100, ..Default::default() },
            ..Default::default()
        };
        assert!(few.validate().is_err());
    }

    #[test]
    fn theta_length_checked() {
        let cfg = ExperimentConfig { theta: Some(vec![0.0; 3]), ..Default::default() };
        let model = cfg.build_model().unwrap();
        assert!(cfg.policy(&model).is_err());
        let ok = ExperimentConfig { theta: None, ..cfg };
        assert_eq!(ok.policy(&model).unwrap().dim(), 96);
    }
}
