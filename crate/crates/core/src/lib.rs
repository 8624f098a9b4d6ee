//! Smoothed-functional Reinforce for episodic stochastic shortest path MDPs.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! pieces: finite SSP models with exact solvers, a box-constrained tabular
//! softmax policy, gradient estimators (one-measurement smoothed functional,
//! likelihood ratio, Kiefer-Wolfowitz and the exact policy-gradient oracle),
//! the projected stochastic-approximation training loops and benchmark
//! environments. File formats, the CLI and parallel Monte Carlo live in the
//! `sfreinforce` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod envs;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mdp;
pub mod optimizer;
pub mod policy;
pub mod solve;
pub mod stats;

pub use error::{Error, Result};
pub use estimators::{
    exact_gradient, exact_gradient_normalized, kw_estimate, lr_estimate, lr_from_episode, sample_perturbation,
    sf_estimate, sf_estimate_with, EstimatorKind, GradEstimate, Perturbation,
};
pub use mdp::{simulate_episode, Episode, MdpModel, StationaryRandPolicy, Step, DEFAULT_STEP_CAP};
pub use optimizer::{
    baseline_reinforce, kw_descent, objective, projected_grad_norm, sf_reinforce, train, validate_schedule, Algorithm,
    Diagnostics, IterRow, RunRecord, ScheduleDiagnosis, ScheduleFailure, StepSchedule, TrainError, TrainOptions,
};
pub use policy::{BoxConstraint, ParamPolicy, PerturbationMode, DEFAULT_BOX_HALF_WIDTH};
pub use solve::{
    check_proper, optimal_bellman_residual, optimal_value, policy_bellman_residual, policy_value, q_values,
    visitation_counts, OptimalSolution, Properness, QValues, Start,
};
