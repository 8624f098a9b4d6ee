//! Experiment tooling for `sfreinforce-core`: JSON model, parameter and
//! config formats, deterministic parallel Monte Carlo, run records and the
//! `sfreinforce` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod commands;
pub mod config;
pub mod formats;
pub mod montecarlo;
pub mod record;

pub use sfreinforce_core as core;
