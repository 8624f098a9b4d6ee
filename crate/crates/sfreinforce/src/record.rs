//! Run-record CSV and its JSON sidecar.
//!
//! CSV columns, one row per iteration:
//! `n, step_size, delta, episode_return, episode_len, episodes, truncated,
//! theta_hash, objective, proj_grad_norm, boundary_coords`. The last three are
//! empty except on diagnostic rows; `theta_hash` is the FNV-1a hash of the
//! updated parameter in hex.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sfreinforce_core::{Diagnostics, RunRecord};

use crate::analysis::TrendReport;
use crate::config::ExperimentConfig;
use crate::formats::ParamsFile;

#[derive(Serialize)]
struct Row {
    n: usize,
    step_size: f64,
    delta: f64,
    episode_return: f64,
    episode_len: usize,
    episodes: usize,
    truncated: u8,
    theta_hash: String,
    objective: Option<f64>,
    proj_grad_norm: Option<f64>,
    boundary_coords: Option<usize>,
}

pub fn write_run_csv<W: Write>(out: W, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &record.rows {
        w.serialize(Row {
            n: r.n,
            step_size: r.step_size,
            delta: r.delta,
            episode_return: r.episode_return,
            episode_len: r.episode_len,
            episodes: r.episodes,
            truncated: u8::from(r.truncated),
            theta_hash: format!("{:016x}", r.theta_hash),
            objective: r.diag.map(|d| d.objective),
            proj_grad_norm: r.diag.map(|d| d.proj_grad_norm),
            boundary_coords: r.diag.map(|d| d.boundary_coords),
        })?;
    }
    if record.rows.is_empty() {
        w.write_record([
            "n",
            "step_size",
            "delta",
            "episode_return",
            "episode_len",
            "episodes",
            "truncated",
            "theta_hash",
            "objective",
            "proj_grad_norm",
            "boundary_coords",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Scalar results of one run, written next to its CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunSidecar<'a> {
    pub config: &'a ExperimentConfig,
    pub algorithm: &'static str,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub iterations: usize,
    pub episodes_used: usize,
    pub truncations: usize,
    pub failed_diagnostics: usize,
    pub initial: Option<Diagnostics>,
    #[serde(rename = "final")]
    pub last: Option<Diagnostics>,
    pub trend: TrendReport,
    pub final_params: Option<ParamsFile>,
}

pub fn write_csv_file(path: &Path, record: &RunRecord) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut buf = BufWriter::new(file);
    write_run_csv(&mut buf, record)?;
    buf.flush()?;
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
