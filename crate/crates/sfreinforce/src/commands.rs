//! The experiment commands behind the CLI subcommands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sfreinforce_core::stats::{RunningStats, VecStats};
use sfreinforce_core::{
    check_proper, exact_gradient, optimal_value, policy_value, train, Algorithm, Error, MdpModel, ParamPolicy,
    RunRecord, Start, TrainError,
};

use crate::analysis::{check_trend, TrendReport};
use crate::config::ExperimentConfig;
use crate::formats::ParamsFile;
use crate::montecarlo::{sf_sweep, with_workers};
use crate::record::{write_csv_file, write_json_file, RunSidecar, RunStatus};

/// A failed command and its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(anyhow::Error),
    /// Exit code 3.
    Numeric(anyhow::Error),
    /// Exit code 4.
    Check(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    /// Numeric failures of the core map to 3, everything else to 2.
    pub fn from_core(err: Error) -> Self {
        match err {
            Error::Improper { .. } | Error::NotConverged { .. } | Error::Numeric(_) => CliError::Numeric(err.into()),
            Error::Config(_) | Error::InfeasibleAction { .. } => CliError::Config(err.into()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, err) = match self {
            CliError::Config(e) => ("configuration error", e),
            CliError::Numeric(e) => ("numeric failure", e),
            CliError::Check(e) => ("check failed", e),
        };
        let msg = format!("{err:#}");
        if msg.starts_with(kind) {
            f.write_str(&msg)
        } else {
            write!(f, "{kind}: {msg}")
        }
    }
}

impl std::error::Error for CliError {}

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn io_err(e: impl Into<anyhow::Error>) -> CliError {
    // unwritable outputs are reported like a bad output_dir
    CliError::Config(e.into())
}

fn setup(cfg: &ExperimentConfig) -> Result<(MdpModel, ParamPolicy), CliError> {
    cfg.validate().map_err(config_err)?;
    let model = cfg.build_model().map_err(config_err)?;
    let policy = cfg.policy(&model).map_err(config_err)?;
    Ok((model, policy))
}

fn slug(algorithm: Algorithm) -> &'static str {
    match algorithm {
        Algorithm::Sf1 => "sf1",
        Algorithm::Lr => "lr",
        Algorithm::KwDescent => "kw-descent",
    }
}

struct SeedRun {
    seed: u64,
    algorithm: Algorithm,
    record: RunRecord,
    params: Option<ParamsFile>,
    error: Option<String>,
    numeric: bool,
}

fn run_seed(
    model: &MdpModel,
    policy: &ParamPolicy,
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    seed: u64,
    iters: usize,
) -> Result<SeedRun, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = cfg.train_options(iters);
    let (record, params, error) = match train(model, policy, algorithm, &cfg.schedule, &opts, &mut rng) {
        Ok((p, rec)) => (rec, Some(ParamsFile::from_policy(&p)), None),
        Err(TrainError::Aborted { iteration, source, partial }) => {
            (*partial, None, Some(format!("aborted at iteration {iteration}: {source}")))
        }
        Err(TrainError::Schedule(d)) => {
            return Err(config_err(anyhow::anyhow!("step schedule fails validation: {:?}", d.failures)))
        }
        Err(TrainError::Setup(e)) => return Err(CliError::from_core(e)),
    };
    let record = RunRecord { seed: Some(seed), ..record };
    let numeric = error.is_some();
    Ok(SeedRun { seed, algorithm, record, params, error, numeric })
}

fn run_all(
    model: &MdpModel,
    policy: &ParamPolicy,
    cfg: &ExperimentConfig,
    jobs: &[(Algorithm, u64, usize)],
    workers: Option<usize>,
) -> Result<Vec<SeedRun>, CliError> {
    with_workers(workers, || {
        jobs.par_iter()
            .map(|&(alg, seed, iters)| run_seed(model, policy, cfg, alg, seed, iters))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(config_err)?
}

/// Per-seed line of the training summary.
#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub algorithm: &'static str,
    pub status: RunStatus,
    pub error: Option<String>,
    pub iterations: usize,
    pub episodes_used: usize,
    pub truncations: usize,
    pub initial_objective: Option<f64>,
    pub final_objective: Option<f64>,
    pub initial_proj_grad_norm: Option<f64>,
    pub final_proj_grad_norm: Option<f64>,
    pub proj_grad_norm_ratio: Option<f64>,
    pub final_boundary_coords: Option<usize>,
    pub trend: TrendReport,
    pub converged: bool,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedSummary>,
    pub converged_seeds: usize,
    pub failed_seeds: usize,
}

fn summarize(run: &SeedRun, cfg: &ExperimentConfig, dir: &Path) -> Result<SeedSummary, CliError> {
    let stem = format!("{}_seed{}", slug(run.algorithm), run.seed);
    let csv = dir.join(format!("{stem}.csv"));
    let sidecar = dir.join(format!("{stem}.json"));
    let rec = &run.record;
    let trend = check_trend(&rec.objective_series(), rec.options.iters, &cfg.convergence);
    let status = if run.error.is_some() { RunStatus::Failed } else { RunStatus::Ok };
    write_csv_file(&csv, rec).map_err(io_err)?;
    let side = RunSidecar {
        config: cfg,
        algorithm: run.algorithm.name(),
        seed: run.seed,
        status,
        error: run.error.clone(),
        iterations: rec.rows.len(),
        episodes_used: rec.episodes_used,
        truncations: rec.truncations,
        failed_diagnostics: rec.failed_diagnostics,
        initial: rec.initial,
        last: rec.last,
        trend,
        final_params: run.params.clone(),
    };
    write_json_file(&sidecar, &side).map_err(io_err)?;
    let ratio = match (rec.initial, rec.last) {
        (Some(i), Some(l)) if i.proj_grad_norm > 0.0 => Some(l.proj_grad_norm / i.proj_grad_norm),
        _ => None,
    };
    let converged = status == RunStatus::Ok
        && ratio.is_some_and(|r| r < cfg.convergence.pgn_ratio)
        && trend.non_increasing == Some(true);
    Ok(SeedSummary {
        seed: run.seed,
        algorithm: run.algorithm.name(),
        status,
        error: run.error.clone(),
        iterations: rec.rows.len(),
        episodes_used: rec.episodes_used,
        truncations: rec.truncations,
        initial_objective: rec.initial.map(|d| d.objective),
        final_objective: rec.last.map(|d| d.objective),
        initial_proj_grad_norm: rec.initial.map(|d| d.proj_grad_norm),
        final_proj_grad_norm: rec.last.map(|d| d.proj_grad_norm),
        proj_grad_norm_ratio: ratio,
        final_boundary_coords: rec.last.map(|d| d.boundary_coords),
        trend,
        converged,
        csv,
        sidecar,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(anyhow::anyhow!("creating {}: {e}", dir.display())))
}

/// Trains `cfg.algorithm` once per seed and writes `<alg>_seed<k>.csv`,
/// `<alg>_seed<k>.json` and `summary.json` under `cfg.output_dir`.
///
/// Runs that abort keep their partial artifacts, are marked failed in the
/// summary, and make the command fail with [`CliError::Numeric`] once all
/// artifacts are written.
pub fn cmd_train(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<TrainSummary, CliError> {
    let (model, policy) = setup(cfg)?;
    let jobs: Vec<_> = cfg.seeds.iter().map(|&s| (cfg.algorithm, s, cfg.iters)).collect();
    let runs = run_all(&model, &policy, cfg, &jobs, workers)?;
    create_dir(&cfg.output_dir)?;
    let seeds = runs.iter().map(|r| summarize(r, cfg, &cfg.output_dir)).collect::<Result<Vec<_>, _>>()?;
    let summary = TrainSummary {
        config: cfg.clone(),
        converged_seeds: seeds.iter().filter(|s| s.converged).count(),
        failed_seeds: seeds.iter().filter(|s| s.status == RunStatus::Failed).count(),
        seeds,
    };
    write_json_file(&cfg.output_dir.join("summary.json"), &summary).map_err(io_err)?;
    if runs.iter().any(|r| r.numeric) {
        return Err(CliError::Numeric(anyhow::anyhow!(
            "{} of {} runs aborted; partial artifacts kept in {}",
            summary.failed_seeds,
            runs.len(),
            cfg.output_dir.display()
        )));
    }
    Ok(summary)
}

/// Episodes one update of `algorithm` consumes.
pub fn episodes_per_update(algorithm: Algorithm, dim: usize, kw_episodes_per_side: usize) -> usize {
    match algorithm {
        Algorithm::Sf1 | Algorithm::Lr => 1,
        Algorithm::KwDescent => 2 * dim * kw_episodes_per_side,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub algorithm: &'static str,
    pub episode_budget: usize,
    pub episodes_per_update: usize,
    pub iterations: usize,
    /// Largest per-seed episode count.
    pub episodes_used: usize,
    pub seeds: usize,
    pub failed: usize,
    pub final_objective_mean: f64,
    pub final_objective_se: f64,
    pub final_proj_grad_norm_mean: f64,
    pub final_proj_grad_norm_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub config: ExperimentConfig,
    pub rows: Vec<CompareRow>,
    pub runs: Vec<SeedSummary>,
}

/// Runs every algorithm in `cfg.algorithms` on every seed with the same
/// episode budget and writes `compare.csv` and `compare.json`.
pub fn cmd_compare(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<CompareReport, CliError> {
    let (model, policy) = setup(cfg)?;
    let d = policy.dim();
    let mut jobs = Vec::new();
    for &alg in &cfg.algorithms {
        let per = episodes_per_update(alg, d, cfg.kw_episodes_per_side);
        let iters = cfg.episode_budget / per;
        if iters == 0 {
            return Err(config_err(anyhow::anyhow!(
                "episode budget {} is below one {} update ({per} episodes)",
                cfg.episode_budget,
                alg.name()
            )));
        }
        jobs.extend(cfg.seeds.iter().map(|&s| (alg, s, iters)));
    }
    let runs = run_all(&model, &policy, cfg, &jobs, workers)?;
    let dir = cfg.output_dir.join("compare_runs");
    create_dir(&dir)?;
    let summaries = runs.iter().map(|r| summarize(r, cfg, &dir)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for &alg in &cfg.algorithms {
        let of_alg: Vec<&SeedSummary> = summaries.iter().filter(|s| s.algorithm == alg.name()).collect();
        let mut obj = RunningStats::new();
        let mut pgn = RunningStats::new();
        for s in &of_alg {
            if let (Some(o), Some(g)) = (s.final_objective, s.final_proj_grad_norm) {
                obj.push(o);
                pgn.push(g);
            }
        }
        rows.push(CompareRow {
            algorithm: alg.name(),
            episode_budget: cfg.episode_budget,
            episodes_per_update: episodes_per_update(alg, d, cfg.kw_episodes_per_side),
            iterations: of_alg.first().map_or(0, |s| s.iterations),
            episodes_used: of_alg.iter().map(|s| s.episodes_used).max().unwrap_or(0),
            seeds: of_alg.len(),
            failed: of_alg.iter().filter(|s| s.status == RunStatus::Failed).count(),
            final_objective_mean: obj.mean(),
            final_objective_se: obj.std_err(),
            final_proj_grad_norm_mean: pgn.mean(),
            final_proj_grad_norm_se: pgn.std_err(),
        });
    }
    create_dir(&cfg.output_dir)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("compare.csv")).map_err(io_err)?;
    for r in &rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    let report = CompareReport { config: cfg.clone(), rows, runs: summaries };
    write_json_file(&cfg.output_dir.join("compare.json"), &report).map_err(io_err)?;
    if runs.iter().any(|r| r.numeric) {
        return Err(CliError::Numeric(anyhow::anyhow!(
            "some runs aborted; partial artifacts kept in {}",
            cfg.output_dir.display()
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    /// `max_i |exact_i − fd_i| / max(max_i |fd_i|, 1e-8)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub exact: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub passed: bool,
}

/// `F(x) = ν · V` at the softmax policy of `x`, without projection.
pub fn objective_at(model: &MdpModel, policy: &ParamPolicy, x: &[f64]) -> sfreinforce_core::Result<f64> {
    let v = policy_value(model, &policy.materialize(Some(x))?)?;
    Ok(v.iter().zip(model.initial_dist()).map(|(v, n)| v * n).sum())
}

/// Exact gradient against central differences `(F(θ+h eᵢ) − F(θ−h eᵢ)) / 2h`.
pub fn grad_check(
    model: &MdpModel,
    policy: &ParamPolicy,
    h: f64,
    tol: f64,
) -> sfreinforce_core::Result<GradCheckReport> {
    let exact = exact_gradient(model, policy, Start::Initial)?.grad;
    let theta = policy.theta();
    let mut fd = Vec::with_capacity(theta.len());
    let mut x = theta.to_vec();
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let up = objective_at(model, policy, &x)?;
        x[i] = theta[i] - h;
        let down = objective_at(model, policy, &x)?;
        x[i] = theta[i];
        fd.push((up - down) / (2.0 * h));
    }
    let max_abs_error = exact.iter().zip(&fd).map(|(e, f)| (e - f).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|f| f.abs()).fold(0.0, f64::max).max(1e-8);
    let max_rel_error = max_abs_error / scale;
    Ok(GradCheckReport {
        h,
        tol,
        max_rel_error,
        max_abs_error,
        exact,
        finite_difference: fd,
        passed: max_rel_error <= tol,
    })
}

/// Runs [`grad_check`] at the configured `θ`; writes `grad_check.json` when
/// `out` is given. Fails with [`CliError::Check`] above `cfg.grad_check.tol`.
pub fn cmd_grad_check(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<GradCheckReport, CliError> {
    let (model, policy) = setup(cfg)?;
    let report = grad_check(&model, &policy, cfg.grad_check.h, cfg.grad_check.tol).map_err(CliError::from_core)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        #[derive(Serialize)]
        struct Out<'a> {
            config: &'a ExperimentConfig,
            #[serde(flatten)]
            report: &'a GradCheckReport,
        }
        write_json_file(&dir.join("grad_check.json"), &Out { config: cfg, report: &report }).map_err(io_err)?;
    }
    if !report.passed {
        return Err(CliError::Check(anyhow::anyhow!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error,
            report.tol
        )));
    }
    Ok(report)
}

/// One line of the bias-sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub coord: usize,
    pub mc_mean: f64,
    pub exact: f64,
    pub std_err: f64,
    pub n_samples: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepDelta {
    pub delta: f64,
    /// `‖mc_mean − exact‖₂`.
    pub bias_norm: f64,
    /// `sqrt(Σ std_err²)`.
    pub std_err_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub per_delta: Vec<SweepDelta>,
    pub rows: Vec<SweepRow>,
}

/// SF estimates at each configured `δ` with common random numbers, pooled
/// over seeds in seed order, against the exact gradient. Writes
/// `bias_sweep.csv` and `bias_sweep.json`.
pub fn cmd_bias_sweep(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<SweepReport, CliError> {
    let (model, policy) = setup(cfg)?;
    let sweep = &cfg.bias_sweep;
    let exact = exact_gradient(&model, &policy, Start::Initial).map_err(CliError::from_core)?.grad;
    let pooled = with_workers(workers, || -> Result<Vec<VecStats>, Error> {
        let mut pooled = vec![VecStats::new(policy.dim()); sweep.deltas.len()];
        for &seed in &cfg.seeds {
            let part = sf_sweep(&model, &policy, &sweep.deltas, sweep.n_samples, seed, cfg.step_cap)?;
            pooled.iter_mut().zip(&part).for_each(|(p, q)| p.merge(q));
        }
        Ok(pooled)
    })
    .map_err(config_err)?
    .map_err(CliError::from_core)?;
    let mut rows = Vec::new();
    let mut per_delta = Vec::new();
    for (&delta, stats) in sweep.deltas.iter().zip(&pooled) {
        let (mut b2, mut s2) = (0.0, 0.0);
        for (coord, &ex) in exact.iter().enumerate() {
            let c = stats.coord(coord);
            b2 += (c.mean() - ex).powi(2);
            s2 += c.std_err().powi(2);
            rows.push(SweepRow {
                delta,
                coord,
                mc_mean: c.mean(),
                exact: ex,
                std_err: c.std_err(),
                n_samples: c.count(),
            });
        }
        per_delta.push(SweepDelta { delta, bias_norm: b2.sqrt(), std_err_norm: s2.sqrt() });
    }
    create_dir(&cfg.output_dir)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("bias_sweep.csv")).map_err(io_err)?;
    for r in &rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    let report = SweepReport { config: cfg.clone(), per_delta, rows };
    write_json_file(&cfg.output_dir.join("bias_sweep.json"), &report).map_err(io_err)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub optimal_values: Vec<f64>,
    pub greedy_actions: Vec<usize>,
    pub value_iterations: usize,
    pub optimal_objective: f64,
    /// The configured softmax policy (uniform at `θ = 0`).
    pub policy_values: Vec<f64>,
    pub policy_objective: f64,
    pub p_hat: f64,
}

pub const SOLVE_TOL: f64 = 1e-12;
pub const SOLVE_MAX_ITERS: usize = 10_000_000;

/// `V*` by value iteration and `V_φ` of the configured policy.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<SolveReport, CliError> {
    let (model, policy) = setup(cfg)?;
    let opt = optimal_value(&model, SOLVE_TOL, SOLVE_MAX_ITERS).map_err(CliError::from_core)?;
    let table = policy.materialize(None).map_err(CliError::from_core)?;
    let proper = check_proper(&model, &table).map_err(CliError::from_core)?;
    let values = policy_value(&model, &table).map_err(CliError::from_core)?;
    let nu = model.initial_dist();
    let dot = |v: &[f64]| v.iter().zip(nu).map(|(a, b)| a * b).sum();
    Ok(SolveReport {
        optimal_objective: dot(&opt.values),
        policy_objective: dot(&values),
        optimal_values: opt.values,
        greedy_actions: opt.greedy,
        value_iterations: opt.iterations,
        policy_values: values,
        p_hat: proper.p_hat,
    })
}
