//! Command-line parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_bias_sweep, cmd_compare, cmd_grad_check, cmd_solve, cmd_train, CliError};
use crate::config::ExperimentConfig;
use crate::formats::load_params;

#[derive(Debug, Parser)]
#[command(name = "sfreinforce", version, about = "Smoothed-functional Reinforce experiments on SSP models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run even if the step schedule fails validation.
    #[arg(long, global = true)]
    pub allow_bad_schedule: bool,
    /// Roll out at the projected perturbed parameter.
    #[arg(long, global = true)]
    pub project_perturbation: bool,
    /// Model JSON file replacing the configured environment.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Parameter JSON file (initial or evaluation parameters).
    #[arg(long, global = true)]
    pub theta: Option<PathBuf>,
    /// Number of iterations (train).
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one algorithm over the configured seeds.
    Train,
    /// Compare the exact gradient with finite differences of the objective.
    GradCheck {
        /// Finite-difference step.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Monte Carlo bias of the SF estimator over a list of perturbation sizes.
    BiasSweep {
        /// Comma-separated perturbation sizes.
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        /// Samples per seed.
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Run several algorithms under a common episode budget.
    Compare {
        /// Episodes per algorithm and seed.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Print V* and the value of the configured policy.
    Solve,
}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path).map_err(CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.allow_bad_schedule |= c.allow_bad_schedule;
    cfg.project_perturbation |= c.project_perturbation;
    if let Some(model) = &c.model {
        cfg.model_file = Some(model.clone());
    }
    if let Some(iters) = c.iters {
        cfg.iters = iters;
    }
    match &cli.command {
        Command::GradCheck { h: Some(h) } => cfg.grad_check.h = *h,
        Command::BiasSweep { deltas, n_samples } => {
            if let Some(d) = deltas {
                cfg.bias_sweep.deltas = d.clone();
            }
            if let Some(n) = n_samples {
                cfg.bias_sweep.n_samples = *n;
            }
        }
        Command::Compare { budget: Some(b) } => cfg.episode_budget = *b,
        _ => {}
    }
    if let Some(path) = &c.theta {
        let model = cfg.build_model().map_err(CliError::Config)?;
        let map: Vec<(usize, usize)> =
            (0..model.num_states()).flat_map(|s| (0..model.num_actions(s)).map(move |a| (s, a))).collect();
        cfg.theta = Some(load_params(path, &map).map_err(CliError::Config)?);
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialises"));
}

/// Runs the parsed command, printing its report to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let workers = cli.common.workers;
    match cli.command {
        Command::Train => {
            let s = cmd_train(&cfg, workers)?;
            for seed in &s.seeds {
                println!(
                    "{} seed {}: objective {:.4} -> {:.4}, pgn ratio {}, truncations {}, converged {}",
                    seed.algorithm,
                    seed.seed,
                    seed.initial_objective.unwrap_or(f64::NAN),
                    seed.final_objective.unwrap_or(f64::NAN),
                    seed.proj_grad_norm_ratio.map_or("n/a".into(), |r| format!("{r:.3e}")),
                    seed.truncations,
                    seed.converged
                );
            }
            println!(
                "{} of {} seeds converged; summary in {}",
                s.converged_seeds,
                s.seeds.len(),
                cfg.output_dir.join("summary.json").display()
            );
        }
        Command::GradCheck { .. } => {
            let r = cmd_grad_check(&cfg, cli.common.out.as_deref())?;
            println!("max relative error {:.3e} (h = {:e}, tol = {:e})", r.max_rel_error, r.h, r.tol);
        }
        Command::BiasSweep { .. } => {
            let r = cmd_bias_sweep(&cfg, workers)?;
            for d in &r.per_delta {
                println!("delta {}: |bias| {:.4e} (se {:.2e})", d.delta, d.bias_norm, d.std_err_norm);
            }
        }
        Command::Compare { .. } => {
            let r = cmd_compare(&cfg, workers)?;
            for row in &r.rows {
                println!(
                    "{}: {} updates, {} episodes, objective {:.4} ± {:.4}, pgn {:.4} ± {:.4}",
                    row.algorithm,
                    row.iterations,
                    row.episodes_used,
                    row.final_objective_mean,
                    row.final_objective_se,
                    row.final_proj_grad_norm_mean,
                    row.final_proj_grad_norm_se
                );
            }
        }
        Command::Solve => print_json(&cmd_solve(&cfg)?),
    }
    Ok(())
}
