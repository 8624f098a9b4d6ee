//! Post-processing of training runs.

use serde::{Deserialize, Serialize};

use crate::config::ConvergenceRule;

/// Trailing means: for each point `(n_k, y_k)` with `n_k + 1 ≥ window`, the
/// mean of the `y` whose `n` lies in `(n_k − window, n_k]`.
pub fn trailing_mean(series: &[(usize, f64)], window: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut lo = 0;
    let mut sum = 0.0;
    for (hi, &(n, y)) in series.iter().enumerate() {
        sum += y;
        while series[lo].0 + window <= n {
            sum -= series[lo].1;
            lo += 1;
        }
        if n + 1 >= window {
            out.push((n, sum / (hi + 1 - lo) as f64));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// Smoothed points whose whole window lies after the burn-in.
    pub points: usize,
    /// Largest `(s_{k+1} − s_k) / |s_k|` among them.
    pub worst_rel_increase: Option<f64>,
    /// `None` with fewer than two points.
    pub non_increasing: Option<bool>,
}

/// Whether the smoothed objective is non-increasing, within `rule.rel_tol`,
/// once the burn-in is over.
pub fn check_trend(series: &[(usize, f64)], iters: usize, rule: &ConvergenceRule) -> TrendReport {
    let burn_in = (rule.burn_in_frac * iters as f64).ceil() as usize;
    let smoothed: Vec<f64> = trailing_mean(series, rule.window)
        .into_iter()
        .filter(|&(n, _)| n + 1 >= burn_in + rule.window)
        .map(|(_, y)| y)
        .collect();
    let worst = smoothed
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    TrendReport { points: smoothed.len(), worst_rel_increase: worst, non_increasing: worst.map(|w| w <= rule.rel_tol) }
}
