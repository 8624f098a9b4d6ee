//! Parallel Monte Carlo with results independent of the worker count.
//!
//! Sample `i` of a run seeded with `seed` draws from its own ChaCha8 stream
//! (`seed`, stream `i`). Samples are grouped into [`CHUNKS`] contiguous
//! chunks whose statistics are merged in chunk order, so the output is a
//! function of `(seed, n)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sfreinforce_core::stats::{RunningStats, VecStats};
use sfreinforce_core::{
    lr_estimate, sample_perturbation, sf_estimate_with, simulate_episode, MdpModel, ParamPolicy, Result,
    StationaryRandPolicy,
};

pub const CHUNKS: usize = 64;

/// The generator of sample `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `body(first, end)` on each chunk of `0..n` in parallel and returns the
/// results in chunk order.
pub fn map_chunks<T, F>(n: usize, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, usize) -> Result<T> + Sync,
{
    let chunks = CHUNKS.min(n.max(1));
    (0..chunks).into_par_iter().map(|k| body(k * n / chunks, (k + 1) * n / chunks)).collect()
}

/// Episode returns from `ν` under a fixed policy.
pub fn return_stats(
    model: &MdpModel,
    policy: &StationaryRandPolicy,
    n: usize,
    seed: u64,
    step_cap: usize,
) -> Result<RunningStats> {
    let parts = map_chunks(n, |lo, hi| {
        let mut stats = RunningStats::new();
        for i in lo..hi {
            let ep = simulate_episode(model, policy, &mut sample_rng(seed, i as u64), step_cap)?;
            stats.push(ep.total_return);
        }
        Ok(stats)
    })?;
    let mut total = RunningStats::new();
    parts.iter().for_each(|p| total.merge(p));
    Ok(total)
}

/// Statistics of the SF estimate at each `δ` in `deltas`, with sample `i`
/// using the same `Δ` and episode noise for every `δ`.
pub fn sf_sweep(
    model: &MdpModel,
    policy: &ParamPolicy,
    deltas: &[f64],
    n: usize,
    seed: u64,
    step_cap: usize,
) -> Result<Vec<VecStats>> {
    let d = policy.dim();
    let parts = map_chunks(n, |lo, hi| {
        let mut stats = vec![VecStats::new(d); deltas.len()];
        for i in lo..hi {
            for (slot, &delta) in stats.iter_mut().zip(deltas) {
                let mut rng = sample_rng(seed, i as u64);
                let pert = sample_perturbation(&mut rng, d);
                let (est, _) = sf_estimate_with(model, policy, delta, &pert, &mut rng, step_cap)?;
                slot.push(&est.grad);
            }
        }
        Ok(stats)
    })?;
    let mut total = vec![VecStats::new(d); deltas.len()];
    for part in &parts {
        total.iter_mut().zip(part).for_each(|(t, p)| t.merge(p));
    }
    Ok(total)
}

/// Statistics of the likelihood-ratio estimate at `θ`.
pub fn lr_stats(model: &MdpModel, policy: &ParamPolicy, n: usize, seed: u64, step_cap: usize) -> Result<VecStats> {
    let d = policy.dim();
    let parts = map_chunks(n, |lo, hi| {
        let mut stats = VecStats::new(d);
        for i in lo..hi {
            let (est, _) = lr_estimate(model, policy, &mut sample_rng(seed, i as u64), step_cap)?;
            stats.push(&est.grad);
        }
        Ok(stats)
    })?;
    let mut total = VecStats::new(d);
    parts.iter().for_each(|p| total.merge(p));
    Ok(total)
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build()?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfreinforce_core::envs::make_random_ssp;

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(1000, |lo, hi| Ok((lo, hi))).unwrap();
        assert_eq!(parts.len(), CHUNKS);
        assert_eq!(parts[0].0, 0);
        assert_eq!(parts.last().unwrap().1, 1000);
        assert!(parts.windows(2).all(|w| w[0].1 == w[1].0));
        assert_eq!(map_chunks(3, |lo, hi| Ok(hi - lo)).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn independent_of_worker_count() {
        let m = make_random_ssp(4, 2, 0.3, (0.0, 1.0), 3).unwrap();
        let pol = ParamPolicy::zeros(&m);
        let table = pol.materialize(None).unwrap();
        let one = with_workers(Some(1), || return_stats(&m, &table, 5000, 7, 1000).unwrap()).unwrap();
        let four = with_workers(Some(4), || return_stats(&m, &table, 5000, 7, 1000).unwrap()).unwrap();
        assert_eq!(one, four);
        let a = with_workers(Some(1), || sf_sweep(&m, &pol, &[0.5, 0.1], 2000, 1, 1000).unwrap()).unwrap();
        let b = with_workers(Some(3), || sf_sweep(&m, &pol, &[0.5, 0.1], 2000, 1, 1000).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_shares_perturbations_across_deltas() {
        // with a 1-action model every return is the same function of the
        // episode noise, so the estimates at two deltas are exact rescalings
        let m = MdpModel::new(vec![1], vec![vec![vec![0.5, 0.5]]], vec![vec![vec![1.0, 1.0]]], vec![1.0]).unwrap();
        let pol = ParamPolicy::zeros(&m);
        let s = sf_sweep(&m, &pol, &[1.0, 0.5], 200, 11, 1000).unwrap();
        let (m1, m2) = (s[0].means()[0], s[1].means()[0]);
        assert!((2.0 * m1 - m2).abs() < 1e-12, "{m1} {m2}");
    }
}
