//! Exact solvers: policy evaluation, Q-values, value iteration, properness
//! and expected visitation counts.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config, Error, Result};
use crate::linalg::{solve_checked, Matrix};
use crate::mdp::{MdpModel, StationaryRandPolicy};

/// Where an episode starts for visitation counts and gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    State(usize),
    /// The model's initial distribution `ν`.
    Initial,
}

/// `P_φ(s,s') = Σ_a φ(s,a) p(s'|s,a)` restricted to nonterminal states.
pub fn induced_matrix(model: &MdpModel, policy: &StationaryRandPolicy) -> Matrix {
    let p = model.num_states();
    let mut m = Matrix::zeros(p);
    for s in 0..p {
        for (a, &w) in policy.row(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (j, &pr) in model.transition_row(s, a)[..p].iter().enumerate() {
                m[(s, j)] += w * pr;
            }
        }
    }
    m
}

/// `ḡ_φ(s) = Σ_a φ(s,a) ḡ(s,a)`.
pub fn induced_cost(model: &MdpModel, policy: &StationaryRandPolicy) -> Vec<f64> {
    (0..model.num_states())
        .map(|s| policy.row(s).iter().enumerate().map(|(a, w)| w * model.expected_cost(s, a)).sum())
        .collect()
}

fn one_step_lookahead(model: &MdpModel, s: usize, a: usize, values: &[f64]) -> f64 {
    let p = model.num_states();
    model.expected_cost(s, a) + model.transition_row(s, a)[..p].iter().zip(values).map(|(pr, v)| pr * v).sum::<f64>()
}

/// Solves `(I − P_φ) V = ḡ_φ` directly.
pub fn policy_value(model: &MdpModel, policy: &StationaryRandPolicy) -> Result<Vec<f64>> {
    policy.check_compatible(model)?;
    let p = model.num_states();
    let pm = induced_matrix(model, policy);
    let mut a = Matrix::identity(p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] -= pm[(i, j)];
        }
    }
    solve_checked(&a, &induced_cost(model, policy))
}

/// Max-norm residual of the policy Bellman equation at `values`.
pub fn policy_bellman_residual(model: &MdpModel, policy: &StationaryRandPolicy, values: &[f64]) -> f64 {
    (0..model.num_states())
        .map(|s| {
            let rhs: f64 =
                policy.row(s).iter().enumerate().map(|(a, w)| w * one_step_lookahead(model, s, a, values)).sum();
            libm::fabs(rhs - values[s])
        })
        .fold(0.0, f64::max)
}

/// Q-values laid out state-major like the model's pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QValues {
    offsets: Vec<usize>,
    values: Vec<f64>,
    state_values: Vec<f64>,
}

impl QValues {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[self.offsets[s] + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[self.offsets[s]..self.offsets[s + 1]]
    }

    /// The `V_φ` the Q-values were built from.
    pub fn state_values(&self) -> &[f64] {
        &self.state_values
    }
}

pub fn q_values(model: &MdpModel, policy: &StationaryRandPolicy) -> Result<QValues> {
    let v = policy_value(model, policy)?;
    let mut values = Vec::with_capacity(model.num_pairs());
    for s in 0..model.num_states() {
        for a in 0..model.num_actions(s) {
            values.push(one_step_lookahead(model, s, a, &v));
        }
    }
    Ok(QValues { offsets: model.offsets().to_vec(), values, state_values: v })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub values: Vec<f64>,
    /// Minimising action per state, lowest index on ties.
    pub greedy: Vec<usize>,
    pub iterations: usize,
    /// Sup-norm of the last value-iteration update.
    pub last_update: f64,
}

impl OptimalSolution {
    pub fn greedy_policy(&self, model: &MdpModel) -> StationaryRandPolicy {
        StationaryRandPolicy::deterministic(model, &self.greedy).expect("greedy actions are feasible")
    }
}

fn bellman_min(model: &MdpModel, s: usize, values: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for a in 0..model.num_actions(s) {
        let q = one_step_lookahead(model, s, a, values);
        if q < best.0 {
            best = (q, a);
        }
    }
    best
}

/// Value iteration from `V = 0` until the sup-norm update drops below `tol`.
pub fn optimal_value(model: &MdpModel, tol: f64, max_iters: usize) -> Result<OptimalSolution> {
    if !(tol > 0.0) {
        return Err(config("value iteration tolerance must be positive"));
    }
    let p = model.num_states();
    let mut v = vec![0.0; p];
    let mut next = vec![0.0; p];
    let mut last_update = f64::INFINITY;
    for it in 1..=max_iters {
        let mut update: f64 = 0.0;
        for s in 0..p {
            next[s] = bellman_min(model, s, &v).0;
            update = update.max(libm::fabs(next[s] - v[s]));
        }
        core::mem::swap(&mut v, &mut next);
        if !update.is_finite() {
            return Err(Error::Numeric(alloc::format!("value iteration diverged at iteration {it}")));
        }
        last_update = update;
        if update < tol {
            let greedy = (0..p).map(|s| bellman_min(model, s, &v).1).collect();
            return Ok(OptimalSolution { values: v, greedy, iterations: it, last_update });
        }
    }
    Err(Error::NotConverged { iters: max_iters, residual: last_update })
}

/// Max-norm residual of the optimality equation at `values`.
pub fn optimal_bellman_residual(model: &MdpModel, values: &[f64]) -> f64 {
    (0..model.num_states()).map(|s| libm::fabs(bellman_min(model, s, values).0 - values[s])).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Properness {
    pub is_proper: bool,
    /// `max_s P(X_p ≠ t | X_0 = s)`.
    pub p_hat: f64,
}

/// Row sums of `P_φ^p`, obtained by applying `P_φ` to the ones vector `p` times.
pub fn check_proper(model: &MdpModel, policy: &StationaryRandPolicy) -> Result<Properness> {
    policy.check_compatible(model)?;
    let pm = induced_matrix(model, policy);
    let mut survive = vec![1.0; model.num_states()];
    for _ in 0..model.num_states() {
        survive = pm.mul_vec(&survive);
    }
    let p_hat = survive.iter().copied().fold(0.0, f64::max);
    Ok(Properness { is_proper: p_hat < 1.0, p_hat })
}

/// Expected visits `η = Σ_k (P_φᵀ)^k e`, from `(I − P_φᵀ) η = e`.
pub fn visitation_counts(model: &MdpModel, policy: &StationaryRandPolicy, start: Start) -> Result<Vec<f64>> {
    policy.check_compatible(model)?;
    let p = model.num_states();
    let rhs = match start {
        Start::State(s) if s < p => {
            let mut e = vec![0.0; p];
            e[s] = 1.0;
            e
        }
        Start::State(s) => return Err(config(alloc::format!("start state {s} out of range"))),
        Start::Initial => model.initial_dist().to_vec(),
    };
    let pt = induced_matrix(model, policy).transpose();
    let mut a = Matrix::identity(p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] -= pt[(i, j)];
        }
    }
    let mut eta = solve_checked(&a, &rhs)?;
    // roundoff can leave tiny negatives for unreachable states
    eta.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_random_ssp;
    use crate::mdp::fixtures::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(model: &MdpModel, rng: &mut ChaCha8Rng) -> StationaryRandPolicy {
        let rows = (0..model.num_states())
            .map(|s| {
                let w: Vec<f64> = (0..model.num_actions(s)).map(|_| rng.random::<f64>() + 1e-3).collect();
                let z: f64 = w.iter().sum();
                let mut row: Vec<f64> = w.iter().map(|x| x / z).collect();
                let fix = 1.0 - row.iter().sum::<f64>();
                row[0] += fix;
                row
            })
            .collect();
        StationaryRandPolicy::new(rows).unwrap()
    }

    #[test]
    fn trivial_values() {
        let m = geometric(0.0, 1.0);
        let pol = StationaryRandPolicy::uniform(&m);
        assert_eq!(policy_value(&m, &pol).unwrap(), vec![1.0]);
        let m = geometric(0.5, 1.0);
        assert!((policy_value(&m, &pol).unwrap()[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn q_values_two_exits() {
        let m = two_exits();
        let q = q_values(&m, &StationaryRandPolicy::uniform(&m)).unwrap();
        assert_eq!(q.row(0), &[1.0, 2.0]);
        let m1 = geometric(0.0, 1.0);
        assert_eq!(q_values(&m1, &StationaryRandPolicy::uniform(&m1)).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn optimal_two_exits() {
        let sol = optimal_value(&two_exits(), 1e-12, 100).unwrap();
        assert_eq!(sol.values, vec![1.0]);
        assert_eq!(sol.greedy, vec![0]);
    }

    #[test]
    fn tie_breaks_to_lowest_action() {
        let m = MdpModel::new(
            vec![3],
            vec![vec![vec![0.0, 1.0]; 3]],
            vec![vec![vec![0.0, 2.0], vec![0.0, 1.0], vec![0.0, 1.0]]],
            vec![1.0],
        )
        .unwrap();
        assert_eq!(optimal_value(&m, 1e-12, 10).unwrap().greedy, vec![1]);
    }

    #[test]
    fn value_iteration_cap_reports_residual() {
        let m = geometric(0.999, 1.0);
        match optimal_value(&m, 1e-12, 5) {
            Err(Error::NotConverged { iters: 5, residual }) => assert!(residual > 0.9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn properness_examples() {
        let m = geometric(0.0, 1.0);
        let pol = StationaryRandPolicy::uniform(&m);
        assert_eq!(check_proper(&m, &pol).unwrap(), Properness { is_proper: true, p_hat: 0.0 });
        let m = geometric(1.0, 1.0);
        assert_eq!(check_proper(&m, &pol).unwrap(), Properness { is_proper: false, p_hat: 1.0 });
        assert!(matches!(policy_value(&m, &pol), Err(Error::Improper { .. })));
        assert!(matches!(visitation_counts(&m, &pol, Start::State(0)), Err(Error::Improper { .. })));
        // three states each surviving with probability 1/2 per step
        let m = leaky(3, 0.5);
        let pol = StationaryRandPolicy::uniform(&m);
        let pr = check_proper(&m, &pol).unwrap();
        assert!((pr.p_hat - 0.125).abs() < 1e-15);
    }

    #[test]
    fn visitation_trivial() {
        let m = geometric(0.0, 1.0);
        let pol = StationaryRandPolicy::uniform(&m);
        assert_eq!(visitation_counts(&m, &pol, Start::State(0)).unwrap(), vec![1.0]);
        let m = geometric(0.5, 1.0);
        let eta = visitation_counts(&m, &pol, Start::State(0)).unwrap();
        assert!((eta[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn residuals_and_dominance_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..20 {
            let m = make_random_ssp(10, 3, 0.1, (0.0, 1.0), seed).unwrap();
            let opt = optimal_value(&m, 1e-12, 100_000).unwrap();
            assert!(optimal_bellman_residual(&m, &opt.values) <= 1e-11);
            for _ in 0..5 {
                let pol = random_policy(&m, &mut rng);
                let v = policy_value(&m, &pol).unwrap();
                assert!(policy_bellman_residual(&m, &pol, &v) <= 1e-10);
                for (vs, os) in v.iter().zip(&opt.values) {
                    assert!(*os <= vs + 1e-8);
                }
                let q = q_values(&m, &pol).unwrap();
                for s in 0..m.num_states() {
                    let back: f64 = pol.row(s).iter().zip(q.row(s)).map(|(w, q)| w * q).sum();
                    assert!((back - v[s]).abs() < 1e-10);
                }
                let eta = visitation_counts(&m, &pol, Start::State(3)).unwrap();
                assert!(eta[3] >= 1.0 && eta.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn greedy_policy_attains_optimal_value() {
        let m = make_random_ssp(8, 4, 0.2, (0.0, 3.0), 5).unwrap();
        let opt = optimal_value(&m, 1e-13, 100_000).unwrap();
        let v = policy_value(&m, &opt.greedy_policy(&m)).unwrap();
        for (a, b) in v.iter().zip(&opt.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
