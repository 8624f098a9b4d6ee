//! Benchmark SSPs that are proper under every stationary randomized policy
//! with full support.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Result};
use crate::mdp::MdpModel;

/// Probability that the chain's "stay" action still advances.
pub const CHAIN_STAY_ADVANCE_PROB: f64 = 0.5;

/// Environment description; [`EnvSpec::build`] is a pure function of it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum EnvSpec {
    Gridworld { width: usize, height: usize, goal: (usize, usize), step_cost: f64, slip: f64 },
    RandomSsp { states: usize, actions: usize, eps_terminal: f64, cost_range: (f64, f64), seed: u64 },
    Chain { length: usize, forward_cost: f64, stay_cost: f64 },
}

impl EnvSpec {
    pub fn build(&self) -> Result<MdpModel> {
        match *self {
            EnvSpec::Gridworld { width, height, goal, step_cost, slip } => {
                make_gridworld(width, height, goal, step_cost, slip)
            }
            EnvSpec::RandomSsp { states, actions, eps_terminal, cost_range, seed } => {
                make_random_ssp(states, actions, eps_terminal, cost_range, seed)
            }
            EnvSpec::Chain { length, forward_cost, stay_cost } => make_chain(length, forward_cost, stay_cost),
        }
    }
}

/// Moves in action order N, S, E, W as `(dx, dy)`; north decreases `y`.
const MOVES: [(isize, isize); 4] = [(0, -1), (0, 1), (1, 0), (-1, 0)];

/// Grid with four compass actions. The intended move happens with
/// probability `1 − slip`, each other direction with `slip / 3`; moves into a
/// wall leave the agent in place and entering `goal` terminates. Every step,
/// including the one into the goal, costs `step_cost`. `ν` is uniform over the
/// non-goal cells, which are numbered row-major.
pub fn make_gridworld(
    width: usize,
    height: usize,
    goal: (usize, usize),
    step_cost: f64,
    slip: f64,
) -> Result<MdpModel> {
    if width == 0 || height == 0 || width * height < 2 {
        return Err(config(format!("degenerate {width}x{height} grid")));
    }
    if goal.0 >= width || goal.1 >= height {
        return Err(config(format!("goal {goal:?} outside {width}x{height} grid")));
    }
    if !(0.0..=0.5).contains(&slip) {
        return Err(config(format!("slip probability {slip} outside [0, 0.5]")));
    }
    if !step_cost.is_finite() {
        return Err(config("step cost must be finite"));
    }
    let cell_index = |x: usize, y: usize| -> usize {
        let raw = y * width + x;
        let g = goal.1 * width + goal.0;
        if raw > g {
            raw - 1
        } else {
            raw
        }
    };
    let p = width * height - 1;
    let mut transition = Vec::with_capacity(p);
    let mut cost = Vec::with_capacity(p);
    for y in 0..height {
        for x in 0..width {
            if (x, y) == goal {
                continue;
            }
            let mut state_rows = Vec::with_capacity(4);
            for intended in 0..4 {
                let mut row = vec![0.0; p + 1];
                for (dir, &(dx, dy)) in MOVES.iter().enumerate() {
                    let prob = if dir == intended { 1.0 - slip } else { slip / 3.0 };
                    if prob == 0.0 {
                        continue;
                    }
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    let (nx, ny) = if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        (x, y)
                    } else {
                        (nx as usize, ny as usize)
                    };
                    let target = if (nx, ny) == goal { p } else { cell_index(nx, ny) };
                    row[target] += prob;
                }
                state_rows.push(row);
            }
            transition.push(state_rows);
            cost.push(vec![vec![step_cost; p + 1]; 4]);
        }
    }
    MdpModel::new(vec![4; p], transition, cost, vec![1.0 / p as f64; p])
}

/// Random SSP: every `(s, a)` sends exactly `eps_terminal` to the terminal
/// state and spreads the rest over nonterminal states with Dirichlet(1)
/// weights. Costs `g(s,a,s')` and the initial distribution are drawn from the
/// same seeded stream.
pub fn make_random_ssp(
    p: usize,
    actions: usize,
    eps_terminal: f64,
    cost_range: (f64, f64),
    seed: u64,
) -> Result<MdpModel> {
    if p == 0 || actions == 0 {
        return Err(config("need at least one state and one action"));
    }
    if !(eps_terminal > 0.0 && eps_terminal <= 1.0) {
        return Err(config(format!("termination floor {eps_terminal} outside (0, 1]")));
    }
    let (lo, hi) = cost_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(config(format!("invalid cost range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = |rng: &mut ChaCha8Rng, n: usize, mass: f64| -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| -libm::log(1.0 - rng.random::<f64>())).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| mass * x / z).collect()
    };
    let mut transition = Vec::with_capacity(p);
    let mut cost = Vec::with_capacity(p);
    for _ in 0..p {
        let mut rows = Vec::with_capacity(actions);
        let mut crow = Vec::with_capacity(actions);
        for _ in 0..actions {
            let mut row = dirichlet(&mut rng, p, 1.0 - eps_terminal);
            row.push(eps_terminal);
            normalize_last(&mut row);
            rows.push(row);
            crow.push((0..=p).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect());
        }
        transition.push(rows);
        cost.push(crow);
    }
    let mut nu = dirichlet(&mut rng, p, 1.0);
    normalize_last(&mut nu);
    MdpModel::new(vec![actions; p], transition, cost, nu)
}

/// Pushes rounding error into the largest entry so the row sums to one.
fn normalize_last(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    let (imax, _) = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    row[imax] += 1.0 - sum;
}

/// Chain `0 → 1 → … → length−1 → t`. Action 0 advances surely at
/// `forward_cost`; action 1 costs `stay_cost` and advances with probability
/// [`CHAIN_STAY_ADVANCE_PROB`], otherwise stays. `ν` is uniform.
pub fn make_chain(length: usize, forward_cost: f64, stay_cost: f64) -> Result<MdpModel> {
    if length == 0 {
        return Err(config("chain length must be at least 1"));
    }
    if !forward_cost.is_finite() || !stay_cost.is_finite() {
        return Err(config("chain costs must be finite"));
    }
    let p = length;
    let q = CHAIN_STAY_ADVANCE_PROB;
    let mut transition = Vec::with_capacity(p);
    let mut cost = Vec::with_capacity(p);
    for s in 0..p {
        let mut advance = vec![0.0; p + 1];
        advance[s + 1] = 1.0;
        let mut stay = vec![0.0; p + 1];
        stay[s] = 1.0 - q;
        stay[s + 1] += q;
        transition.push(vec![advance, stay]);
        cost.push(vec![vec![forward_cost; p + 1], vec![stay_cost; p + 1]]);
    }
    MdpModel::new(vec![2; p], transition, cost, vec![1.0 / p as f64; p])
}
