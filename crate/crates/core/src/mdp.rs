//! Finite stochastic shortest path models and episode simulation.
//!
//! Nonterminal states are `0..p`; the terminal state is the implicit index
//! `p`. Every transition row stores `p + 1` probabilities, the last one being
//! the mass sent to the terminal state. The terminal state has no actions.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{config, Error, Result};

/// Tolerance on probability rows summing to one.
pub const PROB_TOL: f64 = 1e-12;

/// Default cap on episode length.
pub const DEFAULT_STEP_CAP: usize = 1_000_000;

fn check_distribution(row: &[f64], what: &dyn core::fmt::Display) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(config(format!("{what}: invalid probability {p}")));
        }
        sum += p;
    }
    if libm::fabs(sum - 1.0) > PROB_TOL {
        return Err(config(format!("{what}: probabilities sum to {sum}")));
    }
    Ok(())
}

fn offsets_of(actions: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(actions.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &a in actions {
        acc += a;
        offsets.push(acc);
    }
    offsets
}

/// A finite SSP: transition kernel, cost function and initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    num_nonterminal: usize,
    actions: Vec<usize>,
    offsets: Vec<usize>,
    /// `(pair, next)` row-major, `p + 1` columns.
    transition: Vec<f64>,
    cost: Vec<f64>,
    initial: Vec<f64>,
    expected_cost: Vec<f64>,
}

impl MdpModel {
    /// Builds and validates a model.
    ///
    /// `transition[s][a]` and `cost[s][a]` are indexed by next state over
    /// `0..=p`, with index `p` standing for the terminal state.
    pub fn new(
        actions: Vec<usize>,
        transition: Vec<Vec<Vec<f64>>>,
        cost: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let p = actions.len();
        if p == 0 {
            return Err(config("model needs at least one nonterminal state"));
        }
        if transition.len() != p || cost.len() != p {
            return Err(config("transition/cost tables must have one entry per state"));
        }
        if initial.len() != p {
            return Err(config(format!("initial distribution has {} entries, expected {p}", initial.len())));
        }
        check_distribution(&initial, &"initial distribution")?;
        let offsets = offsets_of(&actions);
        let pairs = offsets[p];
        let mut trans_flat = Vec::with_capacity(pairs * (p + 1));
        let mut cost_flat = Vec::with_capacity(pairs * (p + 1));
        for s in 0..p {
            let na = actions[s];
            if na == 0 {
                return Err(config(format!("state {s} has no feasible action")));
            }
            if transition[s].len() != na || cost[s].len() != na {
                return Err(config(format!("state {s}: expected {na} action rows")));
            }
            for a in 0..na {
                let row = &transition[s][a];
                let crow = &cost[s][a];
                if row.len() != p + 1 || crow.len() != p + 1 {
                    return Err(config(format!("state {s} action {a}: rows must have {} entries", p + 1)));
                }
                check_distribution(row, &format_args!("transition ({s},{a})"))?;
                if let Some(c) = crow.iter().find(|c| !c.is_finite()) {
                    return Err(config(format!("state {s} action {a}: non-finite cost {c}")));
                }
                trans_flat.extend_from_slice(row);
                cost_flat.extend_from_slice(crow);
            }
        }
        let expected_cost = (0..pairs)
            .map(|k| {
                let r = k * (p + 1)..(k + 1) * (p + 1);
                trans_flat[r.clone()].iter().zip(&cost_flat[r]).map(|(pr, c)| pr * c).sum()
            })
            .collect();
        Ok(Self {
            num_nonterminal: p,
            actions,
            offsets,
            transition: trans_flat,
            cost: cost_flat,
            initial,
            expected_cost,
        })
    }

    /// Number of nonterminal states `p`.
    pub fn num_states(&self) -> usize {
        self.num_nonterminal
    }

    /// Index of the terminal state.
    pub fn terminal(&self) -> usize {
        self.num_nonterminal
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.actions
    }

    /// Total number of state-action pairs.
    pub fn num_pairs(&self) -> usize {
        self.offsets[self.num_nonterminal]
    }

    /// State-major, action-minor coordinate of `(s, a)`.
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        self.offsets[s] + a
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// `p(·|s,a)` over `0..=p`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let k = self.pair_index(s, a);
        let w = self.num_nonterminal + 1;
        &self.transition[k * w..(k + 1) * w]
    }

    /// `g(s,a,·)` over `0..=p`.
    pub fn cost_row(&self, s: usize, a: usize) -> &[f64] {
        let k = self.pair_index(s, a);
        let w = self.num_nonterminal + 1;
        &self.cost[k * w..(k + 1) * w]
    }

    /// Expected single-stage cost `Σ_j p(j|s,a) g(s,a,j)`, terminal included.
    pub fn expected_cost(&self, s: usize, a: usize) -> f64 {
        self.expected_cost[self.pair_index(s, a)]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial
    }

    /// Same model with every cost multiplied by `factor`.
    pub fn scale_costs(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.cost.iter_mut().for_each(|c| *c *= factor);
        m.expected_cost.iter_mut().for_each(|c| *c *= factor);
        m
    }

    /// Nested tables in the shape accepted by [`MdpModel::new`].
    pub fn transition_table(&self) -> Vec<Vec<Vec<f64>>> {
        self.nested(|s, a| self.transition_row(s, a))
    }

    pub fn cost_table(&self) -> Vec<Vec<Vec<f64>>> {
        self.nested(|s, a| self.cost_row(s, a))
    }

    fn nested<'a>(&'a self, row: impl Fn(usize, usize) -> &'a [f64]) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_nonterminal).map(|s| (0..self.actions[s]).map(|a| row(s, a).to_vec()).collect()).collect()
    }
}

/// Stationary randomized policy: one action distribution per nonterminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryRandPolicy {
    offsets: Vec<usize>,
    probs: Vec<f64>,
}

impl StationaryRandPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let counts: Vec<usize> = rows.iter().map(Vec::len).collect();
        for (s, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(config(format!("policy row {s} is empty")));
            }
            check_distribution(row, &format_args!("policy row {s}"))?;
        }
        Ok(Self { offsets: offsets_of(&counts), probs: rows.into_iter().flatten().collect() })
    }

    /// Trusted constructor for rows already known to be distributions.
    pub(crate) fn from_flat(offsets: Vec<usize>, probs: Vec<f64>) -> Self {
        Self { offsets, probs }
    }

    pub fn uniform(model: &MdpModel) -> Self {
        let probs = model.action_counts().iter().flat_map(|&n| core::iter::repeat_n(1.0 / n as f64, n)).collect();
        Self::from_flat(model.offsets().to_vec(), probs)
    }

    /// Deterministic policy choosing `choice[s]` in state `s`.
    pub fn deterministic(model: &MdpModel, choice: &[usize]) -> Result<Self> {
        if choice.len() != model.num_states() {
            return Err(config("one action per state required"));
        }
        let mut probs = alloc::vec![0.0; model.num_pairs()];
        for (s, &a) in choice.iter().enumerate() {
            if a >= model.num_actions(s) {
                return Err(Error::InfeasibleAction { state: s, action: a });
            }
            probs[model.pair_index(s, a)] = 1.0;
        }
        Ok(Self::from_flat(model.offsets().to_vec(), probs))
    }

    pub fn num_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states()).map(|s| self.row(s).to_vec()).collect()
    }

    /// Errors unless the row shapes match the model's action sets.
    pub fn check_compatible(&self, model: &MdpModel) -> Result<()> {
        if self.offsets != model.offsets() {
            return Err(config(format!(
                "policy shape {:?} does not match model action counts {:?}",
                self.offsets,
                model.offsets()
            )));
        }
        Ok(())
    }
}

/// One transition `(s, a, g, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<Step>,
    /// Sum of step costs, accumulated in step order.
    pub total_return: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `G_k`, the cost from step `k` to the end, by reverse accumulation.
    pub fn tail_returns(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (k, step) in self.steps.iter().enumerate().rev() {
            acc += step.cost;
            out[k] = acc;
        }
        out
    }
}

/// Inverse-CDF draw from `probs` with a single uniform `u ∈ [0,1)`.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Rolls one episode from `ν` under `policy`, stopping at the terminal state
/// or after `step_cap` steps.
///
/// Each step consumes exactly two uniforms (action, then next state) and the
/// initial state one, so streams stay aligned across policies.
pub fn simulate_episode<R: Rng + ?Sized>(
    model: &MdpModel,
    policy: &StationaryRandPolicy,
    rng: &mut R,
    step_cap: usize,
) -> Result<Episode> {
    policy.check_compatible(model)?;
    if step_cap == 0 {
        return Err(config("step cap must be at least 1"));
    }
    let terminal = model.terminal();
    let mut s = sample_index(model.initial_dist(), rng.random::<f64>());
    let mut steps = Vec::new();
    let mut total_return = 0.0;
    loop {
        let a = sample_index(policy.row(s), rng.random::<f64>());
        let next = sample_index(model.transition_row(s, a), rng.random::<f64>());
        let cost = model.cost_row(s, a)[next];
        total_return += cost;
        steps.push(Step { state: s, action: a, cost, next_state: next });
        if next == terminal {
            return Ok(Episode { steps, total_return, terminated: true, truncated: false });
        }
        if steps.len() >= step_cap {
            return Ok(Episode { steps, total_return, terminated: false, truncated: true });
        }
        s = next;
    }
}
