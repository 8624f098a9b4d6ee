//! Box-constrained tabular softmax policies.
//!
//! Coordinates are ordered state-major, action-minor: the logit of `(s, a)`
//! lives at `offsets[s] + a`, the same layout as [`MdpModel::pair_index`].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{config, Error, Result};
use crate::mdp::{MdpModel, StationaryRandPolicy};

/// Default half-width of the parameter box.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 10.0;

/// The rectangle `Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(config("box bounds must be nonempty and of equal length"));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(config(format!("box coordinate {i}: need finite lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^d`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(alloc::vec![lo; d], alloc::vec![hi; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(config(format!("vector of length {} projected onto {}-dim box", x.len(), self.dim())));
        }
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = hi.min(lo.max(*xi));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| lo <= v && v <= hi)
    }

    /// Number of coordinates of `x` sitting on a face of the box.
    pub fn active_count(&self, x: &[f64]) -> usize {
        x.iter().zip(&self.lower).zip(&self.upper).filter(|((v, lo), hi)| v <= lo || v >= hi).count()
    }
}

/// Whether a perturbed parameter is clamped back into the box before the
/// rollout uses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PerturbationMode {
    /// Roll out at `θ + δΔ` as is.
    #[default]
    Unprojected,
    /// Roll out at `Γ(θ + δΔ)`.
    Projected,
}

/// Softmax into `out`, subtracting the max logit first.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite logit {l}")));
        }
        max = max.max(l);
    }
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = libm::exp(l - max);
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
    Ok(())
}

/// Tabular softmax policy `φ_θ` with `θ` confined to a box.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPolicy {
    theta: Vec<f64>,
    bounds: BoxConstraint,
    offsets: Vec<usize>,
    perturbation: PerturbationMode,
}

impl ParamPolicy {
    /// `theta` is projected onto `bounds`.
    pub fn new(model: &MdpModel, theta: Vec<f64>, bounds: BoxConstraint) -> Result<Self> {
        let d = model.num_pairs();
        if theta.len() != d || bounds.dim() != d {
            return Err(config(format!(
                "parameter dimension {} / box dimension {} do not match the model's {d} state-action pairs",
                theta.len(),
                bounds.dim()
            )));
        }
        let mut policy =
            Self { theta, bounds, offsets: model.offsets().to_vec(), perturbation: PerturbationMode::default() };
        policy.bounds.project_in_place(&mut policy.theta)?;
        Ok(policy)
    }

    /// All-zero logits (uniform policy) in the default box `[−10, 10]^d`.
    pub fn zeros(model: &MdpModel) -> Self {
        let d = model.num_pairs();
        let bounds =
            BoxConstraint::cube(d, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH).expect("default box is valid");
        Self::new(model, alloc::vec![0.0; d], bounds).expect("dimensions agree")
    }

    pub fn with_perturbation(mut self, mode: PerturbationMode) -> Self {
        self.perturbation = mode;
        self
    }

    pub fn perturbation(&self) -> PerturbationMode {
        self.perturbation
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn bounds(&self) -> &BoxConstraint {
        &self.bounds
    }

    pub fn num_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    /// Coordinate of the `(s, a)` logit.
    pub fn coord(&self, s: usize, a: usize) -> usize {
        self.offsets[s] + a
    }

    /// `(state, action)` for every coordinate, in order.
    pub fn index_map(&self) -> Vec<(usize, usize)> {
        (0..self.num_states()).flat_map(|s| (0..self.num_actions(s)).map(move |a| (s, a))).collect()
    }

    /// Overwrites `θ` with `Γ(theta)`.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        let projected = self.bounds.project(theta)?;
        self.theta = projected;
        Ok(())
    }

    /// The parameter a rollout uses for perturbation `direction` at scale
    /// `delta`, honoring [`PerturbationMode`].
    pub fn perturbed(&self, delta: f64, direction: &[f64]) -> Result<Vec<f64>> {
        if direction.len() != self.dim() {
            return Err(config("perturbation length does not match parameter dimension"));
        }
        let mut x: Vec<f64> = self.theta.iter().zip(direction).map(|(t, d)| t + delta * d).collect();
        if self.perturbation == PerturbationMode::Projected {
            self.bounds.project_in_place(&mut x)?;
        }
        Ok(x)
    }

    fn params<'a>(&'a self, at: Option<&'a [f64]>) -> Result<&'a [f64]> {
        match at {
            Some(x) if x.len() != self.dim() => {
                Err(config(format!("parameter of length {} for a {}-dim policy", x.len(), self.dim())))
            }
            Some(x) => Ok(x),
            None => Ok(&self.theta),
        }
    }

    /// `φ(s, ·)` at `θ`, or at `at` (used verbatim, not projected).
    pub fn action_dist(&self, at: Option<&[f64]>, s: usize) -> Result<Vec<f64>> {
        let x = self.params(at)?;
        if s >= self.num_states() {
            return Err(config(format!("state {s} out of range")));
        }
        let block = &x[self.offsets[s]..self.offsets[s + 1]];
        let mut out = alloc::vec![0.0; block.len()];
        softmax_into(block, &mut out)?;
        Ok(out)
    }

    /// `∇_θ log φ_θ(s, a)`: `[b = a] − φ(s, b)` on the block of `s`, zero elsewhere.
    pub fn score(&self, s: usize, a: usize) -> Result<Vec<f64>> {
        let mut out = alloc::vec![0.0; self.dim()];
        let probs = self.action_dist(None, s)?;
        self.add_score(s, a, &probs, 1.0, &mut out)?;
        Ok(out)
    }

    /// `out += scale · score(s, a)` given the row `probs = φ(s, ·)`.
    pub(crate) fn add_score(&self, s: usize, a: usize, probs: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        if a >= self.num_actions(s) {
            return Err(Error::InfeasibleAction { state: s, action: a });
        }
        let base = self.offsets[s];
        for (b, &pb) in probs.iter().enumerate() {
            let indicator = if b == a { 1.0 } else { 0.0 };
            out[base + b] += scale * (indicator - pb);
        }
        Ok(())
    }

    /// Row-stochastic table for the solvers and the simulator.
    pub fn materialize(&self, at: Option<&[f64]>) -> Result<StationaryRandPolicy> {
        let x = self.params(at)?;
        let mut probs = alloc::vec![0.0; x.len()];
        for s in 0..self.num_states() {
            let r = self.offsets[s]..self.offsets[s + 1];
            softmax_into(&x[r.clone()], &mut probs[r])?;
        }
        Ok(StationaryRandPolicy::from_flat(self.offsets.clone(), probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::two_exits;
    use crate::mdp::MdpModel;
    use alloc::vec;
    use proptest::prelude::*;

    fn two_by_two() -> MdpModel {
        MdpModel::new(
            vec![2, 2],
            vec![vec![vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.8]], vec![vec![0.4, 0.1, 0.5], vec![0.0, 0.5, 0.5]]],
            vec![vec![vec![1.0; 3]; 2]; 2],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let b = BoxConstraint::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(b.project(&[0.5, -0.3]).unwrap(), vec![0.5, -0.3]);
        assert_eq!(b.project(&[3.0, -7.0]).unwrap(), vec![1.0, -1.0]);
        assert!(b.project(&[1.0]).is_err());
    }

    #[test]
    fn box_validation() {
        assert!(BoxConstraint::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxConstraint::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(BoxConstraint::new(vec![], vec![]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let m = two_exits();
        let b = BoxConstraint::cube(2, -10.0, 10.0).unwrap();
        let pol = ParamPolicy::new(&m, vec![0.0, 0.0], b.clone()).unwrap();
        assert_eq!(pol.action_dist(None, 0).unwrap(), vec![0.5, 0.5]);
        let ln3 = libm::log(3.0);
        let p = pol.action_dist(Some(&[0.0, ln3]), 0).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let shifted = pol.action_dist(Some(&[100.0, 100.0 + ln3]), 0).unwrap();
        assert!((shifted[0] - p[0]).abs() < 1e-15);
        assert!(pol.action_dist(Some(&[f64::NAN, 0.0]), 0).is_err());
    }

    #[test]
    fn score_examples() {
        let m = two_exits();
        let pol = ParamPolicy::zeros(&m);
        assert_eq!(pol.score(0, 0).unwrap(), vec![0.5, -0.5]);
        assert!(matches!(pol.score(0, 2), Err(Error::InfeasibleAction { state: 0, action: 2 })));
    }

    #[test]
    fn score_matches_finite_difference() {
        let m = two_by_two();
        let b = BoxConstraint::cube(4, -10.0, 10.0).unwrap();
        let pol = ParamPolicy::new(&m, vec![0.3, -0.7, 1.1, 0.2], b).unwrap();
        let h = 1e-6;
        for s in 0..2 {
            for a in 0..2 {
                let score = pol.score(s, a).unwrap();
                for i in 0..4 {
                    let mut up = pol.theta().to_vec();
                    let mut dn = pol.theta().to_vec();
                    up[i] += h;
                    dn[i] -= h;
                    let lp = libm::log(pol.action_dist(Some(&up), s).unwrap()[a]);
                    let lm = libm::log(pol.action_dist(Some(&dn), s).unwrap()[a]);
                    let fd = (lp - lm) / (2.0 * h);
                    assert!((fd - score[i]).abs() < 1e-6, "s{s} a{a} i{i}: {fd} vs {}", score[i]);
                }
            }
        }
    }

    #[test]
    fn materialize_examples() {
        let m = two_by_two();
        let pol = ParamPolicy::zeros(&m);
        let table = pol.materialize(None).unwrap();
        assert_eq!(table.row(0), &[0.5, 0.5]);
        assert_eq!(table, StationaryRandPolicy::uniform(&m));
        let sat = pol.materialize(Some(&[20.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(sat.row(0)[0] > 1.0 - 1e-8);
        assert_eq!(pol.materialize(Some(pol.theta())).unwrap(), table);
    }

    #[test]
    fn constructor_projects_and_perturbation_modes() {
        let m = two_exits();
        let b = BoxConstraint::cube(2, -1.0, 1.0).unwrap();
        let pol = ParamPolicy::new(&m, vec![5.0, 0.0], b).unwrap();
        assert_eq!(pol.theta(), &[1.0, 0.0]);
        assert_eq!(pol.perturbed(1.0, &[1.0, 2.0]).unwrap(), vec![2.0, 2.0]);
        let projected = pol.clone().with_perturbation(PerturbationMode::Projected);
        assert_eq!(projected.perturbed(1.0, &[1.0, 2.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pol.index_map(), vec![(0, 0), (0, 1)]);
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            x in proptest::collection::vec(-50.0f64..50.0, 4),
            y in proptest::collection::vec(-50.0f64..50.0, 4),
        ) {
            let b = BoxConstraint::new(vec![-1.0, -2.0, 0.0, -10.0], vec![1.0, 3.0, 0.5, 10.0]).unwrap();
            let px = b.project(&x).unwrap();
            prop_assert!(b.contains(&px));
            prop_assert_eq!(b.project(&px).unwrap(), px.clone());
            let py = b.project(&y).unwrap();
            let dp: f64 = px.iter().zip(&py).map(|(a, c)| (a - c) * (a - c)).sum();
            let dx: f64 = x.iter().zip(&y).map(|(a, c)| (a - c) * (a - c)).sum();
            prop_assert!(dp <= dx + 1e-12);
        }

        #[test]
        fn softmax_rows_are_distributions(theta in proptest::collection::vec(-500.0f64..500.0, 4)) {
            let m = two_by_two();
            let pol = ParamPolicy::zeros(&m);
            for s in 0..2 {
                let p = pol.action_dist(Some(&theta), s).unwrap();
                prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn score_has_zero_mean(theta in proptest::collection::vec(-10.0f64..10.0, 4)) {
            let m = two_by_two();
            let b = BoxConstraint::cube(4, -10.0, 10.0).unwrap();
            let pol = ParamPolicy::new(&m, theta, b).unwrap();
            for s in 0..2 {
                let probs = pol.action_dist(None, s).unwrap();
                let mut mean = [0.0; 4];
                for (a, &pa) in probs.iter().enumerate() {
                    for (acc, v) in mean.iter_mut().zip(pol.score(s, a).unwrap()) {
                        *acc += pa * v;
                    }
                }
                prop_assert!(mean.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }
}
