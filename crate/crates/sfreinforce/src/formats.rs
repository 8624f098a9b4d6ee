//! JSON schemas for models and parameter vectors.
//!
//! Model file:
//!
//! ```json
//! {
//!   "p": 2,
//!   "actions": [2, 1],
//!   "transitions": [[[0.1, 0.4, 0.5], [0.0, 0.0, 1.0]], [[0.3, 0.2, 0.5]]],
//!   "costs":       [[[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]], [[0.5, 0.5, 0.5]]],
//!   "nu": [0.5, 0.5]
//! }
//! ```
//!
//! `transitions[s][a]` and `costs[s][a]` have `p + 1` entries; the last one is
//! the terminal state. Probabilities are validated on load.
//!
//! Parameter file: `{"theta": [...], "index_map": [[s, a], ...]}`, state-major
//! and action-minor. A bare JSON array of logits is also accepted on load.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sfreinforce_core::{MdpModel, ParamPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub p: usize,
    pub actions: Vec<usize>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub costs: Vec<Vec<Vec<f64>>>,
    pub nu: Vec<f64>,
}

impl ModelFile {
    pub fn from_model(model: &MdpModel) -> Self {
        Self {
            p: model.num_states(),
            actions: model.action_counts().to_vec(),
            transitions: model.transition_table(),
            costs: model.cost_table(),
            nu: model.initial_dist().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<MdpModel> {
        if self.p != self.actions.len() {
            bail!("\"p\" is {} but \"actions\" lists {} states", self.p, self.actions.len());
        }
        Ok(MdpModel::new(self.actions, self.transitions, self.costs, self.nu)?)
    }
}

pub fn model_from_json(text: &str) -> Result<MdpModel> {
    serde_json::from_str::<ModelFile>(text).context("parsing model JSON")?.into_model()
}

pub fn model_to_json(model: &MdpModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model serialises")
}

pub fn load_model(path: &Path) -> Result<MdpModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    model_from_json(&text).with_context(|| format!("loading model {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub index_map: Vec<[usize; 2]>,
}

impl ParamsFile {
    pub fn from_policy(policy: &ParamPolicy) -> Self {
        Self {
            theta: policy.theta().to_vec(),
            index_map: policy.index_map().into_iter().map(|(s, a)| [s, a]).collect(),
        }
    }
}

pub fn params_to_json(policy: &ParamPolicy) -> String {
    serde_json::to_string_pretty(&ParamsFile::from_policy(policy)).expect("params serialise")
}

/// Parses either a [`ParamsFile`] object or a bare array; a non-empty
/// `index_map` must match `expected`.
pub fn params_from_json(text: &str, expected: &[(usize, usize)]) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Bare(Vec<f64>),
        Full(ParamsFile),
    }
    let file = match serde_json::from_str::<Either>(text).context("parsing parameter JSON")? {
        Either::Bare(theta) => ParamsFile { theta, index_map: Vec::new() },
        Either::Full(f) => f,
    };
    if file.theta.len() != expected.len() {
        bail!("parameter vector has {} entries, model needs {}", file.theta.len(), expected.len());
    }
    if !file.index_map.is_empty() {
        let ok = file.index_map.len() == expected.len()
            && file.index_map.iter().zip(expected).all(|(m, e)| m[0] == e.0 && m[1] == e.1);
        if !ok {
            bail!("index_map does not match the model's state-major, action-minor layout");
        }
    }
    Ok(file.theta)
}

pub fn load_params(path: &Path, expected: &[(usize, usize)]) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    params_from_json(&text, expected)
}
