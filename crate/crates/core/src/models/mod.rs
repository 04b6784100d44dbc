//! Random forest and bidirectional LSTM classifiers.

pub mod forest;
pub mod gradcheck;
pub mod lstm;
pub mod matrix;
pub mod tree;
mod wide;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Vocabulary;

pub use forest::{fit_random_forest, fit_random_forest_jobs, forest_predict, ForestModel, ForestParams};
pub use gradcheck::{check_gradient_at, gradient_check, sample_parameter_indices};
pub use lstm::{
    lstm_cell_step, lstm_fit, lstm_forward, BiLayer, CellParams, EpochStats, Gate, LstmHyper, LstmModel,
    LstmParams, LstmSetup, TrainingCurve,
};
pub use matrix::Matrix;
pub use tree::{fit_decision_tree, gini_impurity, tree_lines, Branch, BranchLine, TreeNode};

/// Version stamped into every serialized model.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Forest,
    Lstm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Forest => "forest",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forest" | "rf" => Ok(ModelKind::Forest),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// A trained classifier of either kind, serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Forest(ForestModel),
    Lstm(LstmModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(_) => ModelKind::Forest,
            Model::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn classes(&self) -> &[usize] {
        match self {
            Model::Forest(m) => &m.classes,
            Model::Lstm(m) => &m.classes,
        }
    }

    pub fn vocab_fingerprint(&self) -> &str {
        match self {
            Model::Forest(m) => &m.vocab_fingerprint,
            Model::Lstm(m) => &m.vocab_fingerprint,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a model document, rejecting any other `format_version`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_format_version(&value)?;
        Ok(serde_json::from_value(value)?)
    }
}

pub(crate) fn check_format_version(value: &serde_json::Value) -> Result<()> {
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(Error::Config(format!(
            "model format_version {v} is not supported (expected {FORMAT_VERSION})"
        ))),
        None => Err(Error::Config("model document has no format_version".into())),
    }
}

/// Branch listing of tree `tree_index` of `model`, which must have been
/// trained against `vocab`.
pub fn export_tree(
    model: &ForestModel,
    tree_index: usize,
    vocab: &Vocabulary,
    max_depth: usize,
) -> Result<Vec<BranchLine>> {
    let found = vocab.fingerprint();
    if model.vocab_fingerprint != found {
        return Err(Error::Fingerprint {
            expected: model.vocab_fingerprint.clone(),
            found,
        });
    }
    let tree = model.trees.get(tree_index).ok_or_else(|| {
        Error::Config(format!(
            "tree index {tree_index} out of range (forest has {})",
            model.trees.len()
        ))
    })?;
    Ok(tree_lines(tree, vocab, max_depth))
}
