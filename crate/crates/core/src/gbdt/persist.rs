//! JSON model persistence.
//!
//! ```json
//! {
//!   "format": "cascadeboost-gbdt",
//!   "version": 1,
//!   "base_score": 12.5,
//!   "learning_rate": 0.1,
//!   "feature_count": 6,
//!   "trees": [
//!     {"depth": 1, "nodes": [
//!       {"kind": "split", "feature": 2, "threshold": 0.5, "left": 1, "right": 2},
//!       {"kind": "leaf", "weight": -1.25},
//!       {"kind": "leaf", "weight": 0.75}
//!     ]}
//!   ]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GbdtModel, Node, RegressionTree};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_FORMAT: &str = "cascadeboost-gbdt";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ModelDoc<T> {
    format: String,
    version: u32,
    base_score: T,
    learning_rate: T,
    feature_count: usize,
    trees: Vec<RegressionTree<T>>,
}

pub fn save_model<T: Scalar>(model: &GbdtModel<T>) -> Result<String> {
    let doc = ModelDoc {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        base_score: model.base_score,
        learning_rate: model.learning_rate,
        feature_count: model.feature_count,
        trees: model.trees.clone(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Persistence(e.to_string()))
}

pub fn load_model<T: Scalar>(json: &str) -> Result<GbdtModel<T>> {
    // Check the version tag first so an unknown version is reported as such,
    // not as whatever schema difference it happens to carry.
    let raw: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::Persistence(format!("malformed model JSON: {e}")))?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_VERSION as u64 => {}
        Some(v) => return Err(Error::Persistence(format!("unsupported model version {v}"))),
        None => return Err(Error::Persistence("model JSON has no version".into())),
    }
    let doc: ModelDoc<T> =
        serde_json::from_value(raw).map_err(|e| Error::Persistence(format!("invalid model document: {e}")))?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::Persistence(format!("unknown model format '{}'", doc.format)));
    }
    if !(doc.learning_rate > T::zero() && doc.learning_rate <= T::one()) || !doc.base_score.is_finite() {
        return Err(Error::Persistence("learning_rate or base_score out of range".into()));
    }
    for (t, tree) in doc.trees.iter().enumerate() {
        check_tree(tree, doc.feature_count).map_err(|msg| Error::Persistence(format!("tree {t}: {msg}")))?;
    }
    Ok(GbdtModel {
        base_score: doc.base_score,
        learning_rate: doc.learning_rate,
        feature_count: doc.feature_count,
        trees: doc.trees,
    })
}

/// Every node reachable exactly once from the root, children after parents.
fn check_tree<T: Scalar>(tree: &RegressionTree<T>, feature_count: usize) -> std::result::Result<(), String> {
    let n = tree.nodes.len();
    if n == 0 {
        return Err("no nodes".into());
    }
    let mut parents = vec![0usize; n];
    for (i, node) in tree.nodes.iter().enumerate() {
        match node {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= feature_count {
                    return Err(format!("node {i} splits on feature {feature} of {feature_count}"));
                }
                if !threshold.is_finite() {
                    return Err(format!("node {i} has a non-finite threshold"));
                }
                for &c in [left, right] {
                    if c <= i || c >= n {
                        return Err(format!("node {i} has invalid child {c}"));
                    }
                    parents[c] += 1;
                }
            }
            Node::Leaf { weight } => {
                if !weight.is_finite() {
                    return Err(format!("leaf {i} has a non-finite weight"));
                }
            }
        }
    }
    if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
        return Err("nodes do not form a tree".into());
    }
    Ok(())
}

pub fn save_model_file<T: Scalar>(model: &GbdtModel<T>, path: &Path) -> Result<()> {
    let json = save_model(model)?;
    std::fs::write(path, json + "\n").map_err(Error::io(path))
}

pub fn load_model_file<T: Scalar>(path: &Path) -> Result<GbdtModel<T>> {
    let json = std::fs::read_to_string(path).map_err(Error::io(path))?;
    load_model(&json)
}
