use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Node<T> {
    /// Rows with `x[feature] < threshold` go left, all others right.
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf { weight: T },
}

/// Binary regression tree stored as a flat node array with the root at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegressionTree<T> {
    pub nodes: Vec<Node<T>>,
    /// Deepest root-to-leaf path length actually grown.
    pub depth: usize,
}

impl<T: Scalar> RegressionTree<T> {
    pub fn leaf(weight: T) -> Self {
        Self {
            nodes: vec![Node::Leaf { weight }],
            depth: 0,
        }
    }

    pub fn predict_row(&self, row: &[T]) -> T {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}
