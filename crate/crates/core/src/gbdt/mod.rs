//! Second-order gradient-boosted regression trees.
//!
//! The learner is objective-agnostic: anything implementing [`Objective`]
//! can be boosted, including losses that couple samples through week groups.
//! Each round asks the objective for per-sample gradient/Hessian pairs at the
//! current predictions, grows one tree by exact greedy search on the Newton
//! gain, and adds `learning_rate * tree` to the ensemble.

mod persist;
mod split;
mod tree;

use serde::{Deserialize, Serialize};

pub use persist::{load_model, load_model_file, save_model, save_model_file, MODEL_FORMAT, MODEL_VERSION};
pub use split::{find_best_split, leaf_weight, midpoint, split_gain, SplitCandidate};
pub use tree::{Node, RegressionTree};

use crate::error::{Error, Result};
use crate::exact_sum::exact_sum;
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

/// First and (diagonal) second derivative of the loss for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradHess<T> {
    pub grad: T,
    pub hess: T,
}

/// A training loss as seen by the boosting engine.
///
/// Implementations see the whole prediction vector, so a sample's gradient
/// may depend on other samples (e.g. through a shared weekly total).
pub trait Objective<T: Scalar>: Sync {
    /// Number of training rows the objective is defined on.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Initial prediction shared by every row.
    fn base_score(&self) -> T;

    fn loss(&self, preds: &[T]) -> Result<T>;

    fn gradhess(&self, preds: &[T]) -> Result<Vec<GradHess<T>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T> {
    pub num_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: T,
    /// L2 penalty on leaf weights.
    pub lambda: T,
    /// Minimum Hessian sum in each child of a split.
    pub min_child_weight: T,
    /// A split is kept only if its gain is strictly above this.
    pub min_gain: T,
    /// Recorded for reproducibility; training itself draws no random numbers.
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            num_rounds: 300,
            max_depth: 6,
            learning_rate: T::of(0.1),
            lambda: T::zero(),
            min_child_weight: T::zero(),
            min_gain: T::zero(),
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_rounds == 0 {
            return bad("num_rounds must be positive".into());
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive".into());
        }
        if !(self.learning_rate > T::zero() && self.learning_rate <= T::one()) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("min_child_weight", self.min_child_weight),
            ("min_gain", self.min_gain),
        ] {
            if !(v >= T::zero() && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Additive tree ensemble: `base_score + learning_rate * sum_t tree_t(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GbdtModel<T> {
    pub base_score: T,
    pub learning_rate: T,
    pub feature_count: usize,
    pub trees: Vec<RegressionTree<T>>,
}

impl<T: Scalar> GbdtModel<T> {
    pub fn predict_row(&self, row: &[T]) -> T {
        let mut acc = T::zero();
        for tree in &self.trees {
            acc = acc + tree.predict_row(row);
        }
        self.base_score + self.learning_rate * acc
    }

    pub fn predict(&self, features: &FeatureMatrix<T>) -> Result<Vec<T>> {
        if features.cols() != self.feature_count {
            return Err(Error::Validation(format!(
                "model expects {} features, got {}",
                self.feature_count,
                features.cols()
            )));
        }
        Ok((0..features.rows()).map(|r| self.predict_row(features.row(r))).collect())
    }
}

/// Result of [`fit`]: the model, the objective's loss before training and after
/// each round, and the final in-sample predictions.
#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    pub model: GbdtModel<T>,
    pub loss_curve: Vec<T>,
    pub predictions: Vec<T>,
}

pub fn predict<T: Scalar>(model: &GbdtModel<T>, features: &FeatureMatrix<T>) -> Result<Vec<T>> {
    model.predict(features)
}

pub fn fit<T: Scalar, O: Objective<T> + ?Sized>(
    features: &FeatureMatrix<T>,
    objective: &O,
    config: &TrainConfig<T>,
) -> Result<FitOutcome<T>> {
    config.validate()?;
    let n = objective.len();
    if n == 0 {
        return Err(Error::Validation("cannot fit on zero rows".into()));
    }
    if features.rows() != n {
        return Err(Error::Validation(format!(
            "objective covers {n} rows but the feature matrix has {}",
            features.rows()
        )));
    }
    let base = objective.base_score();
    if !base.is_finite() {
        return Err(Error::Objective(format!("non-finite base score {base}")));
    }
    let lr = config.learning_rate;
    let mut tree_sum = vec![T::zero(); n];
    let mut preds = vec![base; n];
    let mut loss_curve = Vec::with_capacity(config.num_rounds + 1);
    loss_curve.push(objective.loss(&preds)?);
    let mut trees = Vec::with_capacity(config.num_rounds);
    let all_rows: Vec<usize> = (0..n).collect();

    for _ in 0..config.num_rounds {
        let gh = objective.gradhess(&preds)?;
        check_gradhess(&gh, n)?;
        let mut grower = Grower {
            features,
            gh: &gh,
            config,
            nodes: Vec::new(),
            outputs: vec![T::zero(); n],
            depth: 0,
        };
        grower.grow(all_rows.clone(), 0)?;
        for i in 0..n {
            tree_sum[i] = tree_sum[i] + grower.outputs[i];
            preds[i] = base + lr * tree_sum[i];
        }
        trees.push(RegressionTree {
            nodes: grower.nodes,
            depth: grower.depth,
        });
        loss_curve.push(objective.loss(&preds)?);
    }

    Ok(FitOutcome {
        model: GbdtModel {
            base_score: base,
            learning_rate: lr,
            feature_count: features.cols(),
            trees,
        },
        loss_curve,
        predictions: preds,
    })
}

fn check_gradhess<T: Scalar>(gh: &[GradHess<T>], n: usize) -> Result<()> {
    if gh.len() != n {
        return Err(Error::Objective(format!("objective returned {} pairs for {n} rows", gh.len())));
    }
    for (i, p) in gh.iter().enumerate() {
        if !p.grad.is_finite() {
            return Err(Error::Objective(format!("non-finite gradient at row {i}")));
        }
        if !(p.hess > T::zero() && p.hess.is_finite()) {
            return Err(Error::Objective(format!("non-positive Hessian {} at row {i}", p.hess)));
        }
    }
    Ok(())
}

struct Grower<'a, T> {
    features: &'a FeatureMatrix<T>,
    gh: &'a [GradHess<T>],
    config: &'a TrainConfig<T>,
    nodes: Vec<Node<T>>,
    outputs: Vec<T>,
    depth: usize,
}

impl<T: Scalar> Grower<'_, T> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> Result<usize> {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { weight: T::zero() });
        self.depth = self.depth.max(depth);

        if depth < self.config.max_depth {
            if let Some(split) = find_best_split(&rows, self.gh, self.features, self.config) {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&r| self.features.get(r, split.feature) < split.threshold);
                let left = self.grow(left_rows, depth + 1)?;
                let right = self.grow(right_rows, depth + 1)?;
                self.nodes[idx] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                return Ok(idx);
            }
        }

        let g = exact_sum(rows.iter().map(|&r| self.gh[r].grad));
        let h = exact_sum(rows.iter().map(|&r| self.gh[r].hess));
        let weight = leaf_weight(g, h, self.config.lambda)?;
        for &r in &rows {
            self.outputs[r] = weight;
        }
        self.nodes[idx] = Node::Leaf { weight };
        Ok(idx)
    }
}
