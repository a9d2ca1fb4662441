//! Exact greedy split search with the second-order (Newton) gain.

use rayon::prelude::*;

use super::{GradHess, TrainConfig};
use crate::error::{Error, Result};
use crate::exact_sum::ExactSum;
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate<T> {
    pub feature: usize,
    pub threshold: T,
    pub gain: T,
}

/// Optimal leaf value `-G / (H + lambda)`.
pub fn leaf_weight<T: Scalar>(grad_sum: T, hess_sum: T, lambda: T) -> Result<T> {
    let denom = hess_sum + lambda;
    if denom <= T::zero() {
        return Err(Error::DegenerateLeaf(denom.to_f64_lossy()));
    }
    Ok(-grad_sum / denom)
}

/// Newton gain of splitting a node with sums `(G, H)` into `(G_L, H_L)` and `(G_R, H_R)`.
#[inline]
pub fn split_gain<T: Scalar>(gl: T, hl: T, gr: T, hr: T, g: T, h: T, lambda: T) -> T {
    let half = T::of(0.5);
    half * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

/// Threshold between two consecutive distinct sorted values. Always satisfies
/// `lo < threshold <= hi`.
#[inline]
pub fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let mid = (lo + hi) * T::of(0.5);
    if mid <= lo {
        hi
    } else {
        mid
    }
}

/// Best split of `rows` over all features, or `None` when no candidate beats
/// `min_gain` under the `min_child_weight` constraint. Ties go to the lowest
/// feature index, then the lowest threshold.
pub fn find_best_split<T: Scalar>(
    rows: &[usize],
    gh: &[GradHess<T>],
    features: &FeatureMatrix<T>,
    config: &TrainConfig<T>,
) -> Option<SplitCandidate<T>> {
    if rows.len() < 2 {
        return None;
    }
    let per_feature: Vec<Option<SplitCandidate<T>>> = (0..features.cols())
        .into_par_iter()
        .map(|f| best_for_feature(f, rows, gh, features, config))
        .collect();
    let mut best: Option<SplitCandidate<T>> = None;
    for cand in per_feature.into_iter().flatten() {
        if best.is_none_or(|b| cand.gain > b.gain) {
            best = Some(cand);
        }
    }
    best.filter(|b| b.gain > config.min_gain)
}

fn best_for_feature<T: Scalar>(
    feature: usize,
    rows: &[usize],
    gh: &[GradHess<T>],
    features: &FeatureMatrix<T>,
    config: &TrainConfig<T>,
) -> Option<SplitCandidate<T>> {
    let mut order: Vec<(T, usize)> = rows.iter().map(|&r| (features.get(r, feature), r)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features").then(a.1.cmp(&b.1)));
    if order[0].0 == order[order.len() - 1].0 {
        return None;
    }

    // Right-hand sums for every cut position, each correctly rounded.
    let k = order.len();
    let mut suffix = vec![(T::zero(), T::zero()); k];
    let (mut sg, mut sh) = (ExactSum::new(), ExactSum::new());
    for pos in (0..k).rev() {
        let p = gh[order[pos].1];
        sg.add(p.grad);
        sh.add(p.hess);
        suffix[pos] = (sg.value(), sh.value());
    }
    let (g, h) = suffix[0];
    let lambda = config.lambda;

    let mut best: Option<SplitCandidate<T>> = None;
    let (mut lg, mut lh) = (ExactSum::new(), ExactSum::new());
    for pos in 1..k {
        let p = gh[order[pos - 1].1];
        lg.add(p.grad);
        lh.add(p.hess);
        let (lo, hi) = (order[pos - 1].0, order[pos].0);
        if lo == hi {
            continue;
        }
        let (gl, hl) = (lg.value(), lh.value());
        let (gr, hr) = suffix[pos];
        if hl < config.min_child_weight || hr < config.min_child_weight {
            continue;
        }
        let gain = split_gain(gl, hl, gr, hr, g, h, lambda);
        if best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate {
                feature,
                threshold: midpoint(lo, hi),
                gain,
            });
        }
    }
    best
}
