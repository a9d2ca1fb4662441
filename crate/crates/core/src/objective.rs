//! Stage losses of the three-stage cascade and their per-sample derivatives.
//!
//! Notation used below: `n` is the number of rows a loss is defined on, `t`
//! the stage targets, `p` the predictions and, for a week `w` with category
//! total `C_w`, the residual `R_w = C_w - sum_{j in w} p_j`.
//!
//! * Stage 1: `(1/m) sum (t - p)^2` over historical rows.
//! * Stage 2: `(1/n) sum (t - p)^2 + (1/n) sum_w R_w^2`, where the targets are
//!   actuals on historical rows and Stage-1 predictions on future rows.
//! * Stage 3: `(1/n) sum_w R_w^2 + (1/n) sum (p - t)^2`, with targets equal to
//!   the Stage-1 share of each week rescaled to the week's total.
//!
//! The constraint term counts each week once: a per-row penalty
//! `R_{w(i)}^2 / count_{w(i)}` summed over a week's rows collapses to `R_w^2`.
//!
//! Hessians are the exact diagonal of each loss Hessian. The off-diagonal
//! coupling between rows of the same week (`2/n` per pair) is not passed to the
//! tree learner, which consumes one (gradient, Hessian) pair per row.

use crate::error::{Error, Result};
use crate::exact_sum::exact_sum;
use crate::gbdt::{GradHess, Objective};
use crate::panel::WeekGroup;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StageKind {
    Stage1,
    Stage2,
    Stage3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageTargets<T> {
    pub values: Vec<T>,
    pub kind: StageKind,
}

/// Each row's share of its week's Stage-1 aggregate prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioVector<T> {
    pub values: Vec<T>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Validation(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn rows_in<T>(groups: &[WeekGroup<T>]) -> usize {
    groups.iter().map(|g| g.count).sum()
}

/// `R_w = C_w - sum_{j in w} p_j` per group, summed in member order.
pub fn week_residuals<T: Scalar>(groups: &[WeekGroup<T>], preds: &[T]) -> Vec<T> {
    groups
        .iter()
        .map(|g| {
            let mut s = T::zero();
            for &j in &g.members {
                s = s + preds[j];
            }
            g.category_total - s
        })
        .collect()
}

fn mean_square_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + (x - y) * (x - y);
    }
    s
}

/// `(1/n) sum_w R_w^2` over the given groups, with `n` supplied by the caller.
pub fn constraint_term<T: Scalar>(groups: &[WeekGroup<T>], preds: &[T], n: usize) -> T {
    let mut s = T::zero();
    for r in week_residuals(groups, preds) {
        s = s + r * r;
    }
    s / T::of_usize(n)
}

fn check_coupled<T: Scalar>(groups: &[WeekGroup<T>], targets: &StageTargets<T>, preds: &[T], kind: StageKind) -> Result<usize> {
    let n = rows_in(groups);
    if targets.kind != kind {
        return Err(Error::Validation(format!("expected {kind:?} targets, got {:?}", targets.kind)));
    }
    check_len("targets", targets.values.len(), n)?;
    check_len("predictions", preds.len(), n)?;
    Ok(n)
}

pub fn stage1_loss<T: Scalar>(targets: &StageTargets<T>, preds: &[T]) -> Result<T> {
    check_len("predictions", preds.len(), targets.values.len())?;
    let m = targets.values.len();
    Ok(mean_square_diff(&targets.values, preds) / T::of_usize(m))
}

/// `grad = -2 (t - p) / m`, `hess = 2 / m`.
pub fn stage1_gradhess<T: Scalar>(targets: &StageTargets<T>, preds: &[T]) -> Result<Vec<GradHess<T>>> {
    check_len("predictions", preds.len(), targets.values.len())?;
    let m = T::of_usize(targets.values.len());
    let two = T::of(2.0);
    Ok(targets
        .values
        .iter()
        .zip(preds)
        .map(|(&t, &p)| GradHess {
            grad: -two * (t - p) / m,
            hess: two / m,
        })
        .collect())
}

pub fn stage2_loss<T: Scalar>(groups: &[WeekGroup<T>], targets: &StageTargets<T>, preds: &[T]) -> Result<T> {
    let n = check_coupled(groups, targets, preds, StageKind::Stage2)?;
    Ok(mean_square_diff(&targets.values, preds) / T::of_usize(n) + constraint_term(groups, preds, n))
}

/// `grad_j = -2 (t_j - p_j)/n - 2 R_{w(j)}/n`, `hess_j = 4/n`.
pub fn stage2_gradhess<T: Scalar>(groups: &[WeekGroup<T>], targets: &StageTargets<T>, preds: &[T]) -> Result<Vec<GradHess<T>>> {
    let n = check_coupled(groups, targets, preds, StageKind::Stage2)?;
    Ok(coupled_gradhess(groups, &targets.values, preds, n))
}

pub fn stage3_loss<T: Scalar>(groups: &[WeekGroup<T>], targets: &StageTargets<T>, preds: &[T]) -> Result<T> {
    let n = check_coupled(groups, targets, preds, StageKind::Stage3)?;
    Ok(constraint_term(groups, preds, n) + mean_square_diff(preds, &targets.values) / T::of_usize(n))
}

/// `grad_j = -2 R_{w(j)}/n + 2 (p_j - t_j)/n`, `hess_j = 4/n`.
pub fn stage3_gradhess<T: Scalar>(groups: &[WeekGroup<T>], targets: &StageTargets<T>, preds: &[T]) -> Result<Vec<GradHess<T>>> {
    let n = check_coupled(groups, targets, preds, StageKind::Stage3)?;
    Ok(coupled_gradhess(groups, &targets.values, preds, n))
}

// Stage 2 and Stage 3 share one functional form; only their targets differ.
fn coupled_gradhess<T: Scalar>(groups: &[WeekGroup<T>], targets: &[T], preds: &[T], n: usize) -> Vec<GradHess<T>> {
    let nn = T::of_usize(n);
    let two = T::of(2.0);
    let hess = T::of(4.0) / nn;
    let mut out = vec![GradHess { grad: T::zero(), hess }; n];
    for (g, r) in groups.iter().zip(week_residuals(groups, preds)) {
        for &j in &g.members {
            out[j].grad = -two * (targets[j] - preds[j]) / nn - two * r / nn;
        }
    }
    out
}

pub fn constraint_only_loss<T: Scalar>(groups: &[WeekGroup<T>], preds: &[T]) -> Result<T> {
    let n = rows_in(groups);
    check_len("predictions", preds.len(), n)?;
    Ok(constraint_term(groups, preds, n))
}

/// The weekly-sum term in isolation: `grad_j = -2 R_{w(j)}/n`, `hess_j = 2/n`.
pub fn constraint_only_gradhess<T: Scalar>(groups: &[WeekGroup<T>], preds: &[T]) -> Result<Vec<GradHess<T>>> {
    let n = rows_in(groups);
    check_len("predictions", preds.len(), n)?;
    let nn = T::of_usize(n);
    let two = T::of(2.0);
    let mut out = vec![
        GradHess {
            grad: T::zero(),
            hess: two / nn,
        };
        n
    ];
    for (g, r) in groups.iter().zip(week_residuals(groups, preds)) {
        for &j in &g.members {
            out[j].grad = -two * r / nn;
        }
    }
    Ok(out)
}

/// `ratio_i = p_i / sum_{j in w(i)} p_j`.
///
/// A week whose prediction sum is within `1e-9 * (mean |p| + 1)` of zero has no
/// meaningful share and is reported as [`Error::DegenerateRatio`].
pub fn pred_ratio<T: Scalar>(stage1_preds: &[T], groups: &[WeekGroup<T>]) -> Result<RatioVector<T>> {
    check_len("stage-1 predictions", stage1_preds.len(), rows_in(groups))?;
    let mut values = vec![T::zero(); stage1_preds.len()];
    for g in groups {
        let mut sum = T::zero();
        let mut abs = T::zero();
        for &j in &g.members {
            sum = sum + stage1_preds[j];
            abs = abs + stage1_preds[j].abs();
        }
        let eps = T::of(1e-9) * (abs / T::of_usize(g.count) + T::one());
        if !(sum.abs() >= eps) {
            return Err(Error::DegenerateRatio {
                week: g.week,
                sum: sum.to_f64_lossy(),
            });
        }
        for &j in &g.members {
            values[j] = stage1_preds[j] / sum;
        }
    }
    Ok(RatioVector { values })
}

/// Fine-tuning targets: each row's Stage-1 share times its week's total.
pub fn stage3_target<T: Scalar>(ratios: &RatioVector<T>, groups: &[WeekGroup<T>]) -> Result<StageTargets<T>> {
    check_len("ratios", ratios.values.len(), rows_in(groups))?;
    let mut values = vec![T::zero(); ratios.values.len()];
    for g in groups {
        for &j in &g.members {
            values[j] = ratios.values[j] * g.category_total;
        }
    }
    Ok(StageTargets {
        values,
        kind: StageKind::Stage3,
    })
}

/// Squared error against targets on a single (historical) block of rows.
pub struct Stage1Objective<'a, T> {
    targets: &'a StageTargets<T>,
}

impl<'a, T: Scalar> Stage1Objective<'a, T> {
    pub fn new(targets: &'a StageTargets<T>) -> Result<Self> {
        if targets.kind != StageKind::Stage1 {
            return Err(Error::Validation("stage-1 objective needs Stage1 targets".into()));
        }
        Ok(Self { targets })
    }
}

impl<T: Scalar> Objective<T> for Stage1Objective<'_, T> {
    fn len(&self) -> usize {
        self.targets.values.len()
    }

    fn base_score(&self) -> T {
        exact_sum(self.targets.values.iter().copied()) / T::of_usize(self.len())
    }

    fn loss(&self, preds: &[T]) -> Result<T> {
        stage1_loss(self.targets, preds)
    }

    fn gradhess(&self, preds: &[T]) -> Result<Vec<GradHess<T>>> {
        stage1_gradhess(self.targets, preds)
    }
}

/// Group-coupled objective for Stage 2 or Stage 3, chosen by the target kind.
pub struct CoupledObjective<'a, T> {
    groups: &'a [WeekGroup<T>],
    targets: &'a StageTargets<T>,
}

impl<'a, T: Scalar> CoupledObjective<'a, T> {
    pub fn new(groups: &'a [WeekGroup<T>], targets: &'a StageTargets<T>) -> Result<Self> {
        if targets.kind == StageKind::Stage1 {
            return Err(Error::Validation("coupled objective needs Stage2 or Stage3 targets".into()));
        }
        check_len("targets", targets.values.len(), rows_in(groups))?;
        Ok(Self { groups, targets })
    }
}

impl<T: Scalar> Objective<T> for CoupledObjective<'_, T> {
    fn len(&self) -> usize {
        self.targets.values.len()
    }

    fn base_score(&self) -> T {
        exact_sum(self.targets.values.iter().copied()) / T::of_usize(self.len())
    }

    fn loss(&self, preds: &[T]) -> Result<T> {
        match self.targets.kind {
            StageKind::Stage3 => stage3_loss(self.groups, self.targets, preds),
            _ => stage2_loss(self.groups, self.targets, preds),
        }
    }

    fn gradhess(&self, preds: &[T]) -> Result<Vec<GradHess<T>>> {
        match self.targets.kind {
            StageKind::Stage3 => stage3_gradhess(self.groups, self.targets, preds),
            _ => stage2_gradhess(self.groups, self.targets, preds),
        }
    }
}

/// Weekly-sum penalty alone. Its minimiser ignores features entirely, which
/// is what the trivial-solution probe demonstrates.
pub struct ConstraintOnlyObjective<'a, T> {
    groups: &'a [WeekGroup<T>],
    n: usize,
}

impl<'a, T: Scalar> ConstraintOnlyObjective<'a, T> {
    pub fn new(groups: &'a [WeekGroup<T>]) -> Self {
        Self {
            groups,
            n: rows_in(groups),
        }
    }
}

impl<T: Scalar> Objective<T> for ConstraintOnlyObjective<'_, T> {
    fn len(&self) -> usize {
        self.n
    }

    /// Total of all weeks spread evenly over all rows.
    fn base_score(&self) -> T {
        exact_sum(self.groups.iter().map(|g| g.category_total)) / T::of_usize(self.n)
    }

    fn loss(&self, preds: &[T]) -> Result<T> {
        constraint_only_loss(self.groups, preds)
    }

    fn gradhess(&self, preds: &[T]) -> Result<Vec<GradHess<T>>> {
        constraint_only_gradhess(self.groups, preds)
    }
}
