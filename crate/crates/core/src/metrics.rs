//! Forecast accuracy and category-adherence scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::WeekGroup;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// `sum |error| / sum |truth|`.
    pub wmape: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekDeviation {
    pub week: u32,
    pub deviation: f64,
}

/// Relative gap `|sum preds - total| / total` per week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adherence {
    pub per_week: Vec<WeekDeviation>,
    pub mean: f64,
    pub max: f64,
}

pub fn product_metrics<T: Scalar>(preds: &[T], truth: &[T]) -> Result<ProductMetrics> {
    if preds.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} truth values",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metric("no rows to score".into()));
    }
    let (mut abs, mut sq, mut scale) = (0.0, 0.0, 0.0);
    for (&p, &t) in preds.iter().zip(truth) {
        let e = (p - t).to_f64_lossy();
        abs += e.abs();
        sq += e * e;
        scale += t.to_f64_lossy().abs();
    }
    if scale == 0.0 {
        return Err(Error::Metric("WMAPE undefined: truth sums to zero".into()));
    }
    let n = preds.len() as f64;
    Ok(ProductMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        wmape: abs / scale,
    })
}

/// Weekly adherence of `preds` to each group's category total. Sums run in
/// member order.
pub fn category_adherence<'a, T: Scalar>(
    preds: &[T],
    groups: impl IntoIterator<Item = &'a WeekGroup<T>>,
) -> Result<Adherence> {
    let mut per_week = Vec::new();
    for g in groups {
        let total = g.category_total.to_f64_lossy();
        if !(total > 0.0) {
            return Err(Error::Metric(format!("week {} has non-positive total {total}", g.week)));
        }
        let mut s = T::zero();
        for &j in &g.members {
            let p = *preds.get(j).ok_or_else(|| {
                Error::Validation(format!("row {j} of week {} has no prediction", g.week))
            })?;
            s = s + p;
        }
        per_week.push(WeekDeviation {
            week: g.week,
            deviation: (s.to_f64_lossy() - total).abs() / total,
        });
    }
    if per_week.is_empty() {
        return Err(Error::Metric("no weeks to score".into()));
    }
    let mean = per_week.iter().map(|w| w.deviation).sum::<f64>() / per_week.len() as f64;
    let max = per_week.iter().map(|w| w.deviation).fold(0.0, f64::max);
    Ok(Adherence { per_week, mean, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_metric_values() {
        let zero = product_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((zero.mae, zero.rmse, zero.wmape), (0.0, 0.0, 0.0));
        let shift = product_metrics(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((shift.mae, shift.rmse), (1.0, 1.0));
        let m = product_metrics(&[2.0, 4.0], &[1.0, 5.0]).unwrap();
        assert_eq!((m.mae, m.rmse), (1.0, 1.0));
        assert!((m.wmape - 2.0 / 6.0).abs() < 1e-15);
        assert!(matches!(product_metrics(&[1.0], &[0.0]), Err(Error::Metric(_))));
        assert!(matches!(product_metrics(&[1.0], &[1.0, 2.0]), Err(Error::Validation(_))));
    }

    fn g(total: f64) -> WeekGroup<f64> {
        WeekGroup {
            week: 3,
            members: vec![0, 1],
            count: 2,
            category_total: total,
            is_future: true,
        }
    }

    #[test]
    fn adherence_values() {
        let a = category_adherence(&[3.0, 3.0], &[g(5.0)]).unwrap();
        assert!((a.per_week[0].deviation - 0.2).abs() < 1e-15);
        let exact = category_adherence(&[2.0, 3.0], &[g(5.0)]).unwrap();
        assert_eq!((exact.mean, exact.max), (0.0, 0.0));
        assert!(matches!(category_adherence(&[1.0, 1.0], &[g(0.0)]), Err(Error::Metric(_))));
    }
}
