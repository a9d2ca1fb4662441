//! Correctly rounded floating-point summation.
//!
//! Split search compares gains computed from partial gradient sums taken in
//! different orders (per-feature sort orders). Plain accumulation makes those
//! sums depend on the order, so two features inducing the same partition could
//! report gains that differ in the last bit. [`ExactSum`] keeps a
//! non-overlapping expansion of the running total (Shewchuk's algorithm) and
//! rounds once on read, so every partial sum is a function of the multiset of
//! addends only.

use crate::scalar::Scalar;

#[derive(Clone, Debug, Default)]
pub struct ExactSum<T> {
    partials: Vec<T>,
}

impl<T: Scalar> ExactSum<T> {
    pub fn new() -> Self {
        Self {
            partials: Vec::new(),
        }
    }

    pub fn add(&mut self, value: T) {
        let mut x = value;
        let mut kept = 0;
        for k in 0..self.partials.len() {
            let mut y = self.partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != T::zero() {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    /// The exact running total rounded to nearest, ties to even.
    pub fn value(&self) -> T {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return T::zero();
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = T::zero();
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != T::zero() {
                break;
            }
        }
        // Half-way case: the remaining partials decide the rounding direction.
        if n > 0 && ((lo < T::zero() && p[n - 1] < T::zero()) || (lo > T::zero() && p[n - 1] > T::zero())) {
            let y = lo + lo;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl<T: Scalar> FromIterator<T> for ExactSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = ExactSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Correctly rounded sum of `values`.
pub fn exact_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().collect::<ExactSum<T>>().value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancellation_is_exact() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1f64; 10]), 1.0);
        assert_eq!(exact_sum(Vec::<f64>::new()), 0.0);
    }

    #[test]
    fn half_way_rounding_uses_trailing_partials() {
        // 1 + 2^-53 + 2^-106: naive pairwise rounding drops both tails.
        let tiny = 2f64.powi(-53);
        let tinier = 2f64.powi(-106);
        assert_eq!(exact_sum([1.0, tiny, tinier]), 1.0 + 2.0 * tiny);
    }

    #[test]
    fn f32_matches_f64_reference_on_small_integers() {
        let xs: Vec<f32> = (1..=100).map(|i| i as f32 * 0.5).collect();
        assert_eq!(exact_sum(xs), 2525.0);
    }
}
