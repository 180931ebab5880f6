//! Floating-point abstraction shared by the embedding tables, the reference
//! model and the loss functions.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Real scalar the numeric code is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` constant.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// In-place softmax.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest value among `candidates` (ties go to the earliest candidate).
pub fn argmax_over<T: Scalar>(row: &[T], candidates: &[u32]) -> Option<u32> {
    let mut best: Option<(u32, T)> = None;
    for &id in candidates {
        let v = row[id as usize];
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((id, v)),
        }
    }
    best.map(|(id, _)| id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive_on_small_values() {
        let xs = [0.1f64, -0.3, 2.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_is_stable_for_large_inputs() {
        let xs = [1000.0f32, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2f32.ln())).abs() < 1e-3);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let row = [0.0f64, 3.0, 3.0, 1.0];
        assert_eq!(argmax_over(&row, &[0, 2, 1]), Some(2));
        assert_eq!(argmax_over::<f64>(&row, &[]), None);
    }
}
