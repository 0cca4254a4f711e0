//! Scalar abstractions shared by the scoring code.
//!
//! Count-based metrics (ROUGE, corpus fractions) only need field arithmetic and
//! are generic over [`Scalar`], which includes exact rationals. Anything that
//! takes a logarithm or a square root is generic over [`Real`] (`f32`/`f64`).

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num};
use std::fmt::Debug;

/// Field-like scalar that can be built from a count.
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    fn from_count(n: usize) -> Self;
}

impl Scalar for f32 {
    fn from_count(n: usize) -> Self {
        n as f32
    }
}

impl Scalar for f64 {
    fn from_count(n: usize) -> Self {
        n as f64
    }
}

impl Scalar for Ratio<i64> {
    fn from_count(n: usize) -> Self {
        Ratio::from_integer(i64::try_from(n).expect("count exceeds i64"))
    }
}

/// Floating point scalar: f32 or f64.
pub trait Real: Scalar + Float + FromPrimitive {
    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to any float")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Harmonic mean `2pr/(p+r)`, zero when `p + r` is zero.
pub fn harmonic_f1<T: Scalar>(precision: T, recall: T) -> T {
    let sum = precision + recall;
    if sum == T::zero() {
        T::zero()
    } else {
        (T::one() + T::one()) * precision * recall / sum
    }
}

/// `num / den`, zero when `den` is zero.
pub fn ratio_or_zero<T: Scalar>(num: usize, den: usize) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_count(num) / T::from_count(den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_is_exact_on_rationals() {
        let p = Ratio::new(2i64, 3);
        let r = Ratio::new(1i64, 2);
        assert_eq!(harmonic_f1(p, r), Ratio::new(4, 7));
        assert_eq!(harmonic_f1(Ratio::<i64>::from_integer(0), Ratio::from_integer(0)), Ratio::from_integer(0));
    }

    #[test]
    fn ratio_guards_zero_denominator() {
        assert_eq!(ratio_or_zero::<f64>(3, 0), 0.0);
        assert_eq!(ratio_or_zero::<f32>(1, 4), 0.25);
    }
}
