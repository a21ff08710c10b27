//! Scalar abstractions.
//!
//! [`Scalar`] covers anything with field arithmetic and an order, including
//! exact rationals; the CDF-based tools (spread condition, transition
//! recovery, pump composition) only need that much. [`Real`] adds the
//! transcendental functions used by the log-space PMFs and the FFT.

use std::fmt::Debug;

use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};
use rustfft::FftNum;

/// Ordered field element usable as a probability.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Converts an `f64` literal. Exact for binary rationals.
    fn lit(v: f64) -> Self;
    /// Nearest `f64`; `NaN` if not representable.
    fn as_f64(&self) -> f64;
    /// Slack for inequality checks: zero for exact types.
    fn slack() -> Self;
    fn magnitude(&self) -> Self;
}

/// Floating-point scalar with the functions needed for log-space evaluation.
pub trait Real: Scalar + Float + FromPrimitive + FftNum {
    /// Natural log of the smallest probability kept in returned distributions.
    fn ln_floor() -> Self {
        let lf = Self::lit(1e-300).ln();
        let lm = Self::min_positive_value().ln();
        if lf.is_finite() && lf > lm {
            lf
        } else {
            lm
        }
    }

    fn floor_prob() -> Self {
        Self::ln_floor().exp()
    }
}

impl<T: Scalar + Float + FromPrimitive + FftNum> Real for T {}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(&self) -> f64 {
        *self
    }
    fn slack() -> Self {
        1e-12
    }
    fn magnitude(&self) -> Self {
        self.abs()
    }
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(&self) -> f64 {
        *self as f64
    }
    fn slack() -> Self {
        1e-6
    }
    fn magnitude(&self) -> Self {
        self.abs()
    }
}

impl Scalar for BigRational {
    fn lit(v: f64) -> Self {
        BigRational::from_float(v).expect("finite literal")
    }
    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
    fn slack() -> Self {
        <BigRational as num_traits::Zero>::zero()
    }
    fn magnitude(&self) -> Self {
        Signed::abs(self)
    }
}

/// Pairwise (cascade) summation; error grows as O(log n) instead of O(n).
pub fn pairwise_sum<T: Scalar + Copy>(xs: &[T]) -> T {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        let mut acc = T::zero();
        for &x in xs {
            acc = acc + x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// `ln Σ exp(l_i)` with pairwise accumulation of the shifted terms.
pub fn log_sum_exp<T: Real>(logs: &[T]) -> T {
    let m = logs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    if m == T::infinity() {
        return m;
    }
    let terms: Vec<T> = logs.iter().map(|&l| (l - m).exp()).collect();
    m + pairwise_sum(&terms).ln()
}

/// `k·ln p` with the convention `0·ln 0 = 0`.
#[inline]
pub fn xlogy<T: Real>(k: u64, ln_p: T) -> T {
    if k == 0 {
        T::zero()
    } else {
        T::from_u64(k).unwrap() * ln_p
    }
}
