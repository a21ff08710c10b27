use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;

/// Single-step law of the walk: probabilities of moving by −1, 0 and +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepProbsRepr<T>", bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct StepProbs<T = f64> {
    p_minus: T,
    p_zero: T,
    p_plus: T,
}

#[derive(Deserialize)]
struct StepProbsRepr<T> {
    p_minus: T,
    p_zero: T,
    p_plus: T,
}

impl<T: Scalar> TryFrom<StepProbsRepr<T>> for StepProbs<T> {
    type Error = Error;
    fn try_from(r: StepProbsRepr<T>) -> Result<Self> {
        StepProbs::new(r.p_minus, r.p_zero, r.p_plus)
    }
}

impl<T: Scalar> StepProbs<T> {
    /// Validates simplex membership.
    ///
    /// Sums within 1e-9 of one are renormalized; anything further off, or
    /// any component outside [0, 1], is rejected.
    pub fn new(p_minus: T, p_zero: T, p_plus: T) -> Result<Self> {
        let zero = T::zero();
        let one = T::one();
        for (name, v) in [("p_minus", &p_minus), ("p_zero", &p_zero), ("p_plus", &p_plus)] {
            if !(v >= &zero && v <= &one) {
                return domain(format!("{name} = {:?} outside [0, 1]", v));
            }
        }
        let sum = p_minus.clone() + p_zero.clone() + p_plus.clone();
        let off = (sum.clone() - one.clone()).magnitude();
        if off > T::lit(1e-9) {
            return domain(format!("components sum to {:?}", sum));
        }
        // Sums within rounding of one are kept as given, so printed values
        // read back unchanged.
        if off <= T::slack() * T::lit(1e-3) {
            Ok(Self { p_minus, p_zero, p_plus })
        } else {
            Ok(Self {
                p_minus: p_minus / sum.clone(),
                p_zero: p_zero / sum.clone(),
                p_plus: p_plus / sum,
            })
        }
    }

    /// Builds from the error rates with `P0 = 1 − P+ − P−`.
    pub fn from_rates(p_plus: T, p_minus: T) -> Result<Self> {
        let p_zero = T::one() - p_plus.clone() - p_minus.clone();
        Self::new(p_minus, p_zero, p_plus)
    }

    pub fn identity() -> Self {
        Self {
            p_minus: T::zero(),
            p_zero: T::one(),
            p_plus: T::zero(),
        }
    }

    pub fn p_minus(&self) -> T {
        self.p_minus.clone()
    }

    pub fn p_zero(&self) -> T {
        self.p_zero.clone()
    }

    pub fn p_plus(&self) -> T {
        self.p_plus.clone()
    }

    /// `[P−, P0, P+]`.
    pub fn as_array(&self) -> [T; 3] {
        [self.p_minus(), self.p_zero(), self.p_plus()]
    }

    /// Exchanges P+ and P− (reflection x → −x).
    pub fn mirrored(&self) -> Self {
        Self {
            p_minus: self.p_plus(),
            p_zero: self.p_zero(),
            p_plus: self.p_minus(),
        }
    }

    pub fn to_f64(&self) -> StepProbs<f64> {
        StepProbs {
            p_minus: self.p_minus.as_f64(),
            p_zero: self.p_zero.as_f64(),
            p_plus: self.p_plus.as_f64(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> StepProbs<U> {
        StepProbs {
            p_minus: U::lit(self.p_minus.as_f64()),
            p_zero: U::lit(self.p_zero.as_f64()),
            p_plus: U::lit(self.p_plus.as_f64()),
        }
    }
}

impl StepProbs<f64> {
    /// Normalizes nonnegative weights onto the simplex (used after sampling).
    pub(crate) fn from_weights(w: [f64; 3]) -> Result<Self> {
        let s = w[0] + w[1] + w[2];
        if !(s > 0.0) || !s.is_finite() {
            return domain("weights have no positive finite mass");
        }
        Ok(Self {
            p_minus: w[0] / s,
            p_zero: w[1] / s,
            p_plus: w[2] / s,
        })
    }
}
