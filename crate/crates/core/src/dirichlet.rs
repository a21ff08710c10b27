//! Dirichlet excess noise on the step probabilities.
//!
//! Two ways of letting θ fluctuate are modelled. In the fast-fluctuator
//! model θ is redrawn before every walk, so a single endpoint follows a
//! Dirichlet-multinomial step count and blocks stay multinomial. In the
//! slow-drift model one θ is shared by all `N` walks of a block, which
//! makes the block law a compound that is only accessible by sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{rebin_probs, sample_endpoints, symmetric_total, Binning, CountsBlock, StepProbs, WalkDistribution};
use crate::sampling::dirichlet3;
use crate::scalar::{log_sum_exp, Real, Scalar};
use crate::special::LnFactorials;
use crate::stream::RngStream;

/// Components below this make the marginals numerically near-atomic.
pub const NEAR_ATOMIC: f64 = 1e-6;

/// Concentration vector `(α−, α0, α+)` of a Dirichlet law on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphaRepr<T>", into = "AlphaRepr<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct DirichletParams<T: Scalar = f64> {
    alpha: [T; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaRepr<T> {
    alpha: [T; 3],
}

impl<T: Scalar> TryFrom<AlphaRepr<T>> for DirichletParams<T> {
    type Error = Error;
    fn try_from(r: AlphaRepr<T>) -> Result<Self> {
        let [m, z, p] = r.alpha;
        DirichletParams::new(m, z, p)
    }
}

impl<T: Scalar> From<DirichletParams<T>> for AlphaRepr<T> {
    fn from(d: DirichletParams<T>) -> Self {
        AlphaRepr { alpha: d.alpha }
    }
}

impl<T: Scalar> DirichletParams<T> {
    pub fn new(alpha_minus: T, alpha_zero: T, alpha_plus: T) -> Result<Self> {
        for (name, v) in [("alpha_minus", &alpha_minus), ("alpha_zero", &alpha_zero), ("alpha_plus", &alpha_plus)] {
            if !(v > &T::zero()) || !v.as_f64().is_finite() {
                return domain(format!("{name} = {:?} must be positive and finite", v));
            }
        }
        Ok(Self {
            alpha: [alpha_minus, alpha_zero, alpha_plus],
        })
    }

    /// `α = α•·(P−, P0, P+)`.
    pub fn from_mean(total: T, mean: &StepProbs<T>) -> Result<Self> {
        let [m, z, p] = mean.as_array();
        Self::new(total.clone() * m, total.clone() * z, total * p)
    }

    /// `[α−, α0, α+]`.
    pub fn alpha(&self) -> [T; 3] {
        self.alpha.clone()
    }

    /// `α•`, summed so that exchanging `α−` and `α+` leaves it unchanged.
    pub fn total(&self) -> T {
        let [m, z, p] = self.alpha();
        (m + p) + z
    }

    /// Mean step probabilities `α̃ = α / α•`.
    pub fn fractions(&self) -> StepProbs<T> {
        let s = self.total();
        let [m, z, p] = self.alpha();
        StepProbs::new(m / s.clone(), z / s.clone(), p / s).expect("positive weights normalize onto the simplex")
    }

    /// Variance of each component, `α̃(1 − α̃)/(1 + α•)`, as `[−, 0, +]`.
    pub fn variances(&self) -> [T; 3] {
        let denom = T::one() + self.total();
        self.fractions()
            .as_array()
            .map(|f| f.clone() * (T::one() - f) / denom.clone())
    }

    /// True when some component is below [`NEAR_ATOMIC`].
    pub fn is_near_atomic(&self) -> bool {
        self.alpha.iter().any(|a| a.as_f64() < NEAR_ATOMIC)
    }

    /// Same fractions, concentration multiplied by `c`.
    pub fn scaled(&self, c: T) -> Result<Self> {
        let [m, z, p] = self.alpha();
        Self::new(m * c.clone(), z * c.clone(), p * c)
    }
}

impl DirichletParams<f64> {
    /// One draw of θ using the given generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> StepProbs {
        let w = dirichlet3(rng, self.alpha);
        StepProbs::from_weights(w).expect("dirichlet draws are normalized")
    }
}

/// Draws θ ~ Dir(α) from a named stream.
pub fn dirichlet_sample(alpha: &DirichletParams, stream: &RngStream) -> StepProbs {
    alpha.sample_with(&mut stream.rng())
}

/// `Σ_{j<k} ln(ã + j/α•)` for `k = 0..=n`: the log rising factorial of
/// `α•ã` with `k·ln α•` removed, which stays accurate as `α• → ∞`.
fn scaled_rising<T: Real>(frac: T, total: T, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = T::zero();
    let mut comp = T::zero();
    out.push(acc);
    for j in 0..n {
        let step = T::from_usize(j).unwrap() / total;
        let y = (frac + step).ln() - comp;
        let s = acc + y;
        comp = (s - acc) - y;
        acc = s;
        out.push(acc);
    }
    out
}

/// Endpoint law of a `t`-step walk whose θ is redrawn from Dir(α) for each
/// walk: `X = K+ − K−` with `K` Dirichlet-multinomial.
///
/// Each term is a ratio of rising factorials evaluated as differences of
/// scaled log tables. Values below 1e-300 are dropped and the result is
/// renormalized, as for [`crate::model::walk_pmf`].
pub fn fastfluct_pmf<T: Real>(alpha: &DirichletParams<T>, t: usize) -> WalkDistribution<T> {
    if t == 0 {
        return WalkDistribution::point_mass();
    }
    let total = alpha.total();
    let [am, a0, ap] = alpha.alpha();
    let lf = LnFactorials::<T>::new(t);
    let lm = scaled_rising(am / total, total, t);
    let l0 = scaled_rising(a0 / total, total, t);
    let lp = scaled_rising(ap / total, total, t);
    // Σ_{j<t} ln(1 + j/α•)
    let mut ltot = T::zero();
    for j in 0..t {
        ltot = ltot + (T::from_usize(j).unwrap() / total).ln_1p();
    }
    let head = lf.get(t) - ltot;
    let floor = T::ln_floor();
    let ti = t as i64;
    let mut probs = vec![T::zero(); 2 * t + 1];
    let mut terms = Vec::with_capacity(t / 2 + 1);
    for x in -ti..=ti {
        // Negative positions are the mirrored walk at −x.
        let (xa, down, up) = if x >= 0 { (x as usize, &lm, &lp) } else { (x.unsigned_abs() as usize, &lp, &lm) };
        terms.clear();
        for l in 0..=(t - xa) / 2 {
            let kp = xa + l;
            let k0 = t - xa - 2 * l;
            let moves = down[l] + up[kp];
            let perm = lf.get(l) + lf.get(kp);
            terms.push(head - perm - lf.get(k0) + moves + l0[k0]);
        }
        let lpx = log_sum_exp(&terms);
        if lpx >= floor {
            probs[(x + ti) as usize] = lpx.exp();
        }
    }
    let s = symmetric_total(&probs);
    for p in probs.iter_mut() {
        *p = *p / s;
    }
    WalkDistribution::new(t, probs).expect("normalized by construction")
}

/// [`fastfluct_pmf`] collapsed onto a binning scheme.
pub fn fastfluct_cells<T: Real>(alpha: &DirichletParams<T>, t: usize, binning: Binning) -> Vec<T> {
    let pmf = fastfluct_pmf(alpha, t);
    match binning {
        Binning::Raw => pmf.probs().to_vec(),
        Binning::Rebinned(b) => rebin_probs(pmf.probs(), t, b),
    }
}

/// One slow-drift block: a single θ ~ Dir(α) shared by `n_samples` walks.
/// Returns the block together with the θ that generated it.
pub fn slowdrift_sample_block_with_theta(
    alpha: &DirichletParams,
    t: usize,
    n_samples: u64,
    stream: &RngStream,
) -> Result<(CountsBlock, StepProbs)> {
    let theta = dirichlet_sample(alpha, &stream.child("theta"));
    let block = sample_endpoints(&theta, t, n_samples, &stream.child("walks"))?;
    Ok((block, theta))
}

pub fn slowdrift_sample_block(alpha: &DirichletParams, t: usize, n_samples: u64, stream: &RngStream) -> Result<CountsBlock> {
    slowdrift_sample_block_with_theta(alpha, t, n_samples, stream).map(|(b, _)| b)
}

/// `A = (α̃− + α̃+) − (α̃− − α̃+)²`, the per-step variance of the mean walk.
fn variance_constant(alpha: &DirichletParams) -> f64 {
    let f = alpha.fractions();
    let (m, p) = (f.p_minus(), f.p_plus());
    (m + p) - (m - p) * (m - p)
}

/// Expected pooled sample variance `E[S]` of positions over `K` slow-drift
/// blocks of `N` walks each (`M = KN`):
///
/// `A/(1+α•) · (t α• (M−1)/M + t² (K−1)/K)`.
///
/// This holds for any θ fractions; it is the law of total variance applied
/// within and between blocks.
pub fn slowdrift_variance(alpha: &DirichletParams, t: usize, n: u64, k: u64) -> Result<f64> {
    if n == 0 || k == 0 {
        return domain("N and K must be at least 1");
    }
    let a = variance_constant(alpha);
    let total = alpha.total();
    let (t, n, k) = (t as f64, n as f64, k as f64);
    let m = n * k;
    Ok(a / (1.0 + total) * (t * total * (m - 1.0) / m + t * t * (k - 1.0) / k))
}

/// Large-`K`, small-error approximation
/// `(⟨P+⟩ + ⟨P−⟩) t + (ΔP+² + ΔP−²) t²`.
///
/// It drops the cross-covariance of P+ and P− and the `(α̃− − α̃+)²`
/// correction that [`slowdrift_variance`] keeps.
pub fn slowdrift_variance_approx(alpha: &DirichletParams, t: usize) -> f64 {
    let f = alpha.fractions();
    let [vm, _, vp] = alpha.variances();
    let t = t as f64;
    (f.p_plus() + f.p_minus()) * t + (vp + vm) * t * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::walk_pmf;

    #[test]
    fn one_step_is_mean() {
        let a = DirichletParams::<f64>::new(2.0, 5.0, 3.0).unwrap();
        let d = fastfluct_pmf(&a, 1);
        for (got, want) in d.probs().iter().zip([0.2, 0.5, 0.3]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_closed_form() {
        // P(K− = 2) = α−(α−+1) / (α•(α•+1)).
        let a = DirichletParams::<f64>::new(2.0, 5.0, 3.0).unwrap();
        let d = fastfluct_pmf(&a, 2);
        assert!((d.get(-2) - 2.0 * 3.0 / (10.0 * 11.0)).abs() < 1e-15);
        // X = 0 from (0,2,0) or (1,0,1).
        let want = 5.0 * 6.0 / 110.0 + 2.0 * 2.0 * 3.0 / 110.0;
        assert!((d.get(0) - want).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(DirichletParams::new(0.0, 1.0, 1.0).is_err());
        assert!(DirichletParams::new(1.0, f64::INFINITY, 1.0).is_err());
        assert!(DirichletParams::new(1e-7, 1.0, 1.0).unwrap().is_near_atomic());
    }

    #[test]
    fn json_shape() {
        let a = DirichletParams::new(90.77198, 1.30960421e6, 27.84843).unwrap();
        let js = serde_json::to_string(&a).unwrap();
        assert_eq!(js, r#"{"alpha":[90.77198,1309604.21,27.84843]}"#);
        assert_eq!(serde_json::from_str::<DirichletParams>(&js).unwrap(), a);
        assert!(serde_json::from_str::<DirichletParams>(r#"{"alpha":[1,0,1]}"#).is_err());
    }

    #[test]
    fn concentrated_limit() {
        let th = StepProbs::<f64>::from_rates(2.130664e-5, 6.924426e-5).unwrap();
        let a = DirichletParams::from_mean(1e12, &th).unwrap();
        for t in 1..=20 {
            let f = fastfluct_pmf(&a, t);
            let w = walk_pmf(&th, t);
            for (x, y) in f.probs().iter().zip(w.probs()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn variance_edge_cases() {
        let a = DirichletParams::new(7e-2, 999.91, 2e-2).unwrap();
        assert_eq!(slowdrift_variance(&a, 10, 1, 1).unwrap(), 0.0);
        assert!(slowdrift_variance(&a, 10, 0, 1).is_err());
        let v1 = slowdrift_variance(&a, 10, 100, 5).unwrap();
        assert!(v1 < slowdrift_variance(&a, 11, 100, 5).unwrap());
        assert!(v1 < slowdrift_variance(&a, 10, 100, 6).unwrap());
    }
}
