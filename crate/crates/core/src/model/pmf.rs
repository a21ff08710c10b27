//! Exact and asymptotic evaluation of the homogeneous walk.
//!
//! After `t` steps with `s` down-steps, `x + s` up-steps and `t − x − 2s`
//! idle steps the walker sits at `x`, so
//!
//! ```text
//! p_x = Σ_s t! / (s! (x+s)! (t−x−2s)!) · P−^s · P0^(t−x−2s) · P+^(x+s)
//! ```
//!
//! Each term is evaluated as `exp` of a log-factorial combination. The
//! summand is log-concave in `s` and the PMF is log-concave in `x` (a
//! convolution of log-concave laws), so both sums start at their mode and
//! stop once further terms cannot matter.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::counts::Binning;
use crate::model::dist::WalkDistribution;
use crate::model::probs::StepProbs;
use crate::scalar::{log_sum_exp, pairwise_sum, xlogy, Real};
use crate::special::LnFactorials;

/// Terms further than this below the largest one (in log units) are dropped.
const TERM_CUTOFF: f64 = 80.0;

struct LogWalk<T> {
    t: usize,
    lf: LnFactorials<T>,
    ln_m: T,
    ln_0: T,
    ln_p: T,
    moves_both: bool,
    idles: bool,
    can_up: bool,
    can_down: bool,
}

impl<T: Real> LogWalk<T> {
    fn new(theta: &StepProbs<T>, t: usize) -> Self {
        let [pm, p0, pp] = theta.as_array();
        // ln P0 via log1p keeps full precision when P0 ≈ 1.
        let ln_0 = if p0 > T::lit(0.5) { (-(pm + pp)).ln_1p() } else { p0.ln() };
        Self {
            t,
            lf: LnFactorials::new(t),
            ln_m: pm.ln(),
            ln_0,
            ln_p: pp.ln(),
            moves_both: pm > T::zero() && pp > T::zero(),
            idles: p0 > T::zero(),
            can_up: pp > T::zero(),
            can_down: pm > T::zero(),
        }
    }

    /// Log of the `s`-th summand for `x ≥ 0`; negative positions are
    /// evaluated as the mirrored walk at `−x` so that reflection symmetry
    /// holds bit for bit.
    #[inline]
    fn log_weight(&self, x: usize, s: usize, ln_down: T, ln_up: T) -> T {
        let kp = x + s;
        let k0 = self.t - kp - s;
        // The down/up pairs are added first so that at x = 0, where they
        // swap under mirroring, the rounding is the same either way.
        let moves = xlogy(s as u64, ln_down) + xlogy(kp as u64, ln_up);
        let perm = self.lf.get(s) + self.lf.get(kp);
        self.lf.get(self.t) - perm - self.lf.get(k0) + moves + xlogy(k0 as u64, self.ln_0)
    }

    fn log_p(&self, x: i64) -> T {
        let t = self.t;
        if x.unsigned_abs() as usize > t {
            return T::neg_infinity();
        }
        let (xa, ln_down, ln_up) = if x >= 0 {
            (x as usize, self.ln_m, self.ln_p)
        } else {
            (x.unsigned_abs() as usize, self.ln_p, self.ln_m)
        };
        let lw = |s: usize| self.log_weight(xa, s, ln_down, ln_up);
        let s_hi = (t - xa) / 2;
        if !self.moves_both {
            return lw(0);
        }
        if !self.idles {
            return if (t - xa) % 2 == 0 { lw(s_hi) } else { T::neg_infinity() };
        }
        let (mut lo, mut hi) = (0, s_hi);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if lw(mid + 1) > lw(mid) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let mode = lo;
        let top = lw(mode);
        let floor = top - T::lit(TERM_CUTOFF);
        let mut terms = vec![top];
        let mut s = mode;
        while s > 0 {
            s -= 1;
            let w = lw(s);
            if w < floor {
                break;
            }
            terms.push(w);
        }
        let mut s = mode;
        while s < s_hi {
            s += 1;
            let w = lw(s);
            if w < floor {
                break;
            }
            terms.push(w);
        }
        log_sum_exp(&terms)
    }

    /// Positions with nonzero probability when P0 > 0.
    fn range(&self) -> (i64, i64) {
        let t = self.t as i64;
        (if self.can_down { -t } else { 0 }, if self.can_up { t } else { 0 })
    }

    /// Mode of the (log-concave) position law; requires P0 > 0.
    fn mode(&self) -> i64 {
        let (mut lo, mut hi) = self.range();
        while lo < hi {
            let mid = lo + (hi - lo).div_euclid(2);
            if self.log_p(mid + 1) > self.log_p(mid) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Exact PMF of the endpoint after `t` steps.
///
/// Values below 1e-300 are set to zero and the result is renormalized.
/// `t = 0` gives the point mass at the origin.
pub fn walk_pmf<T: Real>(theta: &StepProbs<T>, t: usize) -> WalkDistribution<T> {
    if t == 0 {
        return WalkDistribution::point_mass();
    }
    let w = LogWalk::new(theta, t);
    let ti = t as i64;
    let floor = T::ln_floor();
    let mut logs = vec![T::neg_infinity(); 2 * t + 1];
    if !w.idles {
        for x in -ti..=ti {
            logs[(x + ti) as usize] = w.log_p(x);
        }
    } else {
        let (lo, hi) = w.range();
        let mode = w.mode();
        let mut x = mode;
        while x <= hi {
            let lp = w.log_p(x);
            logs[(x + ti) as usize] = lp;
            if lp < floor {
                break;
            }
            x += 1;
        }
        let mut x = mode - 1;
        while x >= lo {
            let lp = w.log_p(x);
            logs[(x + ti) as usize] = lp;
            if lp < floor {
                break;
            }
            x -= 1;
        }
    }
    let mut probs: Vec<T> = logs
        .iter()
        .map(|&l| if l >= floor { l.exp() } else { T::zero() })
        .collect();
    let total = symmetric_total(&probs);
    for p in probs.iter_mut() {
        *p = *p / total;
    }
    WalkDistribution::from_raw_parts(t, probs)
}

/// Cell probabilities of the endpoint law under a binning scheme.
///
/// For `Rebinned(B)` the two outer cells hold the tail masses; these are
/// summed outward from the cut until the remainder is below 1e-17 of the
/// tail, which avoids evaluating the full PMF for large `t`.
pub fn walk_cells<T: Real>(theta: &StepProbs<T>, t: usize, binning: Binning) -> Vec<T> {
    let h = match binning {
        Binning::Raw => return walk_pmf(theta, t).probs().to_vec(),
        Binning::Rebinned(b) => (b - 1) / 2,
    };
    if t == 0 {
        let mut cells = vec![T::zero(); 2 * h + 1];
        cells[h] = T::one();
        return cells;
    }
    let w = LogWalk::new(theta, t);
    let floor = T::ln_floor();
    let hi = h as i64;
    let keep = |lp: T| if lp >= floor { lp.exp() } else { T::zero() };
    let mut cells = vec![T::zero(); 2 * h + 1];
    for x in (1 - hi)..hi {
        cells[(x + hi) as usize] = keep(w.log_p(x));
    }
    cells[0] = tail_mass(&w, -hi, -1, floor);
    cells[2 * h] = tail_mass(&w, hi, 1, floor);
    let total = symmetric_total(&cells);
    for c in cells.iter_mut() {
        *c = *c / total;
    }
    cells
}

/// Sum of a vector centred on the origin, folded as `p_0 + Σ (p_x + p_−x)`
/// so that it is invariant under reversal.
pub(crate) fn symmetric_total<T: Real>(v: &[T]) -> T {
    let n = v.len();
    let mut folded = Vec::with_capacity(n / 2 + 1);
    folded.push(v[n / 2]);
    for k in 1..=n / 2 {
        folded.push(v[n / 2 - k] + v[n / 2 + k]);
    }
    pairwise_sum(&folded)
}

fn tail_mass<T: Real>(w: &LogWalk<T>, start: i64, dir: i64, floor: T) -> T {
    let t = w.t as i64;
    let mut terms: Vec<T> = Vec::new();
    let mut x = start;
    if !w.idles {
        // Parity-alternating support: no log-concavity to exploit.
        while x.abs() <= t {
            let lp = w.log_p(x);
            if lp >= floor {
                terms.push(lp.exp());
            }
            x += dir;
        }
        return pairwise_sum(&terms);
    }
    let mut sum = T::zero();
    let mut prev = T::neg_infinity();
    while x.abs() <= t {
        let lp = w.log_p(x);
        if lp < floor && lp <= prev {
            break;
        }
        let v = if lp >= floor { lp.exp() } else { T::zero() };
        terms.push(v);
        sum = sum + v;
        // Past the mode terms shrink at least geometrically with ratio r,
        // so v / (1 − r) bounds everything still to come.
        if lp < prev {
            let r = (lp - prev).exp();
            if v / (T::one() - r) <= sum * T::lit(1e-17) {
                break;
            }
        }
        prev = lp;
        x += dir;
    }
    pairwise_sum(&terms)
}

/// Which side of the crossover `t ~ (P+P−)^(−1/2)` to approximate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Short,
    Long,
}

/// Asymptotic return probability `p_0^t`.
///
/// Short times: `P0^t` (no error has happened). Long times:
/// `(P0 + 2√(P+P−))^(t+1/2) / ((4πt)^(1/2) (P+P−)^(1/4))`.
pub fn return_probability_asymptotic<T: Real>(theta: &StepProbs<T>, t: usize, regime: Regime) -> Result<T> {
    let [pm, p0, pp] = theta.as_array();
    let tf = T::from_usize(t).unwrap();
    match regime {
        Regime::Short => {
            if p0 == T::zero() {
                return Ok(if t == 0 { T::one() } else { T::zero() });
            }
            let ln_0 = if p0 > T::lit(0.5) { (-(pm + pp)).ln_1p() } else { p0.ln() };
            Ok((tf * ln_0).exp())
        }
        Regime::Long => {
            let prod = pm * pp;
            if !(prod > T::zero()) {
                return domain("long-time asymptotics need P+ > 0 and P− > 0");
            }
            if t == 0 {
                return domain("long-time asymptotics need t > 0");
            }
            let base = p0 + T::lit(2.0) * prod.sqrt();
            let half = T::lit(0.5);
            let four_pi = T::lit(4.0 * std::f64::consts::PI);
            let ln = (tf + half) * base.ln() - half * (four_pi * tf).ln() - T::lit(0.25) * prod.ln();
            Ok(ln.exp())
        }
    }
}

/// Step count `(P+P−)^(−1/2)` separating the two asymptotic regimes.
pub fn crossover_scale<T: Real>(theta: &StepProbs<T>) -> T {
    (theta.p_plus() * theta.p_minus()).sqrt().recip()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn one_step_law() {
        let th = StepProbs::new(0.2, 0.5, 0.3).unwrap();
        let d = walk_pmf(&th, 1);
        assert!(close(d.get(-1), 0.2, 1e-15) && close(d.get(0), 0.5, 1e-15) && close(d.get(1), 0.3, 1e-15));
    }

    #[test]
    fn no_idle_parity() {
        let th = StepProbs::new(0.5, 0.0, 0.5).unwrap();
        let d = walk_pmf(&th, 2);
        for (got, want) in d.probs().iter().zip([0.25, 0.0, 0.5, 0.0, 0.25]) {
            assert!(close(*got, want, 1e-15));
        }
    }

    #[test]
    fn one_sided_walks() {
        let th = StepProbs::new(0.0, 0.6, 0.4).unwrap();
        let d = walk_pmf(&th, 3);
        assert!(close(d.get(3), 0.064, 1e-15));
        assert!(close(d.get(0), 0.216, 1e-15));
        assert_eq!(d.get(-1), 0.0);
        let d = walk_pmf(&StepProbs::<f64>::identity(), 5);
        assert_eq!(d.get(0), 1.0);
    }

    #[test]
    fn zero_steps_is_point_mass() {
        let th = StepProbs::new(0.2, 0.5, 0.3).unwrap();
        assert_eq!(walk_pmf(&th, 0).probs(), &[1.0]);
    }

    #[test]
    fn cells_match_rebinned_pmf() {
        let th = StepProbs::new(0.07, 0.9, 0.03).unwrap();
        for t in [1usize, 2, 5, 40] {
            let d = walk_pmf(&th, t);
            let cells = walk_cells(&th, t, Binning::Rebinned(5));
            let want = crate::model::counts::rebin_probs(d.probs(), t, 5);
            for (a, b) in cells.iter().zip(&want) {
                assert!(close(*a, *b, 1e-15), "t={t}: {cells:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn short_regime_examples() {
        let th = StepProbs::<f64>::identity();
        assert_eq!(return_probability_asymptotic(&th, 17, Regime::Short).unwrap(), 1.0);
        assert!(return_probability_asymptotic(&th, 17, Regime::Long).is_err());
    }
}
