//! Step-kernel deconvolution, the spread condition with constructive
//! Markov recovery, and composition of independent pumps.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::io::fmt_g17;
use crate::model::{CountsBlock, WalkDistribution};
use crate::sampling::multinomial;
use crate::scalar::{Real, Scalar};
use crate::stream::RngStream;

/// Spectral modulus of `p_t` below which deconvolution is refused.
pub const ILL_POSED_MODULUS: f64 = 1e-12;

/// Kernel entries in `[−NEGATIVE_TOL, 0)` are clamped; lower ones are rejected.
pub const NEGATIVE_TOL: f64 = 1e-9;

/// Pump distributions may miss unit mass by this much; they are then rescaled.
pub const PUMP_SUM_TOL: f64 = 1e-4;

/// Law of the displacement `j ∈ [−m, m]` applied at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel<T = f64> {
    t: usize,
    probs: Vec<T>,
}

impl<T: Scalar> TransitionKernel<T> {
    /// `probs[i]` is the probability of displacement `i − m`. Entries in
    /// `[−1e-9, 0)` are clamped to zero and the rest renormalized.
    pub fn new(t: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() % 2 == 0 {
            return domain(format!("kernel needs an odd number of entries, got {}", probs.len()));
        }
        let m = (probs.len() / 2) as i64;
        let tol = T::lit(-NEGATIVE_TOL);
        let mut clamped = Vec::with_capacity(probs.len());
        let mut sum = T::zero();
        for (i, p) in probs.into_iter().enumerate() {
            if !(p >= tol) {
                return Err(Error::NegativeKernel {
                    j: i as i64 - m,
                    value: p.as_f64(),
                });
            }
            let p = if p < T::zero() { T::zero() } else { p };
            sum = sum + p.clone();
            clamped.push(p);
        }
        if (sum.clone() - T::one()).magnitude() > T::lit(1e-9) {
            return Err(Error::Data(format!("kernel mass {:?} differs from one", sum)));
        }
        let probs = clamped.into_iter().map(|p| p / sum.clone()).collect();
        Ok(Self { t, probs })
    }

    pub fn identity(t: usize) -> Self {
        Self {
            t,
            probs: vec![T::one()],
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn half_width(&self) -> usize {
        self.probs.len() / 2
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn get(&self, j: i64) -> T {
        let m = self.half_width() as i64;
        if j.abs() > m {
            T::zero()
        } else {
            self.probs[(j + m) as usize].clone()
        }
    }

    /// `K ∗ p`, the successor law when every walker moves by `K`.
    pub fn apply(&self, p: &WalkDistribution<T>) -> WalkDistribution<T> {
        let m = self.half_width() as i64;
        let t = p.t() as i64;
        let h = t + m;
        let mut out = vec![T::zero(); (2 * h + 1) as usize];
        for (x, px) in p.iter() {
            for (i, k) in self.probs.iter().enumerate() {
                let y = x + i as i64 - m;
                let c = &mut out[(y + h) as usize];
                *c = c.clone() + px.clone() * k.clone();
            }
        }
        WalkDistribution::from_raw_parts(h as usize, out)
    }

    /// CSV with header `j,P`.
    pub fn to_csv(&self) -> String {
        let m = self.half_width() as i64;
        let mut s = String::from("j,P\n");
        for (i, p) in self.probs.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i as i64 - m, fmt_g17(p.as_f64())));
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
struct KernelJson {
    t: usize,
    probs: std::collections::BTreeMap<i64, f64>,
}

impl Serialize for TransitionKernel<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = self.half_width() as i64;
        KernelJson {
            t: self.t,
            probs: self.probs.iter().enumerate().map(|(i, &p)| (i as i64 - m, p)).collect(),
        }
        .serialize(s)
    }
}

/// Raw deconvolution on the common support `[−M, M]`, `M = max(t, t+1)`
/// of the two inputs. Entries are indexed by `j + M` and are not
/// validated, so sampling noise may leave them slightly negative.
pub fn deconvolve_estimate<T: Real>(p_t: &WalkDistribution<T>, p_t1: &WalkDistribution<T>) -> Result<Vec<T>> {
    let m = p_t.t().max(p_t1.t());
    let len = 2 * m + 1;
    let embed = |p: &WalkDistribution<T>| -> Vec<Complex<T>> {
        let mut v = vec![Complex::new(T::zero(), T::zero()); len];
        for (x, &px) in p.iter() {
            v[x.rem_euclid(len as i64) as usize] = Complex::new(px, T::zero());
        }
        v
    };
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut a = embed(p_t);
    let mut b = embed(p_t1);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (k, (x, y)) in a.iter().zip(b.iter_mut()).enumerate() {
        let modulus = x.norm();
        if modulus.as_f64() < ILL_POSED_MODULUS {
            return Err(Error::IllPosed {
                frequency: k,
                modulus: modulus.as_f64(),
            });
        }
        *y = *y / *x;
    }
    inv.process(&mut b);
    let scale = T::from_usize(len).unwrap();
    // Circular index k holds displacement k (k ≤ M) or k − len.
    Ok((-(m as i64)..=m as i64).map(|j| b[j.rem_euclid(len as i64) as usize].re / scale).collect())
}

/// Step kernel `P^t` with `p^{t+1} = P^t ∗ p^t`, from the ratio of the two
/// discrete Fourier transforms.
pub fn deconvolve_step<T: Real>(p_t: &WalkDistribution<T>, p_t1: &WalkDistribution<T>) -> Result<TransitionKernel<T>> {
    TransitionKernel::new(p_t.t(), deconvolve_estimate(p_t, p_t1)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRates<T = f64> {
    pub p_plus: T,
    pub p_minus: T,
    /// Total mass on `|j| > 1`.
    pub residual_mass: T,
}

pub fn extract_pm<T: Scalar>(kernel: &TransitionKernel<T>) -> StepRates<T> {
    let m = kernel.half_width() as i64;
    let mut residual = T::zero();
    for j in (-m..=m).filter(|j| j.abs() > 1) {
        residual = residual + kernel.get(j);
    }
    StepRates {
        p_plus: kernel.get(1),
        p_minus: kernel.get(-1),
        residual_mass: residual,
    }
}

/// `P±1` and residual mass read off an unvalidated estimate from
/// [`deconvolve_estimate`].
pub fn raw_step_rates<T: Real>(raw: &[T]) -> StepRates<T> {
    let m = (raw.len() / 2) as i64;
    let at = |j: i64| if j.abs() > m { T::zero() } else { raw[(j + m) as usize] };
    let residual = (-m..=m).filter(|j| j.abs() > 1).fold(T::zero(), |a, j| a + at(j));
    StepRates {
        p_plus: at(1),
        p_minus: at(-1),
        residual_mass: residual,
    }
}

/// Cumulative sums of two consecutive laws on a shared range.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPair<T = f64> {
    /// Position of the first entry.
    lo: i64,
    q_t: Vec<T>,
    q_t1: Vec<T>,
}

impl<T: Scalar> CdfPair<T> {
    /// Both CDFs on `[−M−1, M+1]`, one site wider than either support so
    /// the edge inequalities are checked too.
    pub fn new(p_t: &WalkDistribution<T>, p_t1: &WalkDistribution<T>) -> Result<Self> {
        let h = p_t.t().max(p_t1.t()) as i64 + 1;
        let cdf = |p: &WalkDistribution<T>| -> Result<Vec<T>> {
            let mut acc = T::zero();
            let mut out = Vec::with_capacity((2 * h + 1) as usize);
            for x in -h..=h {
                let v = p.get(x);
                if v < T::zero() {
                    return Err(Error::Data(format!("negative probability at x = {x}")));
                }
                acc = acc + v;
                out.push(acc.clone());
            }
            if (acc - T::one()).magnitude() > T::lit(1e-10) {
                return Err(Error::Data("cumulative sums must end at one".into()));
            }
            Ok(out)
        };
        Ok(Self {
            lo: -h,
            q_t: cdf(p_t)?,
            q_t1: cdf(p_t1)?,
        })
    }

    /// `q^t_x`, extended by 0 below and 1 above the stored range.
    pub fn q_t(&self, x: i64) -> T {
        Self::at(&self.q_t, self.lo, x)
    }

    pub fn q_t1(&self, x: i64) -> T {
        Self::at(&self.q_t1, self.lo, x)
    }

    fn at(q: &[T], lo: i64, x: i64) -> T {
        if x < lo {
            T::zero()
        } else if x - lo >= q.len() as i64 {
            T::one()
        } else {
            q[(x - lo) as usize].clone()
        }
    }

    fn range(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.lo + self.q_t.len() as i64 - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub satisfied: bool,
    pub violations: Vec<i64>,
}

/// Checks `q^t_{x−1} ≤ q^{t+1}_x ≤ q^t_{x+1}` at every `x`, up to the
/// scalar's comparison slack.
pub fn spread_check<T: Scalar>(p_t: &WalkDistribution<T>, p_t1: &WalkDistribution<T>) -> Result<SpreadReport> {
    let c = CdfPair::new(p_t, p_t1)?;
    let eps = T::slack();
    let violations: Vec<i64> = c
        .range()
        .filter(|&x| {
            let q = c.q_t1(x);
            c.q_t(x - 1) > q.clone() + eps.clone() || q > c.q_t(x + 1) + eps.clone()
        })
        .collect();
    Ok(SpreadReport {
        satisfied: violations.is_empty(),
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTransition<T = f64> {
    pub x: i64,
    pub p_minus: T,
    pub p_zero: T,
    pub p_plus: T,
    /// `p^t_x = 0`; the site is left as the identity.
    pub inert: bool,
}

/// Position-dependent single-step transitions reproducing `p^{t+1}` from `p^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredTransitions<T = f64> {
    pub t: usize,
    pub sites: Vec<SiteTransition<T>>,
}

impl<T: Scalar> RecoveredTransitions<T> {
    /// Pushes `p` through the site transitions.
    pub fn apply(&self, p: &WalkDistribution<T>) -> WalkDistribution<T> {
        let h = p.t().max(self.sites.iter().map(|s| s.x.unsigned_abs() as usize).max().unwrap_or(0)) + 1;
        let hi = h as i64;
        let mut out = vec![T::zero(); 2 * h + 1];
        let mut add = |y: i64, v: T| {
            let c = &mut out[(y + hi) as usize];
            *c = c.clone() + v;
        };
        for (x, px) in p.iter() {
            match self.sites.iter().find(|s| s.x == x) {
                Some(s) => {
                    add(x - 1, px.clone() * s.p_minus.clone());
                    add(x, px.clone() * s.p_zero.clone());
                    add(x + 1, px.clone() * s.p_plus.clone());
                }
                None => add(x, px.clone()),
            }
        }
        WalkDistribution::from_raw_parts(h, out)
    }

    /// CSV with header `x,P_minus,P_zero,P_plus`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,P_minus,P_zero,P_plus\n");
        for r in &self.sites {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.x,
                fmt_g17(r.p_minus.as_f64()),
                fmt_g17(r.p_zero.as_f64()),
                fmt_g17(r.p_plus.as_f64())
            ));
        }
        s
    }
}

impl RecoveredTransitions<f64> {
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({ "t": self.t, "sites": self.sites })
    }
}

fn pos_part<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Constructive Markov chain for a pair satisfying the spread condition:
/// the net flow across each bond is carried by the site above it (downward
/// flow) or below it (upward flow).
pub fn recover_transitions<T: Scalar>(p_t: &WalkDistribution<T>, p_t1: &WalkDistribution<T>) -> Result<RecoveredTransitions<T>> {
    let report = spread_check(p_t, p_t1)?;
    if !report.satisfied {
        return Err(Error::SpreadViolated {
            violations: report.violations,
        });
    }
    let c = CdfPair::new(p_t, p_t1)?;
    let sites = p_t
        .iter()
        .map(|(x, px)| {
            if !(px > &T::zero()) {
                return SiteTransition {
                    x,
                    p_minus: T::zero(),
                    p_zero: T::one(),
                    p_plus: T::zero(),
                    inert: true,
                };
            }
            let mut down = pos_part(c.q_t1(x - 1) - c.q_t(x - 1)) / px.clone();
            let mut up = pos_part(c.q_t(x) - c.q_t1(x)) / px.clone();
            // Rounding in floating types can push the pair just past one.
            let moved = down.clone() + up.clone();
            if moved > T::one() {
                down = down / moved.clone();
                up = up / moved;
            }
            let stay = pos_part(T::one() - down.clone() - up.clone());
            SiteTransition {
                x,
                p_minus: down,
                p_zero: stay,
                p_plus: up,
                inert: false,
            }
        })
        .collect();
    Ok(RecoveredTransitions { t: p_t.t(), sites })
}

fn check_pump<T: Scalar>(q: &[T], name: &str) -> Result<()> {
    if q.is_empty() {
        return domain(format!("{name} is empty"));
    }
    let mut sum = T::zero();
    for v in q {
        if !(v >= &T::zero()) {
            return domain(format!("{name} has a negative entry {:?}", v));
        }
        sum = sum + v.clone();
    }
    if (sum.clone() - T::one()).magnitude() > T::lit(PUMP_SUM_TOL) {
        return domain(format!("{name} sums to {:?}", sum));
    }
    Ok(())
}

/// Law of the net charge left on a node between two pumps.
///
/// Its mass is the product of the input masses, so it is exactly one only
/// for exactly normalized pumps.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDistribution<T = f64> {
    h: usize,
    probs: Vec<T>,
}

impl<T: Scalar> NodeDistribution<T> {
    pub fn half_width(&self) -> usize {
        self.h
    }

    pub fn get(&self, x: i64) -> T {
        let h = self.h as i64;
        if x.abs() > h {
            T::zero()
        } else {
            self.probs[(x + h) as usize].clone()
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &T)> + '_ {
        let h = self.h as i64;
        self.probs.iter().enumerate().map(move |(i, p)| (i as i64 - h, p))
    }

    pub fn mass(&self) -> T {
        self.probs.iter().fold(T::zero(), |a, p| a + p.clone())
    }

    /// Rescaled to unit mass.
    pub fn normalized(&self) -> WalkDistribution<T> {
        let m = self.mass();
        WalkDistribution::from_raw_parts(self.h, self.probs.iter().map(|p| p.clone() / m.clone()).collect())
    }

    /// CSV with header `x,P`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,P\n");
        for (x, p) in self.iter() {
            s.push_str(&format!("{},{}\n", x, fmt_g17(p.as_f64())));
        }
        s
    }
}

/// Node-charge law `P_x = Σ_m q1_{m+x} q2_m` for two independent pumps
/// feeding and draining one node; `q[m]` is the probability of
/// transporting `m` electrons.
///
/// Inputs may miss unit mass by up to [`PUMP_SUM_TOL`] (published rates
/// are rounded) and are used as given.
pub fn compose_pumps<T: Scalar>(q1: &[T], q2: &[T]) -> Result<NodeDistribution<T>> {
    check_pump(q1, "q1")?;
    check_pump(q2, "q2")?;
    let h = q1.len().max(q2.len()) - 1;
    let hi = h as i64;
    let mut out = vec![T::zero(); 2 * h + 1];
    for x in -hi..=hi {
        let mut acc = T::zero();
        for (m, b) in q2.iter().enumerate() {
            let k = m as i64 + x;
            if (0..q1.len() as i64).contains(&k) {
                acc = acc + q1[k as usize].clone() * b.clone();
            }
        }
        out[(x + hi) as usize] = acc;
    }
    Ok(NodeDistribution { h, probs: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub estimate: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub t: usize,
    pub p_plus: Spread,
    pub p_minus: Spread,
    pub residual_mass: Spread,
    pub n_boot: usize,
    /// Replicates dropped because their spectrum vanished.
    pub n_ill_posed: usize,
}

/// Parametric bootstrap of the deconvolved `P±1`: both raw blocks are
/// resampled from their empirical laws and re-deconvolved.
pub fn deconvolve_bootstrap(
    block_t: &CountsBlock,
    block_t1: &CountsBlock,
    n_boot: usize,
    stream: &RngStream,
) -> Result<BootstrapSummary> {
    let (e0, e1) = (block_t.empirical()?, block_t1.empirical()?);
    let point = raw_step_rates(&deconvolve_estimate(&e0, &e1)?);
    let resample = |e: &WalkDistribution, n: u64, rng: &mut rand_chacha::ChaCha20Rng| -> WalkDistribution {
        let mut z = vec![0u64; e.probs().len()];
        multinomial(rng, n, e.probs(), &mut z);
        let probs = z.iter().map(|&c| c as f64 / n as f64).collect();
        WalkDistribution::from_raw_parts(e.t(), probs)
    };
    let reps: Vec<Option<StepRates>> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child("boot").index(i as u64).rng();
            let a = resample(&e0, block_t.n_samples(), &mut rng);
            let b = resample(&e1, block_t1.n_samples(), &mut rng);
            deconvolve_estimate(&a, &b).ok().map(|k| raw_step_rates(&k))
        })
        .collect();
    let ok: Vec<StepRates> = reps.iter().flatten().copied().collect();
    let spread = |est: f64, f: fn(&StepRates) -> f64| {
        let n = ok.len() as f64;
        let mean = ok.iter().map(f).sum::<f64>() / n;
        let var = ok.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Spread {
            estimate: est,
            mean,
            sd: var.sqrt(),
        }
    };
    Ok(BootstrapSummary {
        t: block_t.t(),
        p_plus: spread(point.p_plus, |r| r.p_plus),
        p_minus: spread(point.p_minus, |r| r.p_minus),
        residual_mass: spread(point.residual_mass, |r| r.residual_mass),
        n_boot,
        n_ill_posed: n_boot - ok.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{walk_pmf, StepProbs};
    use crate::Exact;

    fn dist(t: usize, p: &[f64]) -> WalkDistribution {
        WalkDistribution::new(t, p.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_shift() {
        let p = dist(1, &[0.2, 0.5, 0.3]);
        let k = deconvolve_step(&p, &p).unwrap();
        assert!((k.get(0) - 1.0).abs() < 1e-14);
        assert_eq!(extract_pm(&k).residual_mass.abs() < 1e-14, true);
        let shifted = dist(2, &[0.0, 0.0, 0.2, 0.5, 0.3]);
        let k = deconvolve_step(&p, &shifted).unwrap();
        assert!((k.get(1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn device_a_kernel() {
        let th = StepProbs::from_rates(2.130664e-5, 6.924426e-5).unwrap();
        let k: TransitionKernel = deconvolve_step(&walk_pmf(&th, 5), &walk_pmf(&th, 6)).unwrap();
        let r = extract_pm(&k);
        assert!((r.p_plus - th.p_plus()).abs() < 1e-12);
        assert!((r.p_minus - th.p_minus()).abs() < 1e-12);
        for j in 2..=6 {
            assert!(k.get(j) <= 1e-10 && k.get(-j) <= 1e-10);
        }
    }

    #[test]
    fn ill_posed_spectrum() {
        // (1 + e^{iω})/2 vanishes at ω = π, which an even length would hit;
        // an exact zero needs the symmetric law on [−1, 1] with P0 = 1/3.
        let p = dist(1, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let e = deconvolve_step(&p, &p).unwrap_err();
        assert!(matches!(e, Error::IllPosed { frequency: 1 | 2, .. }));
    }

    #[test]
    fn kernel_validation() {
        assert!(TransitionKernel::new(0, vec![-5e-10, 1.0 + 5e-10, 0.0]).is_ok());
        assert!(matches!(TransitionKernel::new(0, vec![-1e-8, 1.0, 1e-8]), Err(Error::NegativeKernel { j: -1, .. })));
        let k = TransitionKernel::new(3, vec![0.1, 0.85, 0.05]).unwrap();
        let r = extract_pm(&k);
        assert_eq!((r.p_plus, r.p_minus, r.residual_mass), (0.05, 0.1, 0.0));
        assert!(k.to_csv().starts_with("j,P\n-1,0.10000000000000001\n"));
    }

    #[test]
    fn spread_examples() {
        let d0 = WalkDistribution::<f64>::point_mass();
        let r = spread_check(&d0, &dist(1, &[0.2, 0.7, 0.1])).unwrap();
        assert!(r.satisfied);
        let d2 = dist(2, &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let r = spread_check(&d0, &d2).unwrap();
        assert_eq!(r.violations, vec![1]);
        assert!(matches!(recover_transitions(&d0, &d2), Err(Error::SpreadViolated { .. })));
    }

    #[test]
    fn recovery_examples() {
        let p = dist(1, &[0.2, 0.5, 0.3]);
        let r = recover_transitions(&p, &p).unwrap();
        assert!(r.sites.iter().all(|s| s.p_zero == 1.0));
        let d0 = WalkDistribution::<Exact>::point_mass();
        let (a, b) = (Exact::new(1.into(), 7.into()), Exact::new(2.into(), 9.into()));
        let one = Exact::from_integer(1.into());
        let p1 = WalkDistribution::new(1, vec![a.clone(), one - &a - &b, b.clone()]).unwrap();
        let r = recover_transitions(&d0, &p1).unwrap();
        assert_eq!(r.sites.len(), 1);
        assert_eq!((r.sites[0].p_minus.clone(), r.sites[0].p_plus.clone()), (a, b));
        assert_eq!(r.apply(&d0).dense(2), p1.dense(2));
    }

    #[test]
    fn pumps() {
        let q = compose_pumps(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(q.get(0), 1.0);
        assert!(compose_pumps(&[0.5, 0.4], &[1.0]).is_err());
        let p: NodeDistribution = compose_pumps(&[0.00021, 0.99982, 0.0], &[3.6e-5, 0.999975, 0.0]).unwrap();
        assert_eq!(format!("{:.5}", p.get(-1)), "0.00021");
        assert_eq!(format!("{:.5}", p.get(0)), "0.99980");
        assert_eq!(format!("{:.1e}", p.get(1)), "3.6e-5");
    }
}
