use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::fmt_g17;
use crate::model::{Binning, CountsBlock};
use crate::stream::RngStream;

use super::ensemble::FluctuatorEnsemble;
use super::schedule::BurstSchedule;

/// Endpoint of one `t`-step walk with frozen `(P+, P−)`:
/// `K− ~ Bin(t, P−)`, then `K+ ~ Bin(t − K−, P+/(1 − P−))`.
pub fn sample_endpoint<R: Rng + ?Sized>(rng: &mut R, p_plus: f64, p_minus: f64, t: usize) -> i64 {
    let t = t as u64;
    let km = if p_minus > 0.0 {
        Binomial::new(t, p_minus.min(1.0)).expect("valid binomial").sample(rng)
    } else {
        0
    };
    let rest = t - km;
    let q = if p_minus < 1.0 { (p_plus / (1.0 - p_minus)).min(1.0) } else { 0.0 };
    let kp = if q > 0.0 && rest > 0 {
        Binomial::new(rest, q).expect("valid binomial").sample(rng)
    } else {
        0
    };
    kp as i64 - km as i64
}

/// Receives one record per burst, in timeline order.
pub trait TraceSink {
    /// `group` indexes the schedule entry, `n` is the absolute burst index
    /// (starting at 1).
    fn record(&mut self, group: usize, t: usize, n: u64, p_plus: f64, p_minus: f64, x: i64);
}

impl<S: TraceSink> TraceSink for Option<S> {
    fn record(&mut self, group: usize, t: usize, n: u64, p_plus: f64, p_minus: f64, x: i64) {
        if let Some(s) = self {
            s.record(group, t, n, p_plus, p_minus, x);
        }
    }
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn record(&mut self, group: usize, t: usize, n: u64, p_plus: f64, p_minus: f64, x: i64) {
        self.0.record(group, t, n, p_plus, p_minus, x);
        self.1.record(group, t, n, p_plus, p_minus, x);
    }
}

/// Runs the acquisition timeline: before every burst the fluctuators
/// advance by one interval `τ0`, then one walk is sampled with the frozen
/// instantaneous step probabilities.
pub fn simulate_timeline_into<S: TraceSink>(
    ensemble: &FluctuatorEnsemble,
    schedule: &BurstSchedule,
    stream: &RngStream,
    sink: &mut S,
) {
    let mut process = ensemble.process(&stream.child("fluctuators"));
    let mut rng = stream.child("walks").rng();
    for (g, b) in schedule.bursts().iter().enumerate() {
        for _ in 0..b.n {
            let (pp, pm) = process.advance();
            let x = sample_endpoint(&mut rng, pp, pm, b.t);
            sink.record(g, b.t, process.n(), pp, pm, x);
        }
    }
}

/// Full per-burst record, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    schedule: BurstSchedule,
    p_plus: Vec<f64>,
    p_minus: Vec<f64>,
    x: Vec<i32>,
}

impl NoiseTrace {
    pub fn with_schedule(schedule: &BurstSchedule) -> Self {
        let n = schedule.n_total() as usize;
        Self {
            schedule: schedule.clone(),
            p_plus: Vec::with_capacity(n),
            p_minus: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn p_plus(&self) -> &[f64] {
        &self.p_plus
    }

    pub fn p_minus(&self) -> &[f64] {
        &self.p_minus
    }

    pub fn endpoints(&self) -> &[i32] {
        &self.x
    }

    /// Counts per schedule group under `binning`.
    pub fn blocks(&self, binning: Binning) -> Result<Vec<CountsBlock>> {
        let mut stats = TraceStats::new(&self.schedule);
        for (i, ((&pp, &pm), &x)) in self.p_plus.iter().zip(&self.p_minus).zip(&self.x).enumerate() {
            let (g, t) = self.group_of(i);
            stats.record(g, t, i as u64 + 1, pp, pm, x as i64);
        }
        stats.blocks(binning)
    }

    fn group_of(&self, i: usize) -> (usize, usize) {
        let mut acc = 0u64;
        for (g, b) in self.schedule.bursts().iter().enumerate() {
            acc += b.n;
            if (i as u64) < acc {
                return (g, b.t);
            }
        }
        unreachable!("record index beyond schedule")
    }

    /// CSV `n,P_plus,P_minus,x`, keeping every `stride`-th record.
    pub fn to_csv(&self, stride: usize) -> String {
        let stride = stride.max(1);
        let mut s = String::from("n,P_plus,P_minus,x\n");
        for i in (0..self.len()).step_by(stride) {
            s.push_str(&format!("{},{},{},{}\n", i + 1, fmt_g17(self.p_plus[i]), fmt_g17(self.p_minus[i]), self.x[i]));
        }
        s
    }
}

impl TraceSink for NoiseTrace {
    fn record(&mut self, _group: usize, _t: usize, _n: u64, p_plus: f64, p_minus: f64, x: i64) {
        self.p_plus.push(p_plus);
        self.p_minus.push(p_minus);
        self.x.push(x as i32);
    }
}

pub fn simulate_timeline(ensemble: &FluctuatorEnsemble, schedule: &BurstSchedule, stream: &RngStream) -> NoiseTrace {
    let mut trace = NoiseTrace::with_schedule(schedule);
    simulate_timeline_into(ensemble, schedule, stream, &mut trace);
    trace
}

/// Population moments of the `P±` traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMoments {
    pub n_records: u64,
    pub mu_plus: f64,
    pub sigma_plus: f64,
    pub mu_minus: f64,
    pub sigma_minus: f64,
    /// `max_s σ_s/μ_s`; absent when some `μ_s` is zero.
    pub rsd: Option<f64>,
}

/// Running sums of deviations from the first value, which avoids
/// cancellation when the fluctuations are tiny next to the mean.
#[derive(Debug, Clone, Default)]
struct Moments {
    count: u64,
    shift: [f64; 2],
    s1: [f64; 2],
    s2: [f64; 2],
}

impl Moments {
    fn push(&mut self, v: [f64; 2]) {
        if self.count == 0 {
            self.shift = v;
        }
        self.count += 1;
        for k in 0..2 {
            let d = v[k] - self.shift[k];
            self.s1[k] += d;
            self.s2[k] += d * d;
        }
    }

    fn finish(&self) -> TraceMoments {
        let n = self.count.max(1) as f64;
        let stat = |k: usize| {
            let m = self.s1[k] / n;
            ((self.shift[k] + m), (self.s2[k] / n - m * m).max(0.0).sqrt())
        };
        let (mu_plus, sigma_plus) = stat(0);
        let (mu_minus, sigma_minus) = stat(1);
        let rsd = (mu_plus > 0.0 && mu_minus > 0.0).then(|| (sigma_plus / mu_plus).max(sigma_minus / mu_minus));
        TraceMoments {
            n_records: self.count,
            mu_plus,
            sigma_plus,
            mu_minus,
            sigma_minus,
            rsd,
        }
    }
}

/// Population means, standard deviations and RSD of a stored trace.
pub fn trace_rsd(trace: &NoiseTrace) -> Result<TraceMoments> {
    if trace.is_empty() {
        return Err(crate::error::Error::Data("empty trace".into()));
    }
    let mut m = Moments::default();
    for (&a, &b) in trace.p_plus.iter().zip(&trace.p_minus) {
        m.push([a, b]);
    }
    Ok(m.finish())
}

/// Streaming sink keeping only raw counts per schedule group and the trace
/// moments, for timelines too long to store.
#[derive(Debug, Clone)]
pub struct TraceStats {
    schedule: BurstSchedule,
    hist: Vec<Vec<u64>>,
    moments: Moments,
}

impl TraceStats {
    pub fn new(schedule: &BurstSchedule) -> Self {
        Self {
            schedule: schedule.clone(),
            hist: schedule.bursts().iter().map(|b| vec![0; 2 * b.t + 1]).collect(),
            moments: Moments::default(),
        }
    }

    pub fn moments(&self) -> TraceMoments {
        self.moments.finish()
    }

    /// One block per schedule group, raw or rebinned.
    pub fn blocks(&self, binning: Binning) -> Result<Vec<CountsBlock>> {
        self.schedule
            .bursts()
            .iter()
            .zip(&self.hist)
            .map(|(b, h)| {
                let raw = CountsBlock::raw(b.t, h.clone())?;
                match binning {
                    Binning::Raw => Ok(raw),
                    Binning::Rebinned(k) => raw.rebin(k),
                }
            })
            .collect()
    }
}

impl TraceSink for TraceStats {
    fn record(&mut self, group: usize, t: usize, _n: u64, p_plus: f64, p_minus: f64, x: i64) {
        self.hist[group][(x + t as i64) as usize] += 1;
        self.moments.push([p_plus, p_minus]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StepProbs;
    use crate::noisesim::{build_ensemble, Burst, RateSpec};

    #[test]
    fn alternating_trace_moments() {
        let mut m = Moments::default();
        for i in 0..1000 {
            let d = if i % 2 == 0 { 1e-6 } else { -1e-6 };
            m.push([2e-5 + d, 7e-5]);
        }
        let r = m.finish();
        assert!((r.mu_plus - 2e-5).abs() < 1e-18);
        assert!((r.sigma_plus - 1e-6).abs() < 1e-15);
        assert_eq!(r.sigma_minus, 0.0);
        assert!((r.rsd.unwrap() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn minimal_schedule_counts() {
        let th = StepProbs::from_rates(0.1, 0.1).unwrap();
        let e = build_ensemble(1, &RateSpec::Fixed { rate: 0.0 }, &th, 1e3, &RngStream::root("min")).unwrap();
        let s = BurstSchedule::new(vec![Burst { t: 1, n: 10 }]).unwrap();
        let tr = simulate_timeline(&e, &s, &RngStream::root("min-run"));
        assert_eq!(tr.len(), 10);
        let b = tr.blocks(Binning::Raw).unwrap();
        assert_eq!(b[0].n_samples(), 10);
        assert_eq!(trace_rsd(&tr).unwrap().rsd, Some(0.0));
        assert!(tr.to_csv(1).starts_with("n,P_plus,P_minus,x\n1,"));
    }

    #[test]
    fn stored_and_streamed_agree() {
        let th = StepProbs::from_rates(0.01, 0.02).unwrap();
        let e = build_ensemble(20, &RateSpec::default(), &th, 500.0, &RngStream::root("agree")).unwrap();
        let s = BurstSchedule::new(vec![Burst { t: 3, n: 500 }, Burst { t: 9, n: 700 }]).unwrap();
        let mut both = (NoiseTrace::with_schedule(&s), TraceStats::new(&s));
        simulate_timeline_into(&e, &s, &RngStream::root("agree-run"), &mut both);
        assert_eq!(both.0.blocks(Binning::Rebinned(5)).unwrap(), both.1.blocks(Binning::Rebinned(5)).unwrap());
        assert_eq!(trace_rsd(&both.0).unwrap(), both.1.moments());
    }
}
