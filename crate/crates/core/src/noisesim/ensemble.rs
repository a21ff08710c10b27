use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::dirichlet::DirichletParams;
use crate::error::{Error, Result};
use crate::model::StepProbs;
use crate::stream::RngStream;

/// How switching rates (in units of `1/τ0`) are assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateSpec {
    /// `log Γ` uniform on `[ln min, ln max]`.
    LogUniform { min: f64, max: f64 },
    /// Every fluctuator switches at `rate`.
    Fixed { rate: f64 },
    /// One rate per fluctuator.
    List { rates: Vec<f64> },
}

impl Default for RateSpec {
    fn default() -> Self {
        RateSpec::LogUniform { min: 1e-8, max: 1.0 }
    }
}

impl RateSpec {
    fn validate(&self, m: usize) -> Result<()> {
        let bad = |r: f64| !(r.is_finite() && r >= 0.0);
        match self {
            RateSpec::LogUniform { min, max } if !(*min > 0.0 && max >= min && max.is_finite()) => {
                Err(Error::Config(format!("log-uniform rates need 0 < min <= max, got [{min}, {max}]")))
            }
            RateSpec::Fixed { rate } if bad(*rate) => Err(Error::Config(format!("bad rate {rate}"))),
            RateSpec::List { rates } if rates.len() != m => Err(Error::Config(format!(
                "{} rates listed for {m} fluctuators",
                rates.len()
            ))),
            RateSpec::List { rates } if rates.iter().any(|&r| bad(r)) => {
                Err(Error::Config("rates must be finite and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Two-level fluctuator: the step law it contributes in each state and its
/// symmetric switching rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fluctuator {
    pub modes: [StepProbs; 2],
    pub rate: f64,
    pub initial_state: bool,
}

impl Fluctuator {
    /// Probability of being in the other state one interval `τ0` later.
    pub fn flip_probability(&self) -> f64 {
        -0.5 * (-2.0 * self.rate).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuatorEnsemble {
    fluctuators: Vec<Fluctuator>,
}

impl FluctuatorEnsemble {
    pub fn new(fluctuators: Vec<Fluctuator>) -> Result<Self> {
        if fluctuators.is_empty() {
            return Err(Error::Config("an ensemble needs at least one fluctuator".into()));
        }
        if fluctuators.iter().any(|f| !(f.rate.is_finite() && f.rate >= 0.0)) {
            return Err(Error::Config("rates must be finite and nonnegative".into()));
        }
        Ok(Self { fluctuators })
    }

    pub fn fluctuators(&self) -> &[Fluctuator] {
        &self.fluctuators
    }

    pub fn len(&self) -> usize {
        self.fluctuators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluctuators.is_empty()
    }

    /// Instantaneous `(P+, P−)` for the given states.
    pub fn rates_at(&self, states: &[bool]) -> (f64, f64) {
        let (mut sp, mut sm) = (0.0, 0.0);
        for (f, &s) in self.fluctuators.iter().zip(states) {
            let th = &f.modes[s as usize];
            sp += th.p_plus();
            sm += th.p_minus();
        }
        let m = self.len() as f64;
        (sp / m, sm / m)
    }

    /// Starts the switching process at time 0.
    pub fn process(&self, stream: &RngStream) -> FluctuatorProcess<'_> {
        FluctuatorProcess::new(self, stream)
    }
}

/// Draws `m` fluctuators with both modes from
/// `Dir(α_noise·(⟨P−⟩, ⟨P0⟩, ⟨P+⟩))`, independently, rates from
/// `rate_spec` and equiprobable initial states.
pub fn build_ensemble(
    m: usize,
    rate_spec: &RateSpec,
    mean_theta: &StepProbs,
    alpha_noise: f64,
    stream: &RngStream,
) -> Result<FluctuatorEnsemble> {
    if m == 0 {
        return Err(Error::Config("an ensemble needs at least one fluctuator".into()));
    }
    if !(alpha_noise > 0.0 && alpha_noise.is_finite()) {
        return Err(Error::Config(format!("alpha_noise must be positive and finite, got {alpha_noise}")));
    }
    rate_spec.validate(m)?;
    let dir = DirichletParams::from_mean(alpha_noise, mean_theta)?;
    let modes = stream.child("modes");
    let mut rate_rng = stream.child("rates").rng();
    let mut init_rng = stream.child("init").rng();
    let fluctuators = (0..m)
        .map(|i| {
            let mut rng = modes.index(i as u64).rng();
            let pair = [dir.sample_with(&mut rng), dir.sample_with(&mut rng)];
            let rate = match rate_spec {
                RateSpec::LogUniform { min, max } => (min.ln() + rate_rng.random::<f64>() * (max.ln() - min.ln())).exp(),
                RateSpec::Fixed { rate } => *rate,
                RateSpec::List { rates } => rates[i],
            };
            Fluctuator {
                modes: pair,
                rate,
                initial_state: init_rng.random::<bool>(),
            }
        })
        .collect();
    FluctuatorEnsemble::new(fluctuators)
}

/// How often the running mode sums are recomputed from scratch.
const RESYNC: u64 = 1 << 16;

/// The fluctuator states sampled at `n τ0`, `n = 0, 1, 2, …`.
///
/// Each fluctuator flips between consecutive instants with probability
/// `(1 − e^{−2Γτ0})/2`; instead of a Bernoulli trial per instant, the gap
/// to its next flip is drawn from the matching geometric law on the
/// fluctuator's own substream, so the cost scales with the number of flips.
/// Flips due at the same instant are applied in fluctuator order.
pub struct FluctuatorProcess<'a> {
    ens: &'a FluctuatorEnsemble,
    states: Vec<bool>,
    rngs: Vec<ChaCha20Rng>,
    gaps: Vec<Option<Geometric>>,
    queue: BinaryHeap<Reverse<(u64, usize)>>,
    n: u64,
    sum_plus: f64,
    sum_minus: f64,
}

impl<'a> FluctuatorProcess<'a> {
    fn new(ens: &'a FluctuatorEnsemble, stream: &RngStream) -> Self {
        let states: Vec<bool> = ens.fluctuators.iter().map(|f| f.initial_state).collect();
        let mut rngs: Vec<ChaCha20Rng> = (0..ens.len()).map(|i| stream.index(i as u64).rng()).collect();
        let gaps: Vec<Option<Geometric>> = ens
            .fluctuators
            .iter()
            .map(|f| {
                let q = f.flip_probability();
                (q > 0.0).then(|| Geometric::new(q).expect("flip probability in (0, 1/2]"))
            })
            .collect();
        let mut queue = BinaryHeap::new();
        for (i, g) in gaps.iter().enumerate() {
            if let Some(g) = g {
                queue.push(Reverse((1 + g.sample(&mut rngs[i]), i)));
            }
        }
        let mut p = Self {
            ens,
            states,
            rngs,
            gaps,
            queue,
            n: 0,
            sum_plus: 0.0,
            sum_minus: 0.0,
        };
        p.resync();
        p
    }

    fn resync(&mut self) {
        let (sp, sm) = self.ens.rates_at(&self.states);
        let m = self.ens.len() as f64;
        self.sum_plus = sp * m;
        self.sum_minus = sm * m;
    }

    /// Current instant.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn states(&self) -> &[bool] {
        &self.states
    }

    /// `(P+, P−)` at the current instant.
    pub fn current(&self) -> (f64, f64) {
        let m = self.ens.len() as f64;
        ((self.sum_plus / m).max(0.0), (self.sum_minus / m).max(0.0))
    }

    /// Moves to the next instant and returns its `(P+, P−)`.
    pub fn advance(&mut self) -> (f64, f64) {
        self.n += 1;
        while let Some(&Reverse((at, i))) = self.queue.peek() {
            if at != self.n {
                break;
            }
            self.queue.pop();
            let f = &self.ens.fluctuators[i];
            let old = &f.modes[self.states[i] as usize];
            let new = &f.modes[!self.states[i] as usize];
            self.sum_plus += new.p_plus() - old.p_plus();
            self.sum_minus += new.p_minus() - old.p_minus();
            self.states[i] = !self.states[i];
            let g = self.gaps[i].as_ref().expect("queued fluctuators have a gap law");
            let next = self.n + 1 + g.sample(&mut self.rngs[i]);
            self.queue.push(Reverse((next, i)));
        }
        if self.n % RESYNC == 0 {
            self.resync();
        }
        self.current()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> StepProbs {
        StepProbs::from_rates(2.1e-5, 7.0e-5).unwrap()
    }

    #[test]
    fn huge_concentration_freezes_modes() {
        let e = build_ensemble(10, &RateSpec::default(), &theta(), 1e15, &RngStream::root("e")).unwrap();
        for f in e.fluctuators() {
            for m in &f.modes {
                assert!((m.p_plus() / 2.1e-5 - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn rates_follow_their_distribution() {
        let e = build_ensemble(200, &RateSpec::default(), &theta(), 1e5, &RngStream::root("r")).unwrap();
        assert!(e.fluctuators().iter().all(|f| (1e-8..=1.0).contains(&f.rate)));
        let e = build_ensemble(2, &RateSpec::List { rates: vec![0.0, 0.5] }, &theta(), 1e5, &RngStream::root("r")).unwrap();
        assert_eq!(e.fluctuators()[0].rate, 0.0);
        assert!(build_ensemble(2, &RateSpec::List { rates: vec![0.5] }, &theta(), 1e5, &RngStream::root("r")).is_err());
        assert!(build_ensemble(0, &RateSpec::default(), &theta(), 1e5, &RngStream::root("r")).is_err());
    }

    #[test]
    fn frozen_process_is_constant() {
        let e = build_ensemble(5, &RateSpec::Fixed { rate: 0.0 }, &theta(), 1e3, &RngStream::root("c")).unwrap();
        let mut p = e.process(&RngStream::root("c-run"));
        let first = p.current();
        for _ in 0..1000 {
            assert_eq!(p.advance(), first);
        }
    }

    #[test]
    fn running_sums_match_recomputation() {
        let e = build_ensemble(50, &RateSpec::LogUniform { min: 1e-3, max: 1.0 }, &theta(), 1e3, &RngStream::root("s")).unwrap();
        let mut p = e.process(&RngStream::root("s-run"));
        for _ in 0..50_000 {
            let (a, b) = p.advance();
            let (x, y) = e.rates_at(p.states());
            assert!((a - x).abs() < 1e-15 && (b - y).abs() < 1e-15);
        }
    }
}
