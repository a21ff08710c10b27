use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` consecutive bursts of `t` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub t: usize,
    #[serde(rename = "N")]
    pub n: u64,
}

/// Acquisition timeline: the bursts of each `(t_i, N_i)` group follow one
/// another, one burst per repetition interval `τ0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Burst>", into = "Vec<Burst>")]
pub struct BurstSchedule {
    bursts: Vec<Burst>,
}

impl TryFrom<Vec<Burst>> for BurstSchedule {
    type Error = Error;
    fn try_from(v: Vec<Burst>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BurstSchedule> for Vec<Burst> {
    fn from(s: BurstSchedule) -> Self {
        s.bursts
    }
}

/// Step counts of the device-A schedule.
fn device_a_lengths() -> Vec<usize> {
    (1..=20).chain((22..=40).step_by(2)).chain((45..=100).step_by(5)).collect()
}

impl BurstSchedule {
    pub fn new(bursts: Vec<Burst>) -> Result<Self> {
        if bursts.is_empty() {
            return Err(Error::Config("schedule has no bursts".into()));
        }
        if let Some(b) = bursts.iter().find(|b| b.t == 0 || b.n == 0) {
            return Err(Error::Config(format!("burst group needs t >= 1 and N >= 1, got t = {}, N = {}", b.t, b.n)));
        }
        Ok(Self { bursts })
    }

    /// Schedule shaped like the device-A acquisition: 42 lengths
    /// `1..=20, 22..=40 (step 2), 45..=100 (step 5)`, sample sizes falling
    /// linearly from 1 398 826 to 500 392 with `N_tot = 38 022 642`.
    ///
    /// Only the extremes and the total of the real sample sizes are known;
    /// the interior is a linear interpolation adjusted to the total.
    pub fn device_a() -> Self {
        let lengths = device_a_lengths();
        let mut ns = vec![1_398_826u64];
        for i in 0..40 {
            let v = 903_085.0 + (300_000.0 * (1.0 - 2.0 * i as f64 / 39.0)).round();
            ns.push(v as u64 + u64::from(i < 24));
        }
        ns.push(500_392);
        let bursts = lengths.into_iter().zip(ns).map(|(t, n)| Burst { t, n }).collect();
        Self { bursts }
    }

    /// Same group fractions with `N_tot = total`, by largest-remainder
    /// rounding; every group keeps at least one burst.
    pub fn scaled_to(&self, total: u64) -> Result<Self> {
        let l = self.bursts.len() as u64;
        if total < l {
            return Err(Error::Config(format!("cannot spread {total} bursts over {l} groups")));
        }
        let old = self.n_total() as f64;
        let quotas: Vec<f64> = self.bursts.iter().map(|b| b.n as f64 * total as f64 / old).collect();
        let mut ns: Vec<u64> = quotas.iter().map(|q| (q.floor() as u64).max(1)).collect();
        let mut order: Vec<usize> = (0..ns.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut sum: u64 = ns.iter().sum();
        let mut k = 0;
        while sum < total {
            ns[order[k % order.len()]] += 1;
            sum += 1;
            k += 1;
        }
        while sum > total {
            let i = (0..ns.len()).max_by_key(|&i| (ns[i], std::cmp::Reverse(i))).unwrap();
            ns[i] -= 1;
            sum -= 1;
        }
        Self::new(self.bursts.iter().zip(ns).map(|(b, n)| Burst { t: b.t, n }).collect())
    }

    pub fn bursts(&self) -> &[Burst] {
        &self.bursts
    }

    pub fn len(&self) -> usize {
        self.bursts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bursts.is_empty()
    }

    pub fn n_total(&self) -> u64 {
        self.bursts.iter().map(|b| b.n).sum()
    }
}

/// Schedule as written in a campaign config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// [`BurstSchedule::device_a`], optionally rescaled to `n_total` bursts.
    DeviceA {
        #[serde(default)]
        n_total: Option<u64>,
    },
    Explicit {
        bursts: BurstSchedule,
    },
}

impl ScheduleSpec {
    pub fn resolve(&self) -> Result<BurstSchedule> {
        match self {
            ScheduleSpec::DeviceA { n_total: None } => Ok(BurstSchedule::device_a()),
            ScheduleSpec::DeviceA { n_total: Some(n) } => BurstSchedule::device_a().scaled_to(*n),
            ScheduleSpec::Explicit { bursts } => Ok(bursts.clone()),
        }
    }
}
