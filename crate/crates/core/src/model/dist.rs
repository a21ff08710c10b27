use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_g17;
use crate::scalar::Scalar;

/// Distribution of the walker's position after `t` steps, on `[−t, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkDistribution<T = f64> {
    t: usize,
    probs: Vec<T>,
}

impl<T: Scalar> WalkDistribution<T> {
    /// `probs[i]` is the probability of position `i − t`.
    pub fn new(t: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != 2 * t + 1 {
            return Err(Error::DimensionMismatch {
                expected: 2 * t + 1,
                got: probs.len(),
            });
        }
        let mut sum = T::zero();
        for (i, p) in probs.iter().enumerate() {
            if !(p >= &T::zero()) {
                return Err(Error::Data(format!("negative probability {:?} at x = {}", p, i as i64 - t as i64)));
            }
            sum = sum + p.clone();
        }
        if (sum.clone() - T::one()).magnitude() > T::lit(1e-10) {
            return Err(Error::Data(format!("probabilities sum to {:?}", sum)));
        }
        Ok(Self { t, probs })
    }

    pub(crate) fn from_raw_parts(t: usize, probs: Vec<T>) -> Self {
        debug_assert_eq!(probs.len(), 2 * t + 1);
        Self { t, probs }
    }

    pub fn point_mass() -> Self {
        Self {
            t: 0,
            probs: vec![T::one()],
        }
    }

    /// Builds from a sparse map; the step count is `max |x|` unless `t` is given.
    pub fn from_map(map: &BTreeMap<i64, T>, t: Option<usize>) -> Result<Self> {
        let span = map.keys().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0);
        let t = t.unwrap_or(span);
        if span > t {
            return Err(Error::Data(format!("position {span} outside support of t = {t}")));
        }
        let mut probs = vec![T::zero(); 2 * t + 1];
        for (&x, p) in map {
            probs[(x + t as i64) as usize] = p.clone();
        }
        Self::new(t, probs)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// Probability of position `x`; zero outside the support.
    pub fn get(&self, x: i64) -> T {
        let t = self.t as i64;
        if x.abs() > t {
            T::zero()
        } else {
            self.probs[(x + t) as usize].clone()
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &T)> + '_ {
        let t = self.t as i64;
        self.probs.iter().enumerate().map(move |(i, p)| (i as i64 - t, p))
    }

    /// Values on `[−m, m]`, zero-padded (or truncated) as needed.
    pub fn dense(&self, m: usize) -> Vec<T> {
        (-(m as i64)..=m as i64).map(|x| self.get(x)).collect()
    }

    pub fn to_map(&self) -> BTreeMap<i64, T> {
        self.iter().map(|(x, p)| (x, p.clone())).collect()
    }

    /// CSV with header `x,p`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,p\n");
        for (x, p) in self.iter() {
            s.push_str(&format!("{},{}\n", x, fmt_g17(p.as_f64())));
        }
        s
    }

    pub fn to_f64(&self) -> WalkDistribution<f64> {
        WalkDistribution {
            t: self.t,
            probs: self.probs.iter().map(|p| p.as_f64()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WalkDistributionJson {
    t: usize,
    probs: BTreeMap<i64, f64>,
}

impl Serialize for WalkDistribution<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WalkDistributionJson {
            t: self.t,
            probs: self.to_map(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WalkDistribution<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = WalkDistributionJson::deserialize(d)?;
        WalkDistribution::from_map(&j.probs, Some(j.t)).map_err(serde::de::Error::custom)
    }
}
