use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{xlogy, Real, Scalar};
use crate::special::ln_gamma;

/// How the endpoint positions of a block are grouped into cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binning {
    /// One cell per position in `[−t, t]`.
    Raw,
    /// `B` cells for `−(B−1)/2 ..= (B−1)/2`; the outer two absorb the tails.
    Rebinned(usize),
}

impl Binning {
    pub fn validate(self) -> Result<Self> {
        match self {
            Binning::Rebinned(b) if b < 3 || b % 2 == 0 => {
                Err(Error::Binning(format!("category count must be odd and at least 3, got {b}")))
            }
            _ => Ok(self),
        }
    }

    /// Half-width `h` of the cell labels `−h..=h` for a block of `t` steps.
    pub fn half_width(self, t: usize) -> usize {
        match self {
            Binning::Raw => t,
            Binning::Rebinned(b) => (b - 1) / 2,
        }
    }

    pub fn n_cells(self, t: usize) -> usize {
        2 * self.half_width(t) + 1
    }
}

/// Counts of observed endpoints for one `(N, t)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CountsBlock {
    t: usize,
    n_samples: u64,
    binning: Binning,
    counts: Vec<u64>,
}

impl CountsBlock {
    /// `counts[i]` belongs to cell label `i − h`.
    pub fn new(t: usize, binning: Binning, counts: Vec<u64>) -> Result<Self> {
        let binning = binning.validate()?;
        let want = binning.n_cells(t);
        if counts.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: counts.len(),
            });
        }
        let n_samples: u64 = counts.iter().sum();
        if n_samples == 0 {
            return Err(Error::Data("a counts block needs at least one sample".into()));
        }
        Ok(Self {
            t,
            n_samples,
            binning,
            counts,
        })
    }

    pub fn raw(t: usize, counts: Vec<u64>) -> Result<Self> {
        Self::new(t, Binning::Raw, counts)
    }

    /// Builds from a label → count map; missing labels count zero.
    pub fn from_map(t: usize, binning: Binning, map: &BTreeMap<i64, u64>) -> Result<Self> {
        let h = binning.validate()?.half_width(t) as i64;
        let mut counts = vec![0u64; (2 * h + 1) as usize];
        for (&x, &c) in map {
            if x.abs() > h {
                return Err(Error::Data(format!("label {x} outside cells −{h}..={h}")));
            }
            counts[(x + h) as usize] = c;
        }
        Self::new(t, binning, counts)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn binning(&self) -> Binning {
        self.binning
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn half_width(&self) -> usize {
        self.binning.half_width(self.t)
    }

    pub fn labels(&self) -> impl Iterator<Item = i64> {
        let h = self.half_width() as i64;
        -h..=h
    }

    /// Count in cell `x`; zero outside.
    pub fn get(&self, x: i64) -> u64 {
        let h = self.half_width() as i64;
        if x.abs() > h {
            0
        } else {
            self.counts[(x + h) as usize]
        }
    }

    /// Collapses to `B` categories, the outer two absorbing `|x| ≥ (B−1)/2`.
    ///
    /// Raw blocks can be rebinned to any odd `B ≥ 3`; cells beyond the
    /// walk's reach simply stay empty. A rebinned block can only be
    /// coarsened, and rebinning to its own `B` is the identity.
    pub fn rebin(&self, b: usize) -> Result<Self> {
        let target = Binning::Rebinned(b).validate()?;
        if let Binning::Rebinned(cur) = self.binning {
            if cur == b {
                return Ok(self.clone());
            }
            if cur < b {
                return Err(Error::Binning(format!("cannot refine {cur} categories into {b}")));
            }
        }
        let counts = rebin_vec(&self.counts, self.half_width(), b, 0u64, |a, c| a + c);
        Self::new(self.t, target, counts)
    }

    /// Empirical distribution of a raw block.
    pub fn empirical(&self) -> Result<crate::model::WalkDistribution<f64>> {
        if self.binning != Binning::Raw {
            return Err(Error::Binning("empirical distributions need raw counts".into()));
        }
        let n = self.n_samples as f64;
        crate::model::WalkDistribution::new(self.t, self.counts.iter().map(|&c| c as f64 / n).collect())
    }
}

fn rebin_vec<V: Clone>(values: &[V], h_in: usize, b: usize, zero: V, add: impl Fn(V, V) -> V) -> Vec<V> {
    let h = ((b - 1) / 2) as i64;
    let hi = h_in as i64;
    let mut out = vec![zero; b];
    for (i, v) in values.iter().enumerate() {
        let x = (i as i64 - hi).clamp(-h, h);
        let k = (x + h) as usize;
        out[k] = add(out[k].clone(), v.clone());
    }
    out
}

/// Collapses a dense probability vector on `[−h_in, h_in]` to `B` cells.
pub fn rebin_probs<T: Scalar>(probs: &[T], h_in: usize, b: usize) -> Vec<T> {
    rebin_vec(probs, h_in, b, T::zero(), |a, c| a + c)
}

/// Multinomial log-probability `ln N! + Σ (z ln p − ln z!)` of a block.
///
/// Cells with zero count contribute nothing even where `p = 0`; a positive
/// count in a zero-probability cell gives `−∞`.
pub fn counts_log_pmf<T: Real>(block: &CountsBlock, cell_probs: &[T]) -> Result<T> {
    if cell_probs.len() != block.counts.len() {
        return Err(Error::DimensionMismatch {
            expected: block.counts.len(),
            got: cell_probs.len(),
        });
    }
    Ok(log_pmf_unchecked(block.n_samples, &block.counts, cell_probs))
}

pub(crate) fn log_pmf_unchecked<T: Real>(n: u64, counts: &[u64], probs: &[T]) -> T {
    let lg = |k: u64| -> T { if k < 2 { T::zero() } else { ln_gamma(T::from_u64(k + 1).unwrap()) } };
    let mut acc = lg(n);
    for (&z, &p) in counts.iter().zip(probs) {
        if z == 0 {
            continue;
        }
        if p <= T::zero() {
            return T::neg_infinity();
        }
        acc = acc + xlogy(z, p.ln()) - lg(z);
    }
    acc
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsBlockJson {
    t: usize,
    #[serde(rename = "N")]
    n: u64,
    binning: Binning,
    counts: BTreeMap<i64, u64>,
}

impl Serialize for CountsBlock {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        // Rebinned blocks list every cell; raw blocks only occupied ones.
        let counts = self
            .labels()
            .zip(self.counts.iter())
            .filter(|(_, &c)| self.binning != Binning::Raw || c > 0)
            .map(|(x, &c)| (x, c))
            .collect();
        CountsBlockJson {
            t: self.t,
            n: self.n_samples,
            binning: self.binning,
            counts,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CountsBlock {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = CountsBlockJson::deserialize(d)?;
        let block = CountsBlock::from_map(j.t, j.binning, &j.counts).map_err(serde::de::Error::custom)?;
        if block.n_samples != j.n {
            return Err(serde::de::Error::custom(format!(
                "counts sum to {} but N = {}",
                block.n_samples, j.n
            )));
        }
        Ok(block)
    }
}
