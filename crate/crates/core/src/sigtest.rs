//! Monte Carlo exact tests, consistency regions and p-value combination.
//!
//! All Monte Carlo loops draw from fixed-size chunks, each on its own
//! substream (`<stream>/mc/<chunk>`), and only integer tallies are merged,
//! so results depend on the seed and `n_sim` but not on the thread count.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::DirichletParams;
use crate::error::{domain, Error, Result};
use crate::inference::Dataset;
use crate::io::fmt_g17;
use crate::model::{walk_cells, Binning, CountsBlock, StepProbs};
use crate::sampling::multinomial;
use crate::scalar::log_sum_exp;
use crate::special::{chi2_sf, LnFactorials};
use crate::stream::{RngStream, StreamId};

/// Draws per Monte Carlo chunk.
pub const CHUNK: u64 = 4096;

/// Default number of simulated outcomes per test.
pub const DEFAULT_N_SIM: u64 = 9999;

/// Default number of fixed θ draws in [`slowdrift_test_integrated`].
pub const DEFAULT_N_THETA: usize = 512;

/// How draws tying with the observation are counted in the slow-drift
/// frequency test: every outcome whose frequency equals the observed one is
/// included in the cumulative sum.
pub const TIE_RULE: &str = "include-all-tied";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    /// Multinomial null; draws as or less probable than the observation.
    MultinomialExact,
    /// Slow-drift null ranked by outcome frequencies among the draws.
    SlowdriftFrequency,
    /// Slow-drift null ranked by a fixed-θ-set estimate of the compound pmf.
    SlowdriftIntegrated,
}

/// Outcome of one Monte Carlo test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: TestMethod,
    pub p_value: f64,
    pub n_sim: u64,
    /// Draws at least as extreme as the observation.
    pub k_extreme: u64,
    /// Observed statistic (a log-probability or log-frequency).
    pub statistic_observed: f64,
    pub seed: StreamId,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tie_rule: Option<String>,
}

fn n_chunks(n_sim: u64) -> u64 {
    n_sim.div_ceil(CHUNK)
}

fn chunk_len(n_sim: u64, c: u64) -> u64 {
    CHUNK.min(n_sim - c * CHUNK)
}

/// Multinomial log-probabilities for a fixed `N` with a shared ln-factorial table.
struct MultinomialStat {
    lf: LnFactorials<f64>,
    n: u64,
}

impl MultinomialStat {
    fn new(n: u64) -> Self {
        Self {
            lf: LnFactorials::new(n as usize),
            n,
        }
    }

    /// `ln N! − Σ ln z!`.
    fn coef(&self, z: &[u64]) -> f64 {
        z.iter().fold(self.lf.get(self.n as usize), |a, &k| a - self.lf.get(k as usize))
    }

    fn log_pmf(&self, z: &[u64], ln_p: &[f64]) -> f64 {
        let mut acc = self.coef(z);
        for (&k, &l) in z.iter().zip(ln_p) {
            if k > 0 {
                if l == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                acc += k as f64 * l;
            }
        }
        acc
    }
}

/// `a ≤ b` up to a relative slack that absorbs summation-order rounding
/// between outcomes of equal probability.
fn at_most(a: f64, b: f64) -> bool {
    if b == f64::NEG_INFINITY {
        return a == f64::NEG_INFINITY;
    }
    a <= b + 1e-9 * (1.0 + b.abs())
}

fn check_probs(block: &CountsBlock, probs: &[f64]) -> Result<()> {
    if probs.len() != block.counts().len() {
        return Err(Error::DimensionMismatch {
            expected: block.counts().len(),
            got: probs.len(),
        });
    }
    let s: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return domain(format!("null probabilities must be a distribution (sum {s})"));
    }
    Ok(())
}

/// Monte Carlo exact multinomial test.
///
/// Simulates `n_sim` count vectors under `null_probs` and counts those with
/// `Pr(z) ≤ Pr(z_obs)`; the p-value is `(k + 1)/(n_sim + 1)`. A positive
/// count in a zero-probability cell makes the observation maximally extreme.
pub fn mc_exact_test(block: &CountsBlock, null_probs: &[f64], n_sim: u64, stream: &RngStream) -> Result<TestReport> {
    check_probs(block, null_probs)?;
    if n_sim == 0 {
        return domain("n_sim must be at least 1");
    }
    let n = block.n_samples();
    let stat = MultinomialStat::new(n);
    let ln_p: Vec<f64> = null_probs.iter().map(|p| p.ln()).collect();
    let observed = stat.log_pmf(block.counts(), &ln_p);
    let mc = stream.child("mc");
    let k: u64 = (0..n_chunks(n_sim))
        .into_par_iter()
        .map(|c| {
            let mut rng = mc.index(c).rng();
            let mut z = vec![0u64; null_probs.len()];
            let mut hits = 0u64;
            for _ in 0..chunk_len(n_sim, c) {
                multinomial(&mut rng, n, null_probs, &mut z);
                if at_most(stat.log_pmf(&z, &ln_p), observed) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(TestReport {
        method: TestMethod::MultinomialExact,
        p_value: (k + 1) as f64 / (n_sim + 1) as f64,
        n_sim,
        k_extreme: k,
        statistic_observed: observed,
        seed: stream.id(),
        tie_rule: None,
    })
}

/// Rectangle of `(P+, P−)` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub p_plus: [f64; 2],
    pub p_minus: [f64; 2],
    pub n_plus: usize,
    pub n_minus: usize,
    #[serde(default = "default_true")]
    pub log_spaced: bool,
}

fn default_true() -> bool {
    true
}

impl GridSpec {
    /// `n × n` log-spaced points spanning `decades` either side of `theta`.
    pub fn around(theta: &StepProbs, decades: f64, n: usize) -> Self {
        let f = 10f64.powf(decades);
        Self {
            p_plus: [theta.p_plus() / f, theta.p_plus() * f],
            p_minus: [theta.p_minus() / f, theta.p_minus() * f],
            n_plus: n,
            n_minus: n,
            log_spaced: true,
        }
    }

    fn axis(&self, range: [f64; 2], n: usize) -> Result<Vec<f64>> {
        let [lo, hi] = range;
        if n == 0 || !(lo >= 0.0) || !(hi >= lo) || hi > 1.0 || (self.log_spaced && lo <= 0.0) {
            return domain(format!("bad grid axis {range:?} with {n} points"));
        }
        Ok((0..n)
            .map(|i| {
                let f = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                if self.log_spaced {
                    (lo.ln() + f * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + f * (hi - lo)
                }
            })
            .collect())
    }

    /// Points in row-major order (P− outer, P+ inner).
    pub fn points(&self) -> Result<Vec<(f64, f64)>> {
        let pp = self.axis(self.p_plus, self.n_plus)?;
        let pm = self.axis(self.p_minus, self.n_minus)?;
        Ok(pm.iter().flat_map(|&m| pp.iter().map(move |&p| (p, m))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_value: f64,
}

/// Per-point exact-test p-values over a `(P+, P−)` grid for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRegion {
    pub t: usize,
    #[serde(rename = "N")]
    pub n: u64,
    pub threshold: f64,
    pub n_sim: u64,
    pub points: Vec<GridPoint>,
}

impl ConsistencyRegion {
    /// Points not rejected at `threshold`.
    pub fn members_at(&self, threshold: f64) -> Vec<&GridPoint> {
        self.points.iter().filter(|p| p.p_value >= threshold).collect()
    }

    pub fn members(&self) -> Vec<&GridPoint> {
        self.members_at(self.threshold)
    }

    /// CSV with header `P_plus,P_minus,p_value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("P_plus,P_minus,p_value\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", fmt_g17(p.p_plus), fmt_g17(p.p_minus), fmt_g17(p.p_value)));
        }
        s
    }
}

/// Tests `H0: θ = (P+, P−)` at every grid point. Points off the simplex
/// (`P+ + P− > 1`) get p = 0.
pub fn consistency_region(
    block: &CountsBlock,
    grid: &GridSpec,
    n_sim: u64,
    threshold: f64,
    stream: &RngStream,
) -> Result<ConsistencyRegion> {
    let pts = grid.points()?;
    let binning = block.binning();
    let g = stream.child("grid");
    let points = pts
        .par_iter()
        .enumerate()
        .map(|(i, &(pp, pm))| -> Result<GridPoint> {
            let p_value = match StepProbs::from_rates(pp, pm) {
                Ok(th) => {
                    let cells = walk_cells(&th, block.t(), binning);
                    mc_exact_test(block, &cells, n_sim, &g.index(i as u64))?.p_value
                }
                Err(_) => 0.0,
            };
            Ok(GridPoint {
                p_plus: pp,
                p_minus: pm,
                p_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyRegion {
        t: block.t(),
        n: block.n_samples(),
        threshold,
        n_sim,
        points,
    })
}

/// Fisher's combination of independent p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub p_value: f64,
    /// `−2 Σ ln p_i`.
    pub statistic: f64,
    pub dof: usize,
    /// Some input was 0: either the combined p is 0 (plain form) or zeros
    /// were replaced by `1/(n_sim + 1)` (censored form).
    pub censored: bool,
}

fn validate_ps(p_values: &[f64]) -> Result<()> {
    if p_values.is_empty() {
        return domain("no p-values to combine");
    }
    if let Some(p) = p_values.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return domain(format!("p-value {p} outside [0, 1]"));
    }
    Ok(())
}

/// `X = −2 Σ ln p_i` referred to χ² with `2L` degrees of freedom. A zero
/// input gives combined p = 0 with `censored` set.
pub fn fisher_combine(p_values: &[f64]) -> Result<FisherResult> {
    validate_ps(p_values)?;
    let dof = 2 * p_values.len();
    if p_values.contains(&0.0) {
        return Ok(FisherResult {
            p_value: 0.0,
            statistic: f64::INFINITY,
            dof,
            censored: true,
        });
    }
    let x = -2.0 * p_values.iter().map(|p| p.ln()).sum::<f64>();
    Ok(FisherResult {
        p_value: chi2_sf(x, dof as f64),
        statistic: x,
        dof,
        censored: false,
    })
}

/// As [`fisher_combine`], but zeros (from slow-drift tests whose
/// observation was never drawn) are replaced by `1/(n_sim + 1)`.
pub fn fisher_combine_censored(p_values: &[f64], n_sim: u64) -> Result<FisherResult> {
    validate_ps(p_values)?;
    let floor = 1.0 / (n_sim + 1) as f64;
    let censored = p_values.contains(&0.0);
    let fixed: Vec<f64> = p_values.iter().map(|&p| if p == 0.0 { floor } else { p }).collect();
    let mut r = fisher_combine(&fixed)?;
    r.censored = censored;
    Ok(r)
}

/// `Σ_i |p_(i) − i/L|` between the sorted p-values and the uniform CDF.
pub fn pvalue_ecdf_distance(p_values: &[f64]) -> f64 {
    let mut p = p_values.to_vec();
    p.sort_by(|a, b| a.total_cmp(b));
    let l = p.len() as f64;
    p.iter().enumerate().map(|(i, v)| (v - (i + 1) as f64 / l).abs()).sum()
}

/// Draws one block from the slow-drift model (θ from Dir(α), then
/// multinomial cells) into `z`.
fn draw_compound<R: Rng>(rng: &mut R, alpha: &DirichletParams, t: usize, binning: Binning, n: u64, z: &mut [u64]) {
    let theta = alpha.sample_with(rng);
    let cells = walk_cells(&theta, t, binning);
    multinomial(rng, n, &cells, z);
}

/// Slow-drift test by outcome frequencies.
///
/// Draws `n_sim` blocks from the compound null and tallies distinct count
/// vectors. With the observation's frequency `k_obs`, the p-value is
/// `(Σ_{k_i ≤ k_obs} k_i + 1)/(n_sim + 1)`, where ties with `k_obs` are all
/// included; if the observation never occurs, p = 0.
pub fn slowdrift_test(block: &CountsBlock, alpha: &DirichletParams, n_sim: u64, stream: &RngStream) -> Result<TestReport> {
    if n_sim == 0 {
        return domain("n_sim must be at least 1");
    }
    let (t, b, n) = (block.t(), block.binning(), block.n_samples());
    let mc = stream.child("mc");
    let freq: HashMap<Vec<u64>, u64> = (0..n_chunks(n_sim))
        .into_par_iter()
        .map(|c| {
            let mut rng = mc.index(c).rng();
            let mut local: HashMap<Vec<u64>, u64> = HashMap::new();
            let mut z = vec![0u64; block.counts().len()];
            for _ in 0..chunk_len(n_sim, c) {
                draw_compound(&mut rng, alpha, t, b, n, &mut z);
                *local.entry(z.clone()).or_insert(0) += 1;
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    let k_obs = freq.get(block.counts()).copied().unwrap_or(0);
    let (p_value, k) = if k_obs == 0 {
        (0.0, 0)
    } else {
        let k: u64 = freq.values().filter(|&&v| v <= k_obs).sum();
        ((k + 1) as f64 / (n_sim + 1) as f64, k)
    };
    Ok(TestReport {
        method: TestMethod::SlowdriftFrequency,
        p_value,
        n_sim,
        k_extreme: k,
        statistic_observed: (k_obs as f64).ln(),
        seed: stream.id(),
        tie_rule: Some(TIE_RULE.to_owned()),
    })
}

/// Estimated compound log-pmf `ln( (1/J) Σ_j Pr(z | θ_j) )` over a fixed
/// set of θ draws.
struct CompoundStat {
    mult: MultinomialStat,
    ln_cells: Vec<Vec<f64>>,
}

impl CompoundStat {
    fn new(alpha: &DirichletParams, t: usize, binning: Binning, n: u64, n_theta: usize, stream: &RngStream) -> Self {
        let mut rng = stream.rng();
        let ln_cells = (0..n_theta)
            .map(|_| {
                let th = alpha.sample_with(&mut rng);
                walk_cells(&th, t, binning).iter().map(|p| p.ln()).collect()
            })
            .collect();
        Self {
            mult: MultinomialStat::new(n),
            ln_cells,
        }
    }

    fn eval(&self, z: &[u64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        let coef = self.mult.coef(z);
        for lc in &self.ln_cells {
            let mut acc = 0.0;
            for (&k, &l) in z.iter().zip(lc) {
                if k > 0 {
                    acc += k as f64 * l;
                }
            }
            scratch.push(acc);
        }
        coef + log_sum_exp(scratch) - (self.ln_cells.len() as f64).ln()
    }
}

/// Slow-drift test ranked by an estimate of the compound pmf.
///
/// `n_theta` draws of θ (from the `theta-set` substream) define a fixed
/// statistic `S(z) = ln mean_j Pr(z | θ_j)`; `n_sim` blocks from the
/// compound null are then ranked against the observation exactly as in
/// [`mc_exact_test`]. Because `S` does not depend on the data, the p-value
/// is valid for any `n_theta`, and unlike [`slowdrift_test`] it does not
/// collapse to 0 when outcomes are too many to repeat.
pub fn slowdrift_test_integrated(
    block: &CountsBlock,
    alpha: &DirichletParams,
    n_sim: u64,
    n_theta: usize,
    stream: &RngStream,
) -> Result<TestReport> {
    if n_sim == 0 || n_theta == 0 {
        return domain("n_sim and n_theta must be at least 1");
    }
    let (t, b, n) = (block.t(), block.binning(), block.n_samples());
    let stat = CompoundStat::new(alpha, t, b, n, n_theta, &stream.child("theta-set"));
    let observed = stat.eval(block.counts(), &mut Vec::new());
    let mc = stream.child("mc");
    let k: u64 = (0..n_chunks(n_sim))
        .into_par_iter()
        .map(|c| {
            let mut rng = mc.index(c).rng();
            let mut z = vec![0u64; block.counts().len()];
            let mut scratch = Vec::with_capacity(n_theta);
            let mut hits = 0;
            for _ in 0..chunk_len(n_sim, c) {
                draw_compound(&mut rng, alpha, t, b, n, &mut z);
                if at_most(stat.eval(&z, &mut scratch), observed) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(TestReport {
        method: TestMethod::SlowdriftIntegrated,
        p_value: (k + 1) as f64 / (n_sim + 1) as f64,
        n_sim,
        k_extreme: k,
        statistic_observed: observed,
        seed: stream.id(),
        tie_rule: None,
    })
}

/// Which slow-drift p-value to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SlowDriftMethod {
    Frequency,
    Integrated { n_theta: usize },
}

impl Default for SlowDriftMethod {
    fn default() -> Self {
        SlowDriftMethod::Integrated {
            n_theta: DEFAULT_N_THETA,
        }
    }
}

pub fn slowdrift_test_with(
    block: &CountsBlock,
    alpha: &DirichletParams,
    n_sim: u64,
    method: SlowDriftMethod,
    stream: &RngStream,
) -> Result<TestReport> {
    match method {
        SlowDriftMethod::Frequency => slowdrift_test(block, alpha, n_sim, stream),
        SlowDriftMethod::Integrated { n_theta } => slowdrift_test_integrated(block, alpha, n_sim, n_theta, stream),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub alpha_total: f64,
    pub cost: f64,
    pub combined_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationFit {
    pub alpha: DirichletParams,
    pub cost: f64,
    pub curve: Vec<CostPoint>,
}

/// Picks `α•` from `alpha_grid` minimizing [`pvalue_ecdf_distance`] of the
/// per-block slow-drift p-values at `α = α•·mean_theta`.
///
/// Every grid value reuses the same per-block substreams, so the cost
/// curve is not roughened by independent noise at each point. Ties go to
/// the first grid value.
pub fn optimize_concentration(
    data: &Dataset,
    mean_theta: &StepProbs,
    alpha_grid: &[f64],
    n_sim: u64,
    method: SlowDriftMethod,
    stream: &RngStream,
) -> Result<ConcentrationFit> {
    if alpha_grid.is_empty() {
        return domain("empty concentration grid");
    }
    let mut curve = Vec::with_capacity(alpha_grid.len());
    let mut best: Option<(f64, DirichletParams)> = None;
    for &total in alpha_grid {
        let alpha = DirichletParams::from_mean(total, mean_theta)?;
        let ps = data
            .blocks()
            .par_iter()
            .enumerate()
            .map(|(i, b)| slowdrift_test_with(b, &alpha, n_sim, method, &stream.child("block").index(i as u64)).map(|r| r.p_value))
            .collect::<Result<Vec<f64>>>()?;
        let cost = pvalue_ecdf_distance(&ps);
        let combined = fisher_combine_censored(&ps, n_sim)?.p_value;
        curve.push(CostPoint {
            alpha_total: total,
            cost,
            combined_p: combined,
        });
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, alpha));
        }
    }
    let (cost, alpha) = best.expect("grid is nonempty");
    Ok(ConcentrationFit { alpha, cost, curve })
}
