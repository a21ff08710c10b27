use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{fastfluct_cells, DirichletParams};
use crate::error::{Error, Result};
use crate::inference::{fit_baseline, fit_fastfluct, Dataset, FitOptions, FitResult, ModelParams};
use crate::model::{walk_cells, Binning, CountsBlock, StepProbs};
use crate::sigtest::{fisher_combine, fisher_combine_censored, mc_exact_test, slowdrift_test_with, FisherResult, SlowDriftMethod};
use crate::stream::{RngStream, StreamId};

use super::ensemble::{build_ensemble, RateSpec};
use super::schedule::ScheduleSpec;
use super::timeline::{simulate_timeline_into, NoiseTrace, TraceMoments, TraceStats};

pub const CAMPAIGN_SCHEMA: &str = "rwbench.campaign/1";

/// Largest slow-drift concentration used; beyond it the model is the
/// baseline to double precision.
const MAX_CONCENTRATION: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanRates {
    pub p_plus: f64,
    pub p_minus: f64,
}

fn default_m() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_bins() -> usize {
    5
}
fn default_n_sim() -> u64 {
    crate::sigtest::DEFAULT_N_SIM
}
fn default_true() -> bool {
    true
}

/// Noise-threshold campaign: one simulated timeline per
/// `(alpha_noise, replicate)`, each analysed against the baseline and
/// slow-drift models (and optionally the fast-fluctuator model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema: String,
    pub mean_theta: MeanRates,
    #[serde(default = "default_m")]
    pub n_fluctuators: usize,
    #[serde(default)]
    pub rates: RateSpec,
    pub alpha_noise: Vec<f64>,
    #[serde(default = "default_one")]
    pub runs_per_alpha: usize,
    pub schedule: ScheduleSpec,
    /// Cells per block for the tests.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_n_sim")]
    pub n_sim: u64,
    #[serde(default)]
    pub slowdrift: SlowDriftMethod,
    #[serde(default)]
    pub fastfluct: bool,
    /// Run the fits and tests; otherwise only counts and trace moments.
    #[serde(default = "default_true")]
    pub analyze: bool,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != CAMPAIGN_SCHEMA {
            return Err(Error::Config(format!("schema must be \"{CAMPAIGN_SCHEMA}\", got \"{}\"", self.schema)));
        }
        StepProbs::from_rates(self.mean_theta.p_plus, self.mean_theta.p_minus)
            .map_err(|e| Error::Config(format!("mean_theta: {e}")))?;
        if self.alpha_noise.is_empty() || self.runs_per_alpha == 0 {
            return Err(Error::Config("campaign has no runs".into()));
        }
        Binning::Rebinned(self.bins).validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.n_sim == 0 {
            return Err(Error::Config("n_sim must be at least 1".into()));
        }
        self.schedule.resolve()?;
        Ok(())
    }

    /// `(run index, alpha_noise)` for every run, alpha-major.
    pub fn runs(&self) -> Vec<(usize, f64)> {
        self.alpha_noise
            .iter()
            .flat_map(|&a| std::iter::repeat_n(a, self.runs_per_alpha))
            .enumerate()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPValue {
    pub t: usize,
    #[serde(rename = "N")]
    pub n: u64,
    pub p_value: f64,
}

/// Per-block p-values and their Fisher combination for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTest {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<DirichletParams>,
    pub p_values: Vec<BlockPValue>,
    pub combined: FisherResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub alpha_noise: f64,
    pub seed: StreamId,
    pub n_total: u64,
    pub trace: TraceMoments,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<ModelTest>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slowdrift: Option<ModelTest>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fastfluct: Option<ModelTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema: String,
    pub runs: Vec<RunReport>,
}

/// Slow-drift concentration matching the trace: with `s` the component of
/// larger standard deviation, `α• = P̂_s(1 − P̂_s)/σ_s² − 1`, so that the
/// Dirichlet spread of `P_s` equals `σ_s`. Capped at 1e15 (a constant trace
/// gives the cap).
pub fn slowdrift_concentration(theta_hat: &StepProbs, trace: &TraceMoments) -> f64 {
    let (frac, sigma) = if trace.sigma_plus >= trace.sigma_minus {
        (theta_hat.p_plus(), trace.sigma_plus)
    } else {
        (theta_hat.p_minus(), trace.sigma_minus)
    };
    let a = frac * (1.0 - frac) / (sigma * sigma) - 1.0;
    if a.is_finite() {
        a.clamp(1e-3, MAX_CONCENTRATION)
    } else {
        MAX_CONCENTRATION
    }
}

fn exact_tests(blocks: &[CountsBlock], cells: impl Fn(&CountsBlock) -> Vec<f64>, n_sim: u64, stream: &RngStream) -> Result<Vec<BlockPValue>> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = mc_exact_test(b, &cells(b), n_sim, &stream.index(i as u64))?;
            Ok(BlockPValue {
                t: b.t(),
                n: b.n_samples(),
                p_value: r.p_value,
            })
        })
        .collect()
}

fn combined(ps: &[BlockPValue]) -> Result<FisherResult> {
    fisher_combine(&ps.iter().map(|p| p.p_value).collect::<Vec<_>>())
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Raw counts, one block per schedule group.
    pub counts: Vec<CountsBlock>,
    pub trace: Option<NoiseTrace>,
}

/// Simulates and analyses one run, optionally keeping the full trace.
pub fn run_campaign_point(config: &CampaignConfig, run: usize, alpha_noise: f64, root: &RngStream, keep_trace: bool) -> Result<RunOutput> {
    let stream = root.child("run").index(run as u64);
    let schedule = config.schedule.resolve()?;
    let mean = StepProbs::from_rates(config.mean_theta.p_plus, config.mean_theta.p_minus)?;
    let ensemble = build_ensemble(config.n_fluctuators, &config.rates, &mean, alpha_noise, &stream.child("ensemble"))?;
    let mut sinks = (TraceStats::new(&schedule), keep_trace.then(|| NoiseTrace::with_schedule(&schedule)));
    simulate_timeline_into(&ensemble, &schedule, &stream.child("timeline"), &mut sinks);
    let (stats, trace) = sinks;
    let raw = stats.blocks(Binning::Raw)?;
    let mut report = RunReport {
        run,
        alpha_noise,
        seed: stream.id(),
        n_total: schedule.n_total(),
        trace: stats.moments(),
        baseline: None,
        slowdrift: None,
        fastfluct: None,
    };
    if !config.analyze {
        return Ok(RunOutput { report, counts: raw, trace });
    }

    let binning = Binning::Rebinned(config.bins);
    let blocks: Vec<CountsBlock> = raw.iter().map(|b| b.rebin(config.bins)).collect::<Result<_>>()?;
    let data = Dataset::new(blocks.clone())?;
    let fit = fit_baseline(&data, None, FitOptions::default())?;
    let theta = match &fit.params {
        ModelParams::Baseline(th) => th.clone(),
        ModelParams::Fastfluct(_) => unreachable!("baseline fit"),
    };
    let ps = exact_tests(&blocks, |b| walk_cells(&theta, b.t(), binning), config.n_sim, &stream.child("baseline"))?;
    report.baseline = Some(ModelTest {
        combined: combined(&ps)?,
        fit: Some(fit),
        alpha: None,
        p_values: ps,
    });

    let alpha = DirichletParams::from_mean(slowdrift_concentration(&theta, &report.trace), &theta)?;
    let sd_stream = stream.child("slowdrift");
    let ps: Vec<BlockPValue> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = slowdrift_test_with(b, &alpha, config.n_sim, config.slowdrift, &sd_stream.index(i as u64))?;
            Ok(BlockPValue {
                t: b.t(),
                n: b.n_samples(),
                p_value: r.p_value,
            })
        })
        .collect::<Result<_>>()?;
    let raw_ps: Vec<f64> = ps.iter().map(|p| p.p_value).collect();
    report.slowdrift = Some(ModelTest {
        combined: fisher_combine_censored(&raw_ps, config.n_sim)?,
        fit: None,
        alpha: Some(alpha),
        p_values: ps,
    });

    if config.fastfluct {
        let init = DirichletParams::from_mean(1e6, &theta)?;
        let ff = fit_fastfluct(&data, &init, FitOptions::default())?;
        let a = match &ff.params {
            ModelParams::Fastfluct(a) => a.clone(),
            ModelParams::Baseline(_) => unreachable!("fast-fluctuator fit"),
        };
        let ps = exact_tests(&blocks, |b| fastfluct_cells(&a, b.t(), binning), config.n_sim, &stream.child("fastfluct"))?;
        report.fastfluct = Some(ModelTest {
            combined: combined(&ps)?,
            fit: Some(ff),
            alpha: None,
            p_values: ps,
        });
    }
    Ok(RunOutput { report, counts: raw, trace })
}

/// Runs every configured point; runs are independent and may execute in
/// parallel without affecting the results.
pub fn noise_campaign(config: &CampaignConfig, root: &RngStream) -> Result<CampaignReport> {
    config.validate()?;
    let runs = config
        .runs()
        .par_iter()
        .map(|&(i, a)| run_campaign_point(config, i, a, root, false).map(|r| r.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(CampaignReport {
        schema: CAMPAIGN_SCHEMA.to_owned(),
        runs,
    })
}
