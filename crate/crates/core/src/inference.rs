//! Maximum-likelihood fits of the baseline and fast-fluctuator models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{fastfluct_cells, DirichletParams};
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::model::{walk_cells, Binning, CountsBlock, StepProbs};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::scalar::{xlogy, Real};
use crate::special::ln_gamma;

/// Probabilities are floored here inside likelihoods so that logs stay finite.
pub const PROB_FLOOR: f64 = 1e-15;

/// Counts blocks for several `(N, t)` pairs sharing one binning scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr")]
pub struct Dataset {
    blocks: Vec<CountsBlock>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRepr {
    blocks: Vec<CountsBlock>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;
    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::new(r.blocks)
    }
}

impl Dataset {
    /// Repeated `(N, t)` labels are allowed: the likelihood is additive, so a
    /// duplicated block simply counts twice.
    pub fn new(blocks: Vec<CountsBlock>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::Data("a dataset needs at least one block".into()))?;
        let b = first.binning();
        if let Some(bad) = blocks.iter().find(|k| k.binning() != b) {
            return Err(Error::Binning(format!(
                "blocks mix {:?} and {:?} binning",
                b,
                bad.binning()
            )));
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[CountsBlock] {
        &self.blocks
    }

    pub fn binning(&self) -> Binning {
        self.blocks[0].binning()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_samples(&self) -> u64 {
        self.blocks.iter().map(|b| b.n_samples()).sum()
    }

    pub fn rebin(&self, b: usize) -> Result<Self> {
        Self::new(self.blocks.iter().map(|k| k.rebin(b)).collect::<Result<_>>()?)
    }

    /// SHA-256 of the compact JSON encoding, used to tie results to inputs.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("dataset serializes"))
    }
}

/// Multinomial log-probability with cell probabilities floored at
/// [`PROB_FLOOR`].
fn floored_log_pmf<T: Real>(block: &CountsBlock, cells: &[T]) -> T {
    let floor = T::lit(PROB_FLOOR);
    let lg = |k: u64| -> T { if k < 2 { T::zero() } else { ln_gamma(T::from_u64(k + 1).unwrap()) } };
    let mut acc = lg(block.n_samples());
    for (&z, &p) in block.counts().iter().zip(cells) {
        if z > 0 {
            acc = acc + xlogy(z, p.max(floor).ln()) - lg(z);
        }
    }
    acc
}

/// Sums per-block terms evaluated in parallel, in block order.
fn sum_blocks<T: Real>(data: &Dataset, term: impl Fn(&CountsBlock) -> T + Sync + Send) -> T {
    let parts: Vec<T> = data.blocks.par_iter().map(&term).collect();
    parts.into_iter().fold(T::zero(), |a, b| a + b)
}

/// `Σ_i ln Pr(Z_i = z_i | θ)` under the homogeneous walk.
pub fn loglik_baseline<T: Real>(theta: &StepProbs<T>, data: &Dataset) -> T {
    let binning = data.binning();
    sum_blocks(data, |b| floored_log_pmf(b, &walk_cells(theta, b.t(), binning)))
}

/// `Σ_i ln Pr(Z_i = z_i | α)` with Dirichlet-multinomial step counts.
pub fn loglik_fastfluct<T: Real>(alpha: &DirichletParams<T>, data: &Dataset) -> T {
    let binning = data.binning();
    sum_blocks(data, |b| floored_log_pmf(b, &fastfluct_cells(alpha, b.t(), binning)))
}

/// Fitted parameters, tagged by model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "lowercase")]
pub enum ModelParams {
    Baseline(StepProbs),
    Fastfluct(DirichletParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub init_log_likelihood: f64,
    pub converged: bool,
    pub n_evals: usize,
    /// The optimum sits on (or runs off towards) the edge of the parameter space.
    pub at_boundary: bool,
    pub dataset_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Convergence threshold on the simplex size in logit/log coordinates.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_evals: 10_000,
        }
    }
}

impl FitOptions {
    fn nm(&self, step: f64) -> NelderMeadOptions {
        NelderMeadOptions {
            tol: self.tol,
            max_evals: self.max_evals,
            initial_step: step,
        }
    }
}

/// Logit coordinates `(ln P−/P0, ln P+/P0)`.
fn to_logit(theta: &StepProbs) -> [f64; 2] {
    [(theta.p_minus() / theta.p_zero()).ln(), (theta.p_plus() / theta.p_zero()).ln()]
}

fn from_logit(u: &[f64]) -> StepProbs {
    // Softmax with the largest exponent factored out.
    let m = u[0].max(u[1]).max(0.0);
    let w = [(u[0] - m).exp(), (-m).exp(), (u[1] - m).exp()];
    StepProbs::from_weights(w).expect("softmax weights are positive")
}

/// Moment estimate of `(P+, P−)` pooled over blocks with `t ≤ 5` (or all
/// blocks if there are none): `E X = t(P+ − P−)` and
/// `Var X = t(P+ + P− − (P+ − P−)²)`. Clamped into the interior.
pub fn moment_init(data: &Dataset) -> StepProbs {
    let short: Vec<&CountsBlock> = data.blocks.iter().filter(|b| b.t() <= 5 && b.t() > 0).collect();
    let use_blocks: Vec<&CountsBlock> = if short.is_empty() {
        data.blocks.iter().filter(|b| b.t() > 0).collect()
    } else {
        short
    };
    let (mut wd, mut ws, mut wn) = (0.0, 0.0, 0.0);
    for b in use_blocks {
        let n = b.n_samples() as f64;
        let t = b.t() as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for (x, &c) in b.labels().zip(b.counts()) {
            s1 += x as f64 * c as f64;
            s2 += (x * x) as f64 * c as f64;
        }
        let mean = s1 / n;
        let var = (s2 / n - mean * mean).max(0.0);
        let d = mean / t;
        wd += n * d;
        ws += n * (var / t + d * d);
        wn += n;
    }
    let (d, s) = if wn > 0.0 { (wd / wn, ws / wn) } else { (0.0, 0.0) };
    let clamp = |v: f64| v.clamp(1e-8, 0.3);
    let pp = clamp((s + d) / 2.0);
    let pm = clamp((s - d) / 2.0);
    StepProbs::from_rates(pp, pm).expect("clamped rates are interior")
}

/// Maximizes [`loglik_baseline`] over the open simplex.
///
/// The search runs in logit coordinates, so the result is always a valid
/// `StepProbs`. Fits whose error rates collapse below 1e-12 are flagged as
/// boundary fits.
pub fn fit_baseline(data: &Dataset, init: Option<&StepProbs>, opts: FitOptions) -> Result<FitResult> {
    let init = match init {
        Some(th) => th.clone(),
        None => moment_init(data),
    };
    if init.as_array().iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Domain("initial point must lie strictly inside the simplex".into()));
    }
    let u0 = to_logit(&init);
    // Evaluated at the round-tripped start, which is the optimizer's first vertex.
    let init_ll = loglik_baseline(&from_logit(&u0), data);
    let m = nelder_mead(|u| -loglik_baseline(&from_logit(u), data), &u0, opts.nm(0.5));
    let theta = from_logit(&m.x);
    let ll = -m.value;
    let at_boundary = theta.as_array().iter().any(|&p| p < 1e-12);
    Ok(FitResult {
        params: ModelParams::Baseline(theta),
        log_likelihood: ll,
        init_log_likelihood: init_ll,
        converged: m.converged && ll.is_finite(),
        n_evals: m.n_evals,
        at_boundary,
        dataset_digest: data.digest(),
    })
}

/// Maximizes [`loglik_fastfluct`] over `ln α ∈ ℝ³`.
///
/// Flagged as a boundary fit when a mean fraction falls below 1e-12 or the
/// concentration exceeds 1e15, where the model is indistinguishable from
/// the baseline.
pub fn fit_fastfluct(data: &Dataset, init: &DirichletParams, opts: FitOptions) -> Result<FitResult> {
    let v0: Vec<f64> = init.alpha().iter().map(|a| a.ln()).collect();
    let objective = |v: &[f64]| match DirichletParams::new(v[0].exp(), v[1].exp(), v[2].exp()) {
        Ok(a) => -loglik_fastfluct(&a, data),
        Err(_) => f64::INFINITY,
    };
    let init_ll = -objective(&v0);
    let m = nelder_mead(objective, &v0, opts.nm(1.0));
    let alpha = DirichletParams::new(m.x[0].exp(), m.x[1].exp(), m.x[2].exp())?;
    let f = alpha.fractions();
    let at_boundary = f.p_minus() < 1e-12 || f.p_plus() < 1e-12 || alpha.total() > 1e15;
    let ll = -m.value;
    Ok(FitResult {
        params: ModelParams::Fastfluct(alpha),
        log_likelihood: ll,
        init_log_likelihood: init_ll,
        converged: m.converged && ll.is_finite(),
        n_evals: m.n_evals,
        at_boundary,
        dataset_digest: data.digest(),
    })
}
