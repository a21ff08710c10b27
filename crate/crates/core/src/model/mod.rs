//! The homogeneous three-outcome random walk and its counts model.

mod counts;
mod dist;
mod pmf;
mod probs;
mod sample;

pub use counts::{counts_log_pmf, rebin_probs, Binning, CountsBlock};
pub use dist::WalkDistribution;
pub(crate) use pmf::symmetric_total;
pub use pmf::{crossover_scale, return_probability_asymptotic, walk_cells, walk_pmf, Regime};
pub use probs::StepProbs;
pub use sample::sample_endpoints;
