//! Timeline simulation with step probabilities modulated by two-level
//! fluctuators, plus the trace diagnostics and the noise-threshold campaign.

mod campaign;
mod ensemble;
mod psd;
mod schedule;
mod timeline;
mod walks;

pub use campaign::{
    noise_campaign, run_campaign_point, slowdrift_concentration, BlockPValue, CampaignConfig, CampaignReport,
    MeanRates, ModelTest, RunOutput, RunReport, CAMPAIGN_SCHEMA,
};
pub use ensemble::{build_ensemble, Fluctuator, FluctuatorEnsemble, FluctuatorProcess, RateSpec};
pub use psd::{trace_psd, PsdEstimate, DEFAULT_SEGMENT};
pub use schedule::{Burst, BurstSchedule, ScheduleSpec};
pub use timeline::{
    sample_endpoint, simulate_timeline, simulate_timeline_into, trace_rsd, NoiseTrace, TraceMoments, TraceSink,
    TraceStats,
};
pub use walks::{nonstationary_pmf, sample_nonstationary, simulate_memory_walk, MemoryWalk};
