//! Test-time machinery: MAP refinement with the networks frozen,
//! HMC-within-Gibbs over each sample's latents and missing values, and
//! posterior summaries.

mod config;
mod dual;
mod hmc;
mod refine;
mod summary;

pub use config::HmcConfig;
pub use dual::{DualAveraging, DA_GAMMA, DA_KAPPA, DA_T0};
pub use hmc::{
    hmc_rows, hmc_within_gibbs, Block, BlockStep, ChainStats, PosteriorDraws, RowTarget, SweepLog,
    CHUNK_ROWS,
};
pub use refine::{map_refine, Refined};
pub use summary::{
    effective_sample_size, mean, posterior_mean, posterior_summaries, quantile_sorted, sample_sd,
    PosteriorSummary, PredictionIntervals,
};
