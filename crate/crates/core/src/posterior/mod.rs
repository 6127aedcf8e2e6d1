//! Inferential products derived from retained draws.

pub mod forecast;
pub mod glm;
pub mod maps;
pub mod regions;
pub mod summary;

pub use forecast::{
    forecast, forecast_misclassification, misclassification_rate, ForecastRecord, ForecastResult,
};
pub use glm::{fit_logistic, glm_baseline, BaselineDesign, GlmFit, GlmOptions};
pub use maps::{location_posterior_map, posterior_rate_maps, RateMaps};
pub use regions::{exceedance_region, hpd_region, CredibleRegion, ExceedanceRegion};
pub use summary::{summarize_marginals, PosteriorSummary, ScalarSummary};
