//! Run configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the file.
//! Everything is validated by [`RunConfig::validate`] before any solver or
//! sampler work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pointsource::mcmc::{MCMCConfig, PriorSpec};
use pointsource::solver::SolverSettings;
use pointsource::{Error, Month, Result};

use crate::sim::{DesignConfig, Setting, TruthSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub fine_cell_km: f64,
    pub coarse_cell_km: f64,
    /// Optional raster whose NODATA cells lie outside the study area.
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateConfig {
    /// Layer name to raster path.
    pub layers: BTreeMap<String, PathBuf>,
    /// Layers entering the diffusion regression.
    pub diffusion: Vec<String>,
    /// Layers entering the growth regression.
    pub growth: Vec<String>,
    /// Layers used by the GLM baseline (defaults to every layer).
    pub baseline: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub samples: PathBuf,
    /// Held-out records to forecast and score.
    pub holdout: Option<PathBuf>,
    /// Species order for the susceptibility design; defaults to the order
    /// of first appearance in the samples.
    pub species: Option<Vec<String>>,
}

/// Prior hyperparameters; the introduction window defaults to the 30 years
/// before the first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma_beta: f64,
    pub sigma_alpha_gamma: f64,
    pub theta_log_mean: f64,
    pub theta_log_sd: f64,
    pub t0_start: Option<Month>,
    pub t0_end: Option<Month>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let d = PriorSpec::with_default_window(Month(0));
        PriorConfig {
            sigma_beta: d.sigma_beta,
            sigma_alpha_gamma: d.sigma_alpha_gamma,
            theta_log_mean: d.theta_log_mean,
            theta_log_sd: d.theta_log_sd,
            t0_start: None,
            t0_end: None,
        }
    }
}

impl PriorConfig {
    pub fn resolve(&self, first_sample: Month) -> PriorSpec {
        let d = PriorSpec::with_default_window(first_sample);
        PriorSpec {
            sigma_beta: self.sigma_beta,
            sigma_alpha_gamma: self.sigma_alpha_gamma,
            theta_log_mean: self.theta_log_mean,
            theta_log_sd: self.theta_log_sd,
            t0_start: self.t0_start.unwrap_or(d.t0_start),
            t0_end: self.t0_end.unwrap_or(d.t0_end),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Credible level for intervals and regions.
    pub level: f64,
    /// Kernel-smooth the location posterior before computing regions.
    pub smooth_location_map: bool,
    /// Lower bound on the draws used for forecasts.
    pub forecast_min_draws: usize,
    /// Reference location for the exceedance region, km.
    pub reference: Option<[f64; 2]>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            level: 0.9,
            smooth_location_map: false,
            forecast_min_draws: pointsource::posterior::forecast::FORECAST_MIN_DRAWS,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub settings: Vec<Setting>,
    pub replicates: usize,
    pub design: DesignConfig,
    /// Sampler settings for each replicate fit (the seed is derived per
    /// replicate).
    pub mcmc: MCMCConfig,
    /// Smooth the location posterior before the HPD coverage check.
    pub smooth_location_map: bool,
    /// `prior` draws every parameter per replicate; `fixed` keeps the
    /// setting's dynamics and draws only the date and place.
    pub truth: TruthSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            settings: vec![Setting::A],
            replicates: 50,
            design: DesignConfig::default(),
            mcmc: MCMCConfig {
                n_chains: 2,
                n_iterations: 20_000,
                n_burnin: 10_000,
                thin: 5,
                ..MCMCConfig::default()
            },
            smooth_location_map: true,
            truth: TruthSource::Prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: Option<GridConfig>,
    pub covariates: CovariateConfig,
    pub data: Option<DataConfig>,
    pub prior: PriorConfig,
    pub solver: SolverSettings,
    pub mcmc: MCMCConfig,
    pub output: OutputConfig,
    pub experiment: ExperimentConfig,
    /// Number of sources in the fitted model.
    pub n_sources: usize,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            grid: None,
            covariates: CovariateConfig::default(),
            data: None,
            prior: PriorConfig::default(),
            solver: SolverSettings::default(),
            mcmc: MCMCConfig::default(),
            output: OutputConfig::default(),
            experiment: ExperimentConfig::default(),
            n_sources: 1,
            base_dir: PathBuf::from("."),
        }
    }
}

/// What a command needs from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Fit,
    Forecast,
    Experiment,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves `p` against the configuration file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    fn check_file(&self, what: &str, p: &Path) -> Result<()> {
        let full = self.resolve(p);
        if full.is_file() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what} file {} does not exist",
                full.display()
            )))
        }
    }

    /// Checks everything `purpose` needs without touching data contents.
    pub fn validate(&self, purpose: Purpose) -> Result<()> {
        self.solver.validate()?;
        let o = &self.output;
        if !(o.level > 0.0 && o.level < 1.0) {
            return Err(Error::Config(format!(
                "output.level must lie in (0, 1), got {}",
                o.level
            )));
        }
        if o.forecast_min_draws == 0 {
            return Err(Error::Config(
                "output.forecast_min_draws must be positive".into(),
            ));
        }
        match purpose {
            Purpose::Experiment => {
                let e = &self.experiment;
                if e.replicates == 0 {
                    return Err(Error::Config(
                        "experiment.replicates must be at least 1".into(),
                    ));
                }
                if e.replicates < 20 {
                    log::warn!(
                        "{} replicates give a coarse coverage estimate (20 or more advised)",
                        e.replicates
                    );
                }
                if e.settings.is_empty() {
                    return Err(Error::Config("experiment.settings is empty".into()));
                }
                e.design.validate()?;
                e.mcmc.validate()?;
            }
            Purpose::Fit | Purpose::Forecast => {
                self.mcmc.validate()?;
                if self.n_sources == 0 {
                    return Err(Error::Config("n_sources must be at least 1".into()));
                }
                let g = self
                    .grid
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [grid] section".into()))?;
                if let Some(m) = &g.mask {
                    self.check_file("mask", m)?;
                }
                let c = &self.covariates;
                for name in c
                    .diffusion
                    .iter()
                    .chain(&c.growth)
                    .chain(c.baseline.iter().flatten())
                {
                    if !c.layers.contains_key(name) {
                        return Err(Error::Config(format!(
                            "covariate {name} has no [covariates.layers] entry"
                        )));
                    }
                }
                for (name, p) in &c.layers {
                    self.check_file(&format!("covariate {name}"), p)?;
                }
                let d = self
                    .data
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [data] section".into()))?;
                self.check_file("samples", &d.samples)?;
                match (&d.holdout, purpose) {
                    (Some(h), _) => self.check_file("holdout", h)?,
                    (None, Purpose::Forecast) => {
                        return Err(Error::Config("forecasting needs data.holdout".into()))
                    }
                    _ => {}
                }
                let p = &self.prior;
                if let (Some(s), Some(e)) = (p.t0_start, p.t0_end) {
                    if e < s {
                        return Err(Error::Config(format!("prior window {s}..{e} is empty")));
                    }
                }
                p.resolve(Month(i64::MAX / 2)).validate(None)?;
            }
        }
        Ok(())
    }
}
