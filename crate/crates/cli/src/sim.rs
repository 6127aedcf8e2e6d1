//! Synthetic landscapes and datasets with known truth.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pointsource::mcmc::prior::sample_location;
use pointsource::mcmc::{ParameterState, PriorSpec};
use pointsource::observation::{simulate_samples, DesignPoint, SampleRecord, SusceptibilityDesign};
use pointsource::raster::{write_ascii_raster, CovariateRaster};
use pointsource::rates::RateFields;
use pointsource::solver::{solve_homogenized, SolverSettings};
use pointsource::{build_grid, Error, Extent, GridSpec, Month, Result};

/// Bundled simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// One source, smooth covariate.
    A,
    /// One source, patchy covariate.
    B,
    /// Two sources sharing an introduction date, smooth covariate.
    C,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::A, Setting::B, Setting::C];

    pub fn n_sources(self) -> usize {
        match self {
            Setting::C => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::A => "a",
            Setting::B => "b",
            Setting::C => "c",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Setting::A),
            "b" => Ok(Setting::B),
            "c" => Ok(Setting::C),
            _ => Err(Error::Config(format!(
                "unknown setting {s:?} (expected a, b or c)"
            ))),
        }
    }
}

/// Sampling design and landscape size for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Fine cells per side of the square study area.
    pub fine_cells: usize,
    pub fine_cell_km: f64,
    /// Coarse-to-fine cell ratio.
    pub ratio: usize,
    pub n_samples: usize,
    pub years: i64,
    pub first_sample: Month,
    /// Length of the introduction window before the first sample, months.
    pub window_months: i64,
    /// Holdout records drawn over the year after the fitting data.
    pub holdout_samples: usize,
    /// Seed for the covariate landscape (fixed across replicates).
    pub landscape_seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            fine_cells: 40,
            fine_cell_km: 10.0,
            ratio: 4,
            n_samples: 400,
            years: 4,
            first_sample: Month::from_ym(2008, 1),
            window_months: 60,
            holdout_samples: 100,
            landscape_seed: 11,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fine_cells == 0 || self.ratio == 0 || !self.fine_cells.is_multiple_of(self.ratio) {
            return Err(Error::Config(format!(
                "fine_cells ({}) must be a positive multiple of ratio ({})",
                self.fine_cells, self.ratio
            )));
        }
        if !(self.fine_cell_km > 0.0) {
            return Err(Error::Config("fine_cell_km must be positive".into()));
        }
        if self.n_samples == 0 || self.years < 1 || self.window_months < 1 {
            return Err(Error::Config(
                "n_samples, years and window_months must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn prior(&self) -> PriorSpec {
        PriorSpec {
            t0_start: self.first_sample.offset(-self.window_months),
            t0_end: self.first_sample.offset(-1),
            ..PriorSpec::with_default_window(self.first_sample)
        }
    }
}

/// Fixed parts of the truth: dynamics, susceptibility and initial mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub gamma0: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta: f64,
}

/// A landscape plus everything about the truth that does not vary between
/// replicates.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub setting: Setting,
    pub design: DesignConfig,
    pub grid: GridSpec,
    pub covariates: CovariateRaster,
    pub diffusion_layers: Vec<String>,
    pub growth_layers: Vec<String>,
    pub species: Vec<String>,
    pub dynamics: Dynamics,
}

pub const SPECIES: [&str; 4] = ["MYLU", "MYSE", "PESU", "EPFU"];

fn smooth_layer(grid: &GridSpec) -> Vec<f64> {
    let e = grid.extent();
    let (w, h) = (e.width(), e.height());
    (0..grid.n_fine())
        .map(|f| {
            let p = grid.fine_center(f);
            let (u, v) = ((p.x - e.x_min) / w, (p.y - e.y_min) / h);
            0.5 * (2.0 * std::f64::consts::PI * u).sin() + 0.5 * (std::f64::consts::PI * v).cos()
        })
        .collect()
}

/// Binary patches of 5×5 fine cells, each present with probability 0.35.
fn patchy_layer(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const PATCH: usize = 5;
    let rows = grid.n_fine_rows().div_ceil(PATCH);
    let cols = grid.n_fine_cols().div_ceil(PATCH);
    let on: Vec<bool> = (0..rows * cols)
        .map(|_| rng.random::<f64>() < 0.35)
        .collect();
    (0..grid.n_fine())
        .map(|f| {
            let (r, c) = grid.fine_row_col(f);
            f64::from(u8::from(on[(r / PATCH) * cols + c / PATCH]))
        })
        .collect()
}

/// The desk-scale landscape for `setting`.
pub fn desk_scenario(setting: Setting, design: DesignConfig) -> Result<Scenario> {
    design.validate()?;
    let side = design.fine_cells as f64 * design.fine_cell_km;
    let grid = build_grid(
        Extent::new(0.0, 0.0, side, side),
        design.fine_cell_km,
        design.fine_cell_km * design.ratio as f64,
        None,
    )?;
    let mut covariates = CovariateRaster::new(&grid);
    let (layer, values, effect) = match setting {
        Setting::B => {
            let mut rng = pointsource::mcmc::run::stream_rng(design.landscape_seed, 0);
            ("karst", patchy_layer(&grid, &mut rng), 1.0)
        }
        _ => ("relief", smooth_layer(&grid), 0.5),
    };
    covariates.add_layer(&grid, layer, values)?;
    Ok(Scenario {
        setting,
        design,
        grid,
        covariates,
        diffusion_layers: vec![layer.to_string()],
        growth_layers: Vec::new(),
        species: SPECIES.iter().map(|s| s.to_string()).collect(),
        dynamics: Dynamics {
            alpha0: 1.0,
            alpha: vec![effect],
            gamma0: 0.3,
            gamma: Vec::new(),
            beta: vec![0.5, 0.0, -0.5, -1.0],
            theta: 1.0,
        },
    })
}

/// The truth for one dataset plus its sampling designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub setting: Setting,
    pub species: Vec<String>,
    pub state: ParameterState,
    #[serde(skip)]
    pub design: Vec<DesignPoint>,
    #[serde(skip)]
    pub holdout: Vec<DesignPoint>,
}

impl SimTruth {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string(self).map_err(|e| Error::Config(format!("truth record: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn design_points(
    scenario: &Scenario,
    n: usize,
    start: Month,
    months: i64,
    rng: &mut ChaCha8Rng,
) -> Vec<DesignPoint> {
    let support: Vec<usize> = (0..scenario.grid.n_fine())
        .filter(|&f| scenario.grid.in_mask(f))
        .collect();
    let mut points: Vec<DesignPoint> = (0..n)
        .map(|_| DesignPoint {
            location: sample_location(&scenario.grid, &support, rng),
            date: start.offset(rng.random_range(0..months)),
            species: scenario.species[rng.random_range(0..scenario.species.len())].clone(),
        })
        .collect();
    points.sort_by_key(|p| p.date);
    points
}

/// Draws a truth for `scenario`: `ω` and `t0` from their priors, the
/// remaining parameters fixed by the scenario, and fresh sampling designs.
pub fn draw_truth(scenario: &Scenario, rng: &mut ChaCha8Rng) -> SimTruth {
    let d = &scenario.design;
    let prior = d.prior();
    let support = scenario.grid.support_cells();
    let j = scenario.setting.n_sources();
    let dy = &scenario.dynamics;
    let state = ParameterState {
        alpha0: dy.alpha0,
        alpha: dy.alpha.clone(),
        gamma0: dy.gamma0,
        gamma: dy.gamma.clone(),
        beta: dy.beta.clone(),
        omega: (0..j)
            .map(|_| sample_location(&scenario.grid, &support, rng))
            .collect(),
        t0: prior.sample_t0(rng),
        theta: vec![dy.theta; j],
    };
    let mut design = design_points(scenario, d.n_samples, d.first_sample, 12 * d.years, rng);
    // Pin the first record to the start of the design so the prior window
    // ends exactly one month before the data.
    design[0].date = d.first_sample;
    let holdout = design_points(
        scenario,
        d.holdout_samples,
        d.first_sample.offset(12 * d.years),
        12,
        rng,
    );
    SimTruth {
        setting: scenario.setting,
        species: scenario.species.clone(),
        state,
        design,
        holdout,
    }
}

/// Where a replicate's dynamics, susceptibility and initial mass come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthSource {
    /// The scenario's fixed values.
    Fixed,
    /// Fresh draws from the fitting prior, kept only when the simulated
    /// dataset has a usable share of positives.
    #[default]
    Prior,
}

/// Share of positive records a prior-drawn dataset must have to be kept.
pub const POSITIVE_SHARE: std::ops::RangeInclusive<f64> = 0.05..=0.8;
const MAX_TRUTH_DRAWS: usize = 2000;

/// Like [`draw_truth`], but with every parameter drawn from `prior`.
pub fn draw_truth_from_prior(
    scenario: &Scenario,
    prior: &PriorSpec,
    rng: &mut ChaCha8Rng,
) -> SimTruth {
    let mut truth = draw_truth(scenario, rng);
    let s = &mut truth.state;
    s.alpha0 = prior.sample_coefficient(rng);
    s.alpha = s
        .alpha
        .iter()
        .map(|_| prior.sample_coefficient(rng))
        .collect();
    s.gamma0 = prior.sample_coefficient(rng);
    s.gamma = s
        .gamma
        .iter()
        .map(|_| prior.sample_coefficient(rng))
        .collect();
    s.beta = s.beta.iter().map(|_| prior.sample_beta(rng)).collect();
    s.theta = s
        .theta
        .iter()
        .map(|_| prior.sample_log_theta(rng).exp())
        .collect();
    truth
}

/// A truth and its dataset. With [`TruthSource::Prior`], draws are repeated
/// until the dataset's positive share falls in [`POSITIVE_SHARE`]. The filter
/// looks only at the data, so posteriors stay calibrated over kept datasets.
pub fn simulate_replicate(
    scenario: &Scenario,
    source: TruthSource,
    solver: &SolverSettings,
    rng: &mut ChaCha8Rng,
) -> Result<(SimTruth, Dataset)> {
    if source == TruthSource::Fixed {
        let truth = draw_truth(scenario, rng);
        let data = generate_dataset(scenario, &truth, solver, rng)?;
        return Ok((truth, data));
    }
    let prior = scenario.design.prior();
    for _ in 0..MAX_TRUTH_DRAWS {
        let truth = draw_truth_from_prior(scenario, &prior, rng);
        let Ok(data) = generate_dataset(scenario, &truth, solver, rng) else {
            continue;
        };
        let share =
            data.samples.iter().filter(|s| s.y == 1).count() as f64 / data.samples.len() as f64;
        if POSITIVE_SHARE.contains(&share) {
            return Ok((truth, data));
        }
    }
    Err(Error::Domain(format!(
        "no prior draw in {MAX_TRUTH_DRAWS} gave a positive share in {POSITIVE_SHARE:?}"
    )))
}

/// Simulated fitting and holdout samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SampleRecord>,
    pub holdout: Vec<SampleRecord>,
}

/// Solves the PDE under the truth and draws outcomes at the design points.
pub fn generate_dataset(
    scenario: &Scenario,
    truth: &SimTruth,
    solver: &SolverSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    let s = &truth.state;
    if !(s.theta.iter().all(|&t| t > 0.0)) {
        return Err(Error::Domain("initial mass must be positive".into()));
    }
    let t0 = s.t0;
    if let Some(p) = truth
        .design
        .iter()
        .chain(&truth.holdout)
        .find(|p| p.date <= t0)
    {
        return Err(Error::Domain(format!(
            "design point dated {} does not follow the introduction ({t0})",
            p.date
        )));
    }
    let rates = RateFields::from_regression(
        &scenario.grid,
        &scenario.covariates,
        s.alpha0,
        &s.alpha,
        &scenario.diffusion_layers,
        s.gamma0,
        &s.gamma,
        &scenario.growth_layers,
    )?;
    let last = truth
        .design
        .iter()
        .chain(&truth.holdout)
        .map(|p| p.date)
        .max()
        .unwrap_or(t0);
    let trajectory = solve_homogenized(
        &s.events(),
        &rates,
        &scenario.grid,
        last.index() as f64,
        solver,
    )?;
    let design = SusceptibilityDesign::new(scenario.species.clone())?;
    let samples = simulate_samples(&truth.design, &trajectory, &s.beta, &design, rng)?;
    let holdout = simulate_samples(&truth.holdout, &trajectory, &s.beta, &design, rng)?;
    Ok(Dataset { samples, holdout })
}

/// Writes each covariate layer as `<dir>/<name>.asc`.
pub fn write_covariates(dir: &Path, scenario: &Scenario) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for name in scenario
        .diffusion_layers
        .iter()
        .chain(&scenario.growth_layers)
    {
        let path = dir.join(format!("{name}.asc"));
        write_ascii_raster(&path, &scenario.grid, scenario.covariates.layer(name)?)?;
    }
    Ok(())
}
