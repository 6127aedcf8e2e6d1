//! The fit / summarize / forecast / simulate stages behind the CLI.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use pointsource::mcmc::state::scalar_names;
use pointsource::mcmc::{
    chain_diagnostics, read_chains, run_mcmc, write_chains, ChainLayout, ChainOutput,
    DiagnosticsSummary, FitProblem, MCMCConfig, PriorSpec,
};
use pointsource::observation::{
    read_samples, write_samples, DesignPoint, SampleRecord, SusceptibilityDesign,
};
use pointsource::posterior::forecast::label_for;
use pointsource::posterior::{
    exceedance_region, forecast, forecast_misclassification, glm_baseline, hpd_region,
    location_posterior_map, misclassification_rate, posterior_rate_maps, summarize_marginals,
    BaselineDesign, GlmOptions, PosteriorSummary,
};
use pointsource::raster::{read_ascii_raster, write_ascii_raster, CovariateRaster};
use pointsource::solver::SolverSettings;
use pointsource::{build_grid, Error, Extent, GridSpec, Month, Point, Result};

use crate::config::{CovariateConfig, DataConfig, GridConfig, Purpose, RunConfig};
use crate::sim::{
    desk_scenario, draw_truth, generate_dataset, write_covariates, DesignConfig, Setting,
};

/// Pipeline stage, used to say where a run failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Simulate,
    Fit,
    Summarize,
    Forecast,
    Experiment,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Simulate => "simulate",
            Stage::Fit => "fit",
            Stage::Summarize => "summarize",
            Stage::Forecast => "forecast",
            Stage::Experiment => "experiment",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// Attaches a stage to core errors.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Everything a fit needs, read from disk.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub grid: GridSpec,
    pub covariates: CovariateRaster,
    pub diffusion_layers: Vec<String>,
    pub growth_layers: Vec<String>,
    pub baseline_layers: Vec<String>,
    pub design: SusceptibilityDesign,
    pub samples: Vec<SampleRecord>,
    pub holdout: Option<Vec<SampleRecord>>,
    pub prior: PriorSpec,
}

impl Inputs {
    pub fn problem(&self, solver: &SolverSettings, n_sources: usize) -> Result<FitProblem> {
        FitProblem::new(
            self.grid.clone(),
            self.covariates.clone(),
            self.diffusion_layers.clone(),
            self.growth_layers.clone(),
            self.design.clone(),
            self.samples.clone(),
            *solver,
            self.prior.clone(),
            n_sources,
        )
    }

    pub fn layout(&self, n_sources: usize) -> ChainLayout {
        ChainLayout {
            diffusion_layers: self.diffusion_layers.clone(),
            growth_layers: self.growth_layers.clone(),
            species: self.design.species_order.clone(),
            n_sources,
        }
    }
}

/// Reads the grid, mask, covariates and samples named by `cfg`.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let g = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("missing [grid] section".into()))?;
    let mut grid = build_grid(
        Extent::new(g.x_min, g.y_min, g.x_max, g.y_max),
        g.fine_cell_km,
        g.coarse_cell_km,
        None,
    )?;
    if let Some(m) = &g.mask {
        read_ascii_raster(&cfg.resolve(m), &grid)?.restrict(&mut grid)?;
    }
    let c = &cfg.covariates;
    let mut layers = Vec::new();
    for (name, path) in &c.layers {
        let layer = read_ascii_raster(&cfg.resolve(path), &grid)?;
        layer.restrict(&mut grid)?;
        layers.push((name, layer.values));
    }
    let mut covariates = CovariateRaster::new(&grid);
    for (name, values) in layers {
        covariates.add_layer(&grid, name, values)?;
    }

    let d = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("missing [data] section".into()))?;
    let samples = read_samples(&cfg.resolve(&d.samples))?;
    let first = samples
        .iter()
        .map(|s| s.date)
        .min()
        .ok_or_else(|| Error::InsufficientData("the samples file holds no records".into()))?;
    let design = match &d.species {
        Some(order) => SusceptibilityDesign::new(order.clone())?,
        None => SusceptibilityDesign::from_samples(samples.iter().map(|s| s.species.as_str()))?,
    };
    let holdout = d
        .holdout
        .as_ref()
        .map(|h| read_samples(&cfg.resolve(h)))
        .transpose()?;
    let prior = cfg.prior.resolve(first);
    prior.validate(Some(first))?;
    Ok(Inputs {
        grid,
        covariates,
        diffusion_layers: c.diffusion.clone(),
        growth_layers: c.growth.clone(),
        baseline_layers: c
            .baseline
            .clone()
            .unwrap_or_else(|| c.layers.keys().cloned().collect()),
        design,
        samples,
        holdout,
        prior,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the sampler and writes `chains.csv`, then the summaries. Returns the
/// chains.
pub fn fit(cfg: &RunConfig, out_dir: &Path) -> StageResult<Vec<ChainOutput>> {
    cfg.validate(Purpose::Fit).at(Stage::Config)?;
    let inputs = load_inputs(cfg).at(Stage::Load)?;
    let problem = inputs.problem(&cfg.solver, cfg.n_sources).at(Stage::Load)?;
    let mcmc = MCMCConfig {
        seed: cfg.seed,
        ..cfg.mcmc.clone()
    };
    let chains = run_mcmc(&problem, &mcmc).at(Stage::Fit)?;
    create_dir(out_dir).at(Stage::Fit)?;
    write_chains(
        &out_dir.join("chains.csv"),
        &inputs.layout(cfg.n_sources),
        &chains,
    )
    .at(Stage::Fit)?;
    summarize_chains(cfg, &inputs, &chains, out_dir).at(Stage::Summarize)?;
    Ok(chains)
}

/// Re-reads `chains` and writes the summaries.
pub fn summarize(cfg: &RunConfig, chains: &Path, out_dir: &Path) -> StageResult<()> {
    cfg.validate(Purpose::Fit).at(Stage::Config)?;
    let inputs = load_inputs(cfg).at(Stage::Load)?;
    let chains = load_chains(&inputs, cfg.n_sources, chains).at(Stage::Load)?;
    create_dir(out_dir).at(Stage::Summarize)?;
    summarize_chains(cfg, &inputs, &chains, out_dir).at(Stage::Summarize)
}

fn load_chains(inputs: &Inputs, n_sources: usize, path: &Path) -> Result<Vec<ChainOutput>> {
    let (layout, chains) = read_chains(path)?;
    if layout != inputs.layout(n_sources) {
        return Err(Error::Config(format!(
            "{} was written for a different parameter layout than the configuration describes",
            path.display()
        )));
    }
    Ok(chains)
}

fn write_diagnostics(path: &Path, d: &DiagnosticsSummary) -> Result<()> {
    let mut text = String::from("parameter,rhat,ess\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
    for p in &d.parameters {
        let _ = writeln!(text, "{},{},{}", p.name, opt(p.rhat), opt(p.ess));
    }
    write_text(path, &text)
}

fn write_acceptance(path: &Path, chains: &[ChainOutput]) -> Result<()> {
    let mut text = String::from("chain,block,proposed,accepted,rate,solver_failures\n");
    for c in chains {
        for (name, b) in c.acceptance.blocks() {
            let _ = writeln!(
                text,
                "{},{name},{},{},{:.4},{}",
                c.chain_id,
                b.proposed,
                b.accepted,
                b.rate(),
                c.blowups
            );
        }
    }
    write_text(path, &text)
}

/// Writes parameter summaries, diagnostics, maps and `report.txt`.
pub fn summarize_chains(
    cfg: &RunConfig,
    inputs: &Inputs,
    chains: &[ChainOutput],
    out_dir: &Path,
) -> Result<()> {
    let level = cfg.output.level;
    let grid = &inputs.grid;
    let names = scalar_names(
        &inputs.diffusion_layers,
        &inputs.growth_layers,
        &inputs.design.species_order,
        cfg.n_sources,
    );
    let summary = summarize_marginals(chains, &names, level)?;
    summary.write_parameters(&out_dir.join("parameters.csv"))?;
    summary.write_year_pmf(&out_dir.join("year_pmf.csv"))?;
    let diagnostics = chain_diagnostics(chains, &names);
    write_diagnostics(&out_dir.join("diagnostics.csv"), &diagnostics)?;
    write_acceptance(&out_dir.join("acceptance.csv"), chains)?;

    let maps = out_dir.join("maps");
    create_dir(&maps)?;
    let location = location_posterior_map(chains, grid, cfg.output.smooth_location_map)?;
    write_ascii_raster(&maps.join("location_posterior.asc"), grid, &location)?;
    let hpd = hpd_region(&location, grid, level)?;
    write_ascii_raster(&maps.join("hpd_region.asc"), grid, &hpd.indicator(grid))?;
    let exceedance = match cfg.output.reference {
        Some([x, y]) => {
            let e = exceedance_region(&location, grid, Point::new(x, y))?;
            write_ascii_raster(
                &maps.join("exceedance_region.asc"),
                grid,
                &e.region.indicator(grid),
            )?;
            Some(e)
        }
        None => None,
    };
    let rates = posterior_rate_maps(
        chains,
        &inputs.covariates,
        &inputs.diffusion_layers,
        &inputs.growth_layers,
    )?;
    write_ascii_raster(&maps.join("mu_mean.asc"), grid, &rates.mu)?;
    write_ascii_raster(&maps.join("lambda_mean.asc"), grid, &rates.lambda)?;

    let report = render_report(
        &summary,
        &diagnostics,
        chains,
        hpd.area_km2,
        hpd.level,
        exceedance.as_ref(),
        level,
    );
    write_text(&out_dir.join("report.txt"), &report)
}

fn render_report(
    summary: &PosteriorSummary,
    diagnostics: &DiagnosticsSummary,
    chains: &[ChainOutput],
    hpd_area: f64,
    hpd_mass: f64,
    exceedance: Option<&pointsource::posterior::ExceedanceRegion>,
    level: f64,
) -> String {
    let pct = (level * 100.0).round();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Posterior summary ({} draws, {} chains)",
        summary.n_draws,
        chains.len()
    );
    let _ = writeln!(out);
    if let Some(t0) = summary.get("t0") {
        let m = |v: f64| Month(v.round() as i64);
        let _ = writeln!(
            out,
            "Introduction date: median {}, {pct}% interval {} to {}",
            m(t0.median),
            m(t0.lower),
            m(t0.upper)
        );
    }
    if let Some((year, p)) = summary
        .year_pmf
        .iter()
        .copied()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
    {
        let _ = writeln!(
            out,
            "Most probable introduction year: {year} (probability {p:.3})"
        );
    }
    let _ = writeln!(
        out,
        "{pct}% HPD location region: {hpd_area:.0} km^2 (mass {hpd_mass:.3})"
    );
    if let Some(e) = exceedance {
        let _ = writeln!(
            out,
            "Exceedance region: {:.0} km^2, mass {:.3}, farthest cell {:.0} km at bearing {:.0} deg",
            e.region.area_km2, e.region.level, e.max_distance_km, e.bearing_deg
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<16} {:>12} {:>12} {:>12} {:>12}",
        "parameter", "mean", "median", "lower", "upper"
    );
    for p in &summary.parameters {
        let _ = writeln!(
            out,
            "{:<16} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            p.name, p.mean, p.median, p.lower, p.upper
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<16} {:>8} {:>10}", "parameter", "R-hat", "ESS");
    for p in &diagnostics.parameters {
        let r = p.rhat.map_or("-".to_string(), |v| format!("{v:.3}"));
        let e = p.ess.map_or("-".to_string(), |v| format!("{v:.0}"));
        let _ = writeln!(out, "{:<16} {:>8} {:>10}", p.name, r, e);
    }
    let _ = writeln!(out);
    for c in chains {
        // Chains read back from a file carry no acceptance counts.
        let rates: Vec<String> = c
            .acceptance
            .blocks()
            .iter()
            .filter(|(_, b)| b.proposed > 0)
            .map(|(n, b)| format!("{n} {:.2}", b.rate()))
            .collect();
        if !rates.is_empty() {
            let _ = writeln!(out, "chain {} acceptance: {}", c.chain_id, rates.join(", "));
        }
    }
    for w in &diagnostics.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Scores held-out records: model forecast against the GLM baseline and the
/// majority-class rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastComparison {
    pub n_scored: usize,
    pub model: f64,
    pub glm: f64,
    pub majority: f64,
}

/// Forecasts the holdout records from `chains` and compares against the
/// baselines. Writes `forecast.csv` and `forecast_scores.csv`.
pub fn forecast_holdout(
    cfg: &RunConfig,
    chains: &Path,
    out_dir: &Path,
) -> StageResult<ForecastComparison> {
    cfg.validate(Purpose::Forecast).at(Stage::Config)?;
    let inputs = load_inputs(cfg).at(Stage::Load)?;
    let chains = load_chains(&inputs, cfg.n_sources, chains).at(Stage::Load)?;
    let problem = inputs.problem(&cfg.solver, cfg.n_sources).at(Stage::Load)?;
    let holdout = inputs
        .holdout
        .as_ref()
        .ok_or_else(|| Error::Config("forecasting needs data.holdout".into()))
        .at(Stage::Load)?;
    create_dir(out_dir).at(Stage::Forecast)?;
    score_holdout(cfg, &inputs, &problem, &chains, holdout, out_dir).at(Stage::Forecast)
}

fn score_holdout(
    cfg: &RunConfig,
    inputs: &Inputs,
    problem: &FitProblem,
    chains: &[ChainOutput],
    holdout: &[SampleRecord],
    out_dir: &Path,
) -> Result<ForecastComparison> {
    let points: Vec<DesignPoint> = holdout.iter().map(DesignPoint::from).collect();
    let draws: Vec<_> = chains.iter().flat_map(|c| &c.draws).collect();
    let result = forecast(problem, &draws, &points, cfg.output.forecast_min_draws)?;
    result.write_csv(&out_dir.join("forecast.csv"))?;
    let truth: Vec<u8> = holdout.iter().map(|s| s.y).collect();
    let model = forecast_misclassification(&result, &truth)?;

    let scored: Vec<usize> = (0..holdout.len())
        .filter(|&i| result.records[i].label.is_some())
        .collect();
    let scored_truth: Vec<u8> = scored.iter().map(|&i| truth[i]).collect();
    let design = BaselineDesign {
        grid: &inputs.grid,
        covariates: &inputs.covariates,
        layers: &inputs.baseline_layers,
        species: &inputs.design.species_order,
    };
    let scored_points: Vec<DesignPoint> = scored.iter().map(|&i| points[i].clone()).collect();
    let (fit, preds) = glm_baseline(
        &design,
        &inputs.samples,
        &scored_points,
        GlmOptions::default(),
    )?;
    let glm_labels: Vec<u8> = preds.iter().map(|&p| label_for(p)).collect();
    let glm = misclassification_rate(&glm_labels, &scored_truth)?;
    let positives = inputs.samples.iter().filter(|s| s.y == 1).count();
    let majority_label = u8::from(2 * positives >= inputs.samples.len());
    let majority =
        misclassification_rate(&vec![majority_label; scored_truth.len()], &scored_truth)?;

    let mut text = String::from("method,misclassification,n_scored\n");
    for (name, v) in [("model", model), ("glm", glm), ("majority", majority)] {
        let _ = writeln!(text, "{name},{v:.6},{}", scored.len());
    }
    write_text(&out_dir.join("forecast_scores.csv"), &text)?;
    let mut coef = String::from("column,coefficient,std_error\n");
    for ((n, b), s) in fit
        .column_names
        .iter()
        .zip(&fit.coefficients)
        .zip(&fit.std_errors)
    {
        let _ = writeln!(coef, "{n},{b:.6},{s:.6}");
    }
    write_text(&out_dir.join("glm_coefficients.csv"), &coef)?;
    Ok(ForecastComparison {
        n_scored: scored.len(),
        model,
        glm,
        majority,
    })
}

/// Writes a synthetic dataset plus a configuration that fits it.
pub fn simulate(
    setting: Setting,
    design: DesignConfig,
    solver: &SolverSettings,
    seed: u64,
    out_dir: &Path,
) -> StageResult<PathBuf> {
    let scenario = desk_scenario(setting, design).at(Stage::Config)?;
    let mut rng = pointsource::mcmc::run::stream_rng(seed, 0);
    let truth = draw_truth(&scenario, &mut rng);
    let data = generate_dataset(&scenario, &truth, solver, &mut rng).at(Stage::Simulate)?;
    let write = || -> Result<PathBuf> {
        create_dir(out_dir)?;
        write_covariates(&out_dir.join("covariates"), &scenario)?;
        write_samples(&out_dir.join("samples.csv"), &data.samples)?;
        write_samples(&out_dir.join("holdout.csv"), &data.holdout)?;
        truth.write(&out_dir.join("truth.toml"))?;
        let e = scenario.grid.extent();
        let prior = scenario.design.prior();
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.grid = Some(GridConfig {
            x_min: e.x_min,
            y_min: e.y_min,
            x_max: e.x_max,
            y_max: e.y_max,
            fine_cell_km: scenario.grid.fine_cell_size(),
            coarse_cell_km: scenario.grid.coarse_cell_size(),
            mask: None,
        });
        cfg.covariates = CovariateConfig {
            layers: scenario
                .diffusion_layers
                .iter()
                .chain(&scenario.growth_layers)
                .map(|n| (n.clone(), PathBuf::from(format!("covariates/{n}.asc"))))
                .collect(),
            diffusion: scenario.diffusion_layers.clone(),
            growth: scenario.growth_layers.clone(),
            baseline: None,
        };
        cfg.data = Some(DataConfig {
            samples: "samples.csv".into(),
            holdout: Some("holdout.csv".into()),
            species: Some(scenario.species.clone()),
        });
        cfg.solver = *solver;
        cfg.mcmc = MCMCConfig {
            n_iterations: 20_000,
            n_burnin: 10_000,
            thin: 10,
            ..MCMCConfig::default()
        };
        cfg.n_sources = setting.n_sources();
        cfg.prior.t0_start = Some(prior.t0_start);
        cfg.prior.t0_end = Some(prior.t0_end);
        let path = out_dir.join("config.toml");
        write_text(&path, &cfg.to_toml()?)?;
        Ok(path)
    };
    write().at(Stage::Simulate)
}
