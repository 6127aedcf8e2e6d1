//! Simulation experiment: repeated simulate-and-fit under known truth, scored
//! by interval and region coverage.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use pointsource::mcmc::run::stream_rng;
use pointsource::mcmc::state::scalar_names;
use pointsource::mcmc::{chain_diagnostics, run_mcmc, FitProblem, MCMCConfig};
use pointsource::observation::{csv_error, SusceptibilityDesign};
use pointsource::posterior::{hpd_region, location_posterior_map, summarize_marginals};
use pointsource::solver::SolverSettings;
use pointsource::{Error, Month, Point, Result};

use crate::sim::{desk_scenario, simulate_replicate, DesignConfig, Scenario, Setting, TruthSource};

/// Knobs for one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub settings: Vec<Setting>,
    pub replicates: usize,
    pub design: DesignConfig,
    pub mcmc: MCMCConfig,
    pub solver: SolverSettings,
    pub level: f64,
    pub smooth_location_map: bool,
    pub truth: TruthSource,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub setting: Setting,
    pub replicate: usize,
    pub n_positive: usize,
    pub t0_true: Month,
    pub t0_median: Month,
    pub t0_lower: Month,
    pub t0_upper: Month,
    pub t0_covered: bool,
    /// Posterior median minus truth, months.
    pub t0_error_months: f64,
    pub omega_covered: bool,
    /// Distance from the truth to the nearest posterior-mean source, km
    /// (averaged over true sources).
    pub omega_error_km: f64,
    pub hpd_area_km2: f64,
    pub max_rhat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub setting: Setting,
    pub replicate: usize,
    pub message: String,
}

/// A proportion or mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingSummary {
    pub setting: Setting,
    pub n_ok: usize,
    pub n_failed: usize,
    pub t0_coverage: Estimate,
    pub omega_coverage: Estimate,
    pub t0_error: Estimate,
    pub omega_error_km: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub level: f64,
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub summaries: Vec<SettingSummary>,
}

fn proportion(hits: impl Iterator<Item = bool>) -> Estimate {
    let v: Vec<f64> = hits.map(|b| f64::from(u8::from(b))).collect();
    let n = v.len() as f64;
    let p = v.iter().sum::<f64>() / n;
    Estimate {
        value: p,
        se: (p * (1.0 - p) / n).sqrt(),
    }
}

fn mean_se(values: impl Iterator<Item = f64>) -> Estimate {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: m,
        se: (var / n).sqrt(),
    }
}

impl SettingSummary {
    fn from_results(setting: Setting, results: &[&ReplicateResult], n_failed: usize) -> Self {
        let nan = Estimate {
            value: f64::NAN,
            se: f64::NAN,
        };
        if results.is_empty() {
            return SettingSummary {
                setting,
                n_ok: 0,
                n_failed,
                t0_coverage: nan,
                omega_coverage: nan,
                t0_error: nan,
                omega_error_km: nan,
            };
        }
        SettingSummary {
            setting,
            n_ok: results.len(),
            n_failed,
            t0_coverage: proportion(results.iter().map(|r| r.t0_covered)),
            omega_coverage: proportion(results.iter().map(|r| r.omega_covered)),
            t0_error: mean_se(results.iter().map(|r| r.t0_error_months)),
            omega_error_km: mean_se(results.iter().map(|r| r.omega_error_km)),
        }
    }
}

/// Simulates and fits one replicate.
pub fn run_replicate(
    scenario: &Scenario,
    spec: &ExperimentSpec,
    replicate: usize,
    stream: u64,
) -> Result<ReplicateResult> {
    let mut rng = stream_rng(spec.seed, stream);
    let (truth, data) = simulate_replicate(scenario, spec.truth, &spec.solver, &mut rng)?;
    let n_sources = scenario.setting.n_sources();
    let problem = FitProblem::new(
        scenario.grid.clone(),
        scenario.covariates.clone(),
        scenario.diffusion_layers.clone(),
        scenario.growth_layers.clone(),
        SusceptibilityDesign::new(scenario.species.clone())?,
        data.samples.clone(),
        spec.solver,
        scenario.design.prior(),
        n_sources,
    )?;
    let mcmc = MCMCConfig {
        seed: rng.random(),
        ..spec.mcmc.clone()
    };
    let chains = run_mcmc(&problem, &mcmc)?;

    let names = scalar_names(
        &scenario.diffusion_layers,
        &scenario.growth_layers,
        &scenario.species,
        n_sources,
    );
    let summary = summarize_marginals(&chains, &names, spec.level)?;
    let t0 = summary
        .get("t0")
        .ok_or_else(|| Error::Domain("summary has no t0 entry".into()))?;
    let month = |v: f64| Month(v.round() as i64);
    let t0_true = truth.state.t0;
    let (lower, upper) = (month(t0.lower), month(t0.upper));

    let grid = &scenario.grid;
    let map = location_posterior_map(&chains, grid, spec.smooth_location_map)?;
    let region = hpd_region(&map, grid, spec.level)?;
    let omega_covered = truth
        .state
        .omega
        .iter()
        .all(|w| grid.locate(*w).is_some_and(|c| region.contains(c)));

    let draws: Vec<_> = chains.iter().flat_map(|c| &c.draws).collect();
    let means: Vec<Point> = (0..n_sources)
        .map(|j| {
            let n = draws.len() as f64;
            let (sx, sy) = draws
                .iter()
                .fold((0.0, 0.0), |(x, y), d| (x + d.omega[j].x, y + d.omega[j].y));
            Point::new(sx / n, sy / n)
        })
        .collect();
    let omega_error_km = truth
        .state
        .omega
        .iter()
        .map(|w| {
            means
                .iter()
                .map(|m| m.distance(w))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / n_sources as f64;

    let diagnostics = chain_diagnostics(&chains, &names);
    let max_rhat = diagnostics
        .parameters
        .iter()
        .filter_map(|p| p.rhat)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));

    Ok(ReplicateResult {
        setting: scenario.setting,
        replicate,
        n_positive: data.samples.iter().filter(|s| s.y == 1).count(),
        t0_true,
        t0_median: month(t0.median),
        t0_lower: lower,
        t0_upper: upper,
        t0_covered: lower <= t0_true && t0_true <= upper,
        t0_error_months: t0.median - t0_true.index() as f64,
        omega_covered,
        omega_error_km,
        hpd_area_km2: region.area_km2,
        max_rhat,
    })
}

/// Runs every replicate of every setting. Replicates run concurrently on the
/// current rayon pool; results are collected in a fixed order, so the report
/// depends only on `spec`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    if spec.replicates == 0 {
        return Err(Error::Config(
            "experiment needs at least one replicate".into(),
        ));
    }
    if spec.settings.is_empty() {
        return Err(Error::Config(
            "experiment needs at least one setting".into(),
        ));
    }
    let scenarios = spec
        .settings
        .iter()
        .map(|&s| desk_scenario(s, spec.design.clone()))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..spec.replicates).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<Result<ReplicateResult>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let scenario = &scenarios[s];
            let stream = (scenario.setting as u64) << 32 | r as u64;
            let out = run_replicate(scenario, spec, r, stream);
            match &out {
                Ok(res) => log::info!(
                    "setting {} replicate {r}: t0 {} in [{}, {}] (truth {}), location covered {}",
                    scenario.setting,
                    res.t0_median,
                    res.t0_lower,
                    res.t0_upper,
                    res.t0_true,
                    res.omega_covered
                ),
                Err(e) => log::warn!("setting {} replicate {r} failed: {e}", scenario.setting),
            }
            out
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (&(s, r), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(res) => results.push(res),
            Err(e) => failures.push(ReplicateFailure {
                setting: scenarios[s].setting,
                replicate: r,
                message: e.to_string(),
            }),
        }
    }
    let summaries = spec
        .settings
        .iter()
        .map(|&setting| {
            let ok: Vec<&ReplicateResult> =
                results.iter().filter(|r| r.setting == setting).collect();
            let failed = failures.iter().filter(|f| f.setting == setting).count();
            SettingSummary::from_results(setting, &ok, failed)
        })
        .collect();
    Ok(ExperimentReport {
        level: spec.level,
        results,
        failures,
        summaries,
    })
}

#[derive(Serialize)]
struct ReplicateRow {
    setting: Setting,
    replicate: usize,
    n_positive: usize,
    t0_true: String,
    t0_median: String,
    t0_lower: String,
    t0_upper: String,
    t0_covered: bool,
    t0_error_months: f64,
    omega_covered: bool,
    omega_error_km: f64,
    hpd_area_km2: f64,
    max_rhat: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow {
    setting: Setting,
    n_ok: usize,
    n_failed: usize,
    t0_coverage: f64,
    t0_coverage_se: f64,
    omega_coverage: f64,
    omega_coverage_se: f64,
    t0_error_months: f64,
    t0_error_se: f64,
    omega_error_km: f64,
    omega_error_se: f64,
}

impl ExperimentReport {
    /// Writes `replicates.csv`, `summary.csv`, `failures.csv` and
    /// `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let path = dir.join("replicates.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        for r in &self.results {
            w.serialize(ReplicateRow {
                setting: r.setting,
                replicate: r.replicate,
                n_positive: r.n_positive,
                t0_true: r.t0_true.to_string(),
                t0_median: r.t0_median.to_string(),
                t0_lower: r.t0_lower.to_string(),
                t0_upper: r.t0_upper.to_string(),
                t0_covered: r.t0_covered,
                t0_error_months: r.t0_error_months,
                omega_covered: r.omega_covered,
                omega_error_km: r.omega_error_km,
                hpd_area_km2: r.hpd_area_km2,
                max_rhat: r.max_rhat,
            })
            .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        for s in &self.summaries {
            w.serialize(SummaryRow {
                setting: s.setting,
                n_ok: s.n_ok,
                n_failed: s.n_failed,
                t0_coverage: s.t0_coverage.value,
                t0_coverage_se: s.t0_coverage.se,
                omega_coverage: s.omega_coverage.value,
                omega_coverage_se: s.omega_coverage.se,
                t0_error_months: s.t0_error.value,
                t0_error_se: s.t0_error.se,
                omega_error_km: s.omega_error_km.value,
                omega_error_se: s.omega_error_km.se,
            })
            .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("failures.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        for f in &self.failures {
            w.serialize(f).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("report.txt");
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }

    /// Plain-text summary table.
    pub fn render(&self) -> String {
        let pct = (self.level * 100.0).round();
        let mut out = String::new();
        let _ = writeln!(out, "Simulation experiment, {pct}% intervals and regions");
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<8} {:>4} {:>6} {:>16} {:>16} {:>18} {:>18}",
            "setting",
            "ok",
            "failed",
            "t0 coverage",
            "loc coverage",
            "t0 error (mo)",
            "loc error (km)"
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{:<8} {:>4} {:>6} {:>9.3} ± {:.3} {:>9.3} ± {:.3} {:>10.2} ± {:.2} {:>10.1} ± {:.1}",
                s.setting.to_string(),
                s.n_ok,
                s.n_failed,
                s.t0_coverage.value,
                s.t0_coverage.se,
                s.omega_coverage.value,
                s.omega_coverage.se,
                s.t0_error.value,
                s.t0_error.se,
                s.omega_error_km.value,
                s.omega_error_km.se
            );
        }
        for f in &self.failures {
            let _ = writeln!(
                out,
                "failed: setting {} replicate {}: {}",
                f.setting, f.replicate, f.message
            );
        }
        out
    }
}
