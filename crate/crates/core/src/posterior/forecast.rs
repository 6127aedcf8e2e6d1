use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcmc::model::FitProblem;
use crate::mcmc::state::ParameterState;
use crate::observation::{csv_error, probability_from_offset, DesignPoint};
use crate::solver::solve_homogenized;

/// Default lower bound on the number of draws used for a forecast.
pub const FORECAST_MIN_DRAWS: usize = 500;

/// Posterior-mean probabilities at or above this are labelled positive.
pub const LABEL_THRESHOLD: f64 = 0.5;

pub fn label_for(p: f64) -> u8 {
    u8::from(p >= LABEL_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub point: DesignPoint,
    /// `E(p | y)`, or `None` if the record could not be scored.
    pub p_mean: Option<f64>,
    pub label: Option<u8>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub records: Vec<ForecastRecord>,
    /// Draws that contributed to the averages.
    pub n_draws: usize,
    /// Draws skipped because their forward solve failed.
    pub n_failed: usize,
}

#[derive(Serialize)]
struct ForecastRow<'a> {
    x_km: f64,
    y_km: f64,
    date: String,
    species: &'a str,
    p_mean: Option<f64>,
    label: Option<u8>,
}

impl ForecastResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            w.serialize(ForecastRow {
                x_km: r.point.location.x,
                y_km: r.point.location.y,
                date: r.point.date.to_string(),
                species: &r.point.species,
                p_mean: r.p_mean,
                label: r.label,
            })
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Every `stride`-th draw, with the stride chosen so at least `min_draws`
/// remain (or all of them, if there are fewer).
pub fn thin_draws<'a>(draws: &[&'a ParameterState], min_draws: usize) -> Vec<&'a ParameterState> {
    let stride = (draws.len() / min_draws.max(1)).max(1);
    draws.iter().step_by(stride).copied().collect()
}

/// Per-record probabilities under one parameter state.
fn draw_probabilities(
    problem: &FitProblem,
    s: &ParameterState,
    cells: &[Option<usize>],
    points: &[DesignPoint],
    species: &[Option<usize>],
) -> Result<Vec<f64>> {
    let t0 = s.t0.index();
    let t_end = points.iter().map(|p| p.date.index()).max().unwrap_or(t0);
    let rates = problem.rates_for(s.alpha0, &s.alpha, s.gamma0, &s.gamma)?;
    let trajectory = if t_end >= t0 {
        Some(solve_homogenized(
            &s.events(),
            &rates,
            &problem.grid,
            t_end as f64,
            &problem.solver,
        )?)
    } else {
        None
    };
    let mut out = vec![0.0; points.len()];
    for (i, p) in points.iter().enumerate() {
        let (Some(cell), Some(k)) = (cells[i], species[i]) else {
            continue;
        };
        let Some(traj) = trajectory.as_ref().filter(|_| p.date.index() >= t0) else {
            continue;
        };
        let frame = traj
            .frame_at(p.date.index() as f64)
            .ok_or_else(|| Error::Coverage {
                index: i,
                month: p.date.index(),
                start: t0,
                end: t_end,
            })?;
        out[i] = probability_from_offset(traj.intensity(cell, frame), s.beta[k])?;
    }
    Ok(out)
}

/// Posterior-mean infection probabilities for `points`, each draw's
/// trajectory extended forward as far as the latest holdout date.
pub fn forecast(
    problem: &FitProblem,
    draws: &[&ParameterState],
    points: &[DesignPoint],
    min_draws: usize,
) -> Result<ForecastResult> {
    if draws.is_empty() {
        return Err(Error::InsufficientData(
            "no posterior draws to forecast from".into(),
        ));
    }
    let grid = &problem.grid;
    let mut errors: Vec<Option<String>> = vec![None; points.len()];
    let cells: Vec<Option<usize>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = grid.locate(p.location).filter(|&f| grid.in_mask(f));
            if c.is_none() {
                errors[i] = Some("location outside the study area".into());
            }
            c
        })
        .collect();
    let species: Vec<Option<usize>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| match problem.design.index(&p.species) {
            Ok(k) => Some(k),
            Err(e) => {
                errors[i].get_or_insert(e.to_string());
                None
            }
        })
        .collect();

    let used = thin_draws(draws, min_draws);
    let per_draw: Vec<Result<Vec<f64>>> = used
        .par_iter()
        .map(|s| draw_probabilities(problem, s, &cells, points, &species))
        .collect();
    let mut sum = vec![0.0; points.len()];
    let (mut n_draws, mut n_failed) = (0usize, 0usize);
    for r in per_draw {
        match r {
            Ok(p) => {
                for (a, b) in sum.iter_mut().zip(p) {
                    *a += b;
                }
                n_draws += 1;
            }
            Err(e) => {
                log::warn!("forecast draw skipped: {e}");
                n_failed += 1;
            }
        }
    }
    if n_draws == 0 {
        return Err(Error::Domain("every forecast draw failed to solve".into()));
    }
    let records = points
        .iter()
        .zip(errors)
        .zip(sum)
        .map(|((p, error), total)| {
            let p_mean = error
                .is_none()
                .then(|| (total / n_draws as f64).clamp(0.0, 1.0));
            ForecastRecord {
                point: p.clone(),
                p_mean,
                label: p_mean.map(label_for),
                error,
            }
        })
        .collect();
    Ok(ForecastResult {
        records,
        n_draws,
        n_failed,
    })
}

/// Fraction of disagreements between predicted and true labels.
pub fn misclassification_rate(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InsufficientData("no labels to score".into()));
    }
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / predicted.len() as f64)
}

/// Misclassification over the scored records of `result`; unscored records
/// are skipped.
pub fn forecast_misclassification(result: &ForecastResult, truth: &[u8]) -> Result<f64> {
    if result.records.len() != truth.len() {
        return Err(Error::Config(format!(
            "{} forecast records for {} true labels",
            result.records.len(),
            truth.len()
        )));
    }
    let (pred, t): (Vec<u8>, Vec<u8>) = result
        .records
        .iter()
        .zip(truth)
        .filter_map(|(r, &y)| r.label.map(|l| (l, y)))
        .unzip();
    misclassification_rate(&pred, &t)
}
