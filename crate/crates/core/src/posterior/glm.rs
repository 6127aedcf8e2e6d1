//! Logistic-regression baseline fit by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::observation::{DesignPoint, SampleRecord};
use crate::raster::CovariateRaster;

/// Columns whose residual after projection onto earlier columns is below this
/// fraction of their norm are treated as aliased.
const ALIAS_TOL: f64 = 1e-8;
/// Step halvings tried before IRLS gives up on decreasing the deviance.
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    pub max_iterations: usize,
    /// Relative deviance change at which IRLS stops.
    pub tolerance: f64,
    /// Bound on the absolute value of every coefficient.
    pub coefficient_cap: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        GlmOptions {
            max_iterations: 50,
            tolerance: 1e-8,
            coefficient_cap: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmFit {
    pub column_names: Vec<String>,
    /// Full-length coefficients; aliased columns get 0.
    pub coefficients: Vec<f64>,
    /// Standard errors; `NaN` for aliased columns.
    pub std_errors: Vec<f64>,
    pub dropped: Vec<usize>,
    /// Deviance at the start and after every iteration.
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    /// Some coefficient hit the cap (suggests separation).
    pub capped: bool,
}

impl GlmFit {
    pub fn deviance(&self) -> f64 {
        *self.deviance_trace.last().unwrap()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        logistic(row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum())
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn deviance(x: &DMatrix<f64>, y: &[u8], b: &DVector<f64>) -> f64 {
    let eta = x * b;
    2.0 * eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| if yi == 1 { softplus(-e) } else { softplus(e) })
        .sum::<f64>()
}

/// Indices of columns that are not (numerically) linear combinations of
/// earlier columns.
fn independent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = col;
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if rn > ALIAS_TOL * norm {
            basis.push(r / rn);
            kept.push(j);
        }
    }
    kept
}

fn weighted_normal_matrix(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(wi);
    }
    x.transpose() * xw
}

fn solve_spd(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    a.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Domain("singular IRLS normal equations".into()))
}

/// Fits `P(y = 1) = logistic(x b)` with rows of `x` as observations.
pub fn fit_logistic(
    rows: &[Vec<f64>],
    y: &[u8],
    column_names: &[String],
    options: GlmOptions,
) -> Result<GlmFit> {
    let n = rows.len();
    if n == 0 || n != y.len() {
        return Err(Error::InsufficientData(format!(
            "{n} design rows for {} outcomes",
            y.len()
        )));
    }
    let p = column_names.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Config(format!("design rows must have {p} columns")));
    }
    let full = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let kept = independent_columns(&full);
    let dropped: Vec<usize> = (0..p).filter(|j| !kept.contains(j)).collect();
    for &j in &dropped {
        log::warn!("GLM column {} is aliased and was dropped", column_names[j]);
    }
    let x = full.select_columns(&kept);
    let cap = options.coefficient_cap;

    let mut b = DVector::zeros(kept.len());
    let mut dev = deviance(&x, y, &b);
    let mut trace = vec![dev];
    let mut converged = false;
    for _ in 0..options.max_iterations {
        let eta = &x * &b;
        let mut w = Vec::with_capacity(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let mu = logistic(eta[i]);
            let wi = (mu * (1.0 - mu)).max(1e-12);
            w.push(wi);
            z[i] = wi * eta[i] + (f64::from(y[i]) - mu);
        }
        let xtwx = weighted_normal_matrix(&x, &w);
        let target = solve_spd(&xtwx, &(x.transpose() * z))?.map(|v| v.clamp(-cap, cap));
        let mut cand = target;
        let mut cand_dev = deviance(&x, y, &cand);
        let mut halvings = 0;
        while cand_dev > dev && halvings < MAX_HALVINGS {
            cand = (&cand + &b) * 0.5;
            cand_dev = deviance(&x, y, &cand);
            halvings += 1;
        }
        if cand_dev > dev {
            log::warn!("IRLS could not decrease the deviance; stopping");
            break;
        }
        assert!(cand_dev <= dev, "IRLS deviance increased");
        let change = (dev - cand_dev).abs() / (cand_dev.abs() + 0.1);
        b = cand;
        dev = cand_dev;
        trace.push(dev);
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "IRLS did not converge in {} iterations",
            options.max_iterations
        );
    }
    let capped = b.iter().any(|v| v.abs() >= cap);
    if capped {
        log::warn!("GLM coefficients reached the cap of {cap}; the data may be separable");
    }

    let eta = &x * &b;
    let w: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let mu = logistic(e);
            (mu * (1.0 - mu)).max(1e-12)
        })
        .collect();
    let cov = weighted_normal_matrix(&x, &w).try_inverse();
    let mut coefficients = vec![0.0; p];
    let mut std_errors = vec![f64::NAN; p];
    for (k, &j) in kept.iter().enumerate() {
        coefficients[j] = b[k];
        if let Some(c) = &cov {
            std_errors[j] = c[(k, k)].sqrt();
        }
    }
    Ok(GlmFit {
        column_names: column_names.to_vec(),
        coefficients,
        std_errors,
        dropped,
        deviance_trace: trace,
        converged,
        capped,
    })
}

/// Design for the baseline: intercept, covariate values at the sample's fine
/// cell, and indicators for every species but the first.
pub struct BaselineDesign<'a> {
    pub grid: &'a GridSpec,
    pub covariates: &'a CovariateRaster,
    pub layers: &'a [String],
    pub species: &'a [String],
}

impl BaselineDesign<'_> {
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        names.extend(self.layers.iter().cloned());
        names.extend(self.species.iter().skip(1).map(|s| format!("species_{s}")));
        names
    }

    pub fn row(&self, p: &DesignPoint) -> Result<Vec<f64>> {
        let cell = self.grid.locate(p.location).ok_or_else(|| {
            Error::Domain(format!(
                "({}, {}) lies outside the grid",
                p.location.x, p.location.y
            ))
        })?;
        let mut row = vec![1.0];
        for l in self.layers {
            row.push(self.covariates.layer(l)?[cell]);
        }
        if !self.species.contains(&p.species) {
            return Err(Error::Domain(format!("unknown species {}", p.species)));
        }
        row.extend(
            self.species
                .iter()
                .skip(1)
                .map(|s| f64::from(u8::from(*s == p.species))),
        );
        Ok(row)
    }
}

/// Fits the baseline on `train` and returns it with predictions for `test`.
pub fn glm_baseline(
    design: &BaselineDesign<'_>,
    train: &[SampleRecord],
    test: &[DesignPoint],
    options: GlmOptions,
) -> Result<(GlmFit, Vec<f64>)> {
    let rows = train
        .iter()
        .map(|s| design.row(&DesignPoint::from(s)))
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<u8> = train.iter().map(|s| s.y).collect();
    let fit = fit_logistic(&rows, &y, &design.column_names(), options)?;
    let preds = test
        .iter()
        .map(|p| Ok(fit.predict(&design.row(p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((fit, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn balanced_intercept_only() {
        let rows = vec![vec![1.0]; 10];
        let y = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let fit = fit_logistic(&rows, &y, &names(1), GlmOptions::default()).unwrap();
        assert_eq!(fit.coefficients, vec![0.0]);
        assert_eq!(fit.predict(&[1.0]), 0.5);
        assert!(fit.converged);
    }

    #[test]
    fn aliased_column_is_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                vec![1.0, z, z]
            })
            .collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|r| u8::from(rng.random::<f64>() < logistic(r[1])))
            .collect();
        let fit = fit_logistic(&rows, &y, &names(3), GlmOptions::default()).unwrap();
        assert_eq!(fit.dropped, vec![2]);
        assert_eq!(fit.coefficients[2], 0.0);
        assert!(fit.std_errors[2].is_nan());
        assert!(fit.converged);
    }

    #[test]
    fn separation_is_capped() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, i as f64 - 19.5]).collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let fit = fit_logistic(&rows, &y, &names(2), GlmOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() <= 20.0));
        assert!(fit.deviance_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(fit_logistic(&[vec![1.0]], &[1, 0], &names(1), GlmOptions::default()).is_err());
    }
}
