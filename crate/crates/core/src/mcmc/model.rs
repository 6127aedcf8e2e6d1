//! Likelihood evaluation for the sampler.
//!
//! The PDE is linear and autonomous, so for fixed dynamics the intensity at a
//! sample is `Σ_j θ_j U_{cell(ω_j)}(t_i − t0, s_i)` where `U_c` is the
//! solution started from unit mass in coarse cell `c`. The evaluator solves
//! each `U_c` once per dynamics state over every lag the introduction window
//! allows, which makes `θ` and `t0` moves solve-free.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::mcmc::prior::PriorSpec;
use crate::mcmc::state::ParameterState;
use crate::normal::std_normal_cdf;
use crate::observation::{SampleRecord, SusceptibilityDesign};
use crate::raster::CovariateRaster;
use crate::rates::RateFields;
use crate::solver::{seed_cell, SolverSettings, Stencil};
use crate::time::Month;

/// Intensities below this are raised to it inside the sampler so that
/// `log u` stays finite.
pub const INTENSITY_FLOOR: f64 = 1e-12;

/// Everything fixed during a fit: domain, covariates, data and priors.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub grid: GridSpec,
    pub covariates: CovariateRaster,
    pub diffusion_layers: Vec<String>,
    pub growth_layers: Vec<String>,
    pub design: SusceptibilityDesign,
    pub samples: Vec<SampleRecord>,
    pub solver: SolverSettings,
    pub prior: PriorSpec,
    pub n_sources: usize,
    prepared: Vec<PreparedSample>,
    support: Vec<usize>,
    horizon: Month,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PreparedSample {
    pub fine: usize,
    pub coarse: usize,
    pub month: Month,
    pub species: usize,
    pub positive: bool,
}

impl FitProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: GridSpec,
        covariates: CovariateRaster,
        diffusion_layers: Vec<String>,
        growth_layers: Vec<String>,
        design: SusceptibilityDesign,
        samples: Vec<SampleRecord>,
        solver: SolverSettings,
        prior: PriorSpec,
        n_sources: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("no samples to fit".into()));
        }
        if n_sources == 0 {
            return Err(Error::Config(
                "at least one introduction is required".into(),
            ));
        }
        solver.validate()?;
        for name in diffusion_layers.iter().chain(&growth_layers) {
            covariates.layer(name)?;
        }
        let first = samples.iter().map(|s| s.date).min().unwrap();
        prior.validate(Some(first))?;
        let mut prepared = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let fine = grid
                .locate(s.location)
                .filter(|&f| grid.in_mask(f))
                .ok_or_else(|| {
                    Error::Domain(format!(
                        "sample {i} at ({}, {}) lies outside the study area",
                        s.location.x, s.location.y
                    ))
                })?;
            if s.y > 1 {
                return Err(Error::Domain(format!("sample {i} has outcome {}", s.y)));
            }
            prepared.push(PreparedSample {
                fine,
                coarse: grid.parent(fine),
                month: s.date,
                species: design.index(&s.species)?,
                positive: s.y == 1,
            });
        }
        let support = grid.support_cells();
        if support.is_empty() {
            return Err(Error::Domain(
                "grid has no interior cells for an introduction".into(),
            ));
        }
        let horizon = samples.iter().map(|s| s.date).max().unwrap();
        Ok(FitProblem {
            grid,
            covariates,
            diffusion_layers,
            growth_layers,
            design,
            samples,
            solver,
            prior,
            n_sources,
            prepared,
            support,
            horizon,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Area of the introduction-location prior support, km².
    pub fn support_area(&self) -> f64 {
        self.support.len() as f64 * self.grid.fine_cell_area()
    }

    /// Last sample date.
    pub fn horizon(&self) -> Month {
        self.horizon
    }

    /// Number of monthly lags an evaluator must store.
    pub(crate) fn n_lags(&self) -> usize {
        (self.horizon.since(self.prior.t0_start) + 1) as usize
    }

    pub(crate) fn prepared(&self) -> &[PreparedSample] {
        &self.prepared
    }

    pub fn rates_for(
        &self,
        alpha0: f64,
        alpha: &[f64],
        gamma0: f64,
        gamma: &[f64],
    ) -> Result<RateFields> {
        RateFields::from_regression(
            &self.grid,
            &self.covariates,
            alpha0,
            alpha,
            &self.diffusion_layers,
            gamma0,
            gamma,
            &self.growth_layers,
        )
    }

    /// Whether `state` satisfies every parameter-state invariant.
    pub fn admits(&self, state: &ParameterState) -> bool {
        state.is_finite()
            && state.alpha.len() == self.diffusion_layers.len()
            && state.gamma.len() == self.growth_layers.len()
            && state.beta.len() == self.design.n_coefficients()
            && state.omega.len() == self.n_sources
            && state.theta.len() == self.n_sources
            && state.theta.iter().all(|&t| t > 0.0)
            && state
                .omega
                .iter()
                .all(|&w| self.grid.locate_in_support(w).is_some())
            && self.prior.contains_t0(state.t0)
    }

    pub fn log_prior(&self, s: &ParameterState) -> f64 {
        let p = &self.prior;
        p.log_coefficients(
            std::iter::once(s.alpha0)
                .chain(s.alpha.iter().copied())
                .chain(std::iter::once(s.gamma0))
                .chain(s.gamma.iter().copied()),
        ) + p.log_beta(&s.beta)
            + s.theta.iter().map(|t| p.log_log_theta(t.ln())).sum::<f64>()
    }
}

/// `log Φ(x)` without underflow in the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        std_normal_cdf(x).ln()
    } else {
        // Mills-ratio expansion: Φ(x) ≈ φ(x)/|x| · (1 − 1/x² + 3/x⁴ − 15/x⁶)
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
    }
}

/// Sampler log-likelihood: probit on `log max(u, floor) + β_k`.
pub(crate) fn probit_log_likelihood(
    prepared: &[PreparedSample],
    log_u: &[f64],
    beta: &[f64],
) -> f64 {
    prepared
        .iter()
        .zip(log_u)
        .map(|(s, &lu)| {
            let eta = lu + beta[s.species];
            if s.positive {
                log_normal_cdf(eta)
            } else {
                log_normal_cdf(-eta)
            }
        })
        .sum()
}

/// Per-chain evaluator bound to one set of dynamics parameters.
#[derive(Debug, Clone)]
pub struct Evaluator {
    rates: RateFields,
    stencil: Stencil,
    n_lags: usize,
    n_coarse: usize,
    /// `1/μ(s_i)` at each sample.
    inv_mu: Vec<f64>,
    unit: HashMap<usize, Arc<Vec<f64>>>,
    solves: usize,
}

impl Evaluator {
    pub fn new(
        problem: &FitProblem,
        alpha0: f64,
        alpha: &[f64],
        gamma0: f64,
        gamma: &[f64],
    ) -> Result<Self> {
        let rates = problem.rates_for(alpha0, alpha, gamma0, gamma)?;
        let stencil = Stencil::homogenized(&problem.grid, &rates, problem.solver.steps_per_month)?;
        let inv_mu = problem
            .prepared()
            .iter()
            .map(|s| 1.0 / rates.mu[s.fine])
            .collect();
        Ok(Evaluator {
            rates,
            stencil,
            n_lags: problem.n_lags(),
            n_coarse: problem.grid.n_coarse(),
            inv_mu,
            unit: HashMap::new(),
            solves: 0,
        })
    }

    pub fn for_state(problem: &FitProblem, s: &ParameterState) -> Result<Self> {
        Self::new(problem, s.alpha0, &s.alpha, s.gamma0, &s.gamma)
    }

    pub fn rates(&self) -> &RateFields {
        &self.rates
    }

    /// PDE solves performed so far.
    pub fn solves(&self) -> usize {
        self.solves
    }

    /// Monthly coarse frames for unit mass introduced in coarse cell `cell`,
    /// flattened as `[lag][coarse]`.
    fn unit_solution(&mut self, problem: &FitProblem, cell: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(u) = self.unit.get(&cell) {
            return Ok(Arc::clone(u));
        }
        let grid = &problem.grid;
        let mut state = vec![0.0; self.n_coarse];
        state[cell] = self.rates.homogenized.mu_bar[cell] / grid.masked_area(cell);
        let mut frames = Vec::with_capacity(self.n_lags * self.n_coarse);
        frames.extend_from_slice(&state);
        self.stencil
            .run_months(&mut state, self.n_lags - 1, |_, s| {
                frames.extend_from_slice(s)
            })?;
        self.solves += 1;
        let frames = Arc::new(frames);
        self.unit.insert(cell, Arc::clone(&frames));
        Ok(frames)
    }

    /// Ensures unit solutions exist for every source in `s`.
    pub fn prepare(&mut self, problem: &FitProblem, s: &ParameterState) -> Result<()> {
        for &w in &s.omega {
            let cell = seed_cell(&problem.grid, w)?;
            self.unit_solution(problem, cell)?;
        }
        Ok(())
    }

    /// Sample intensities `u_i` under `s`.
    pub fn intensities(&mut self, problem: &FitProblem, s: &ParameterState) -> Result<Vec<f64>> {
        let mut sources = Vec::with_capacity(s.n_sources());
        for (&w, &theta) in s.omega.iter().zip(&s.theta) {
            let cell = seed_cell(&problem.grid, w)?;
            sources.push((self.unit_solution(problem, cell)?, theta));
        }
        let n_coarse = self.n_coarse;
        Ok(problem
            .prepared()
            .iter()
            .zip(&self.inv_mu)
            .map(|(p, &inv_mu)| {
                let lag = p.month.since(s.t0);
                debug_assert!(lag >= 0 && (lag as usize) < self.n_lags);
                let at = lag as usize * n_coarse + p.coarse;
                let c: f64 = sources.iter().map(|(u, theta)| theta * u[at]).sum();
                c * inv_mu
            })
            .collect())
    }

    /// `log max(u_i, floor)` for every sample.
    pub fn log_intensities(
        &mut self,
        problem: &FitProblem,
        s: &ParameterState,
    ) -> Result<Vec<f64>> {
        Ok(self
            .intensities(problem, s)?
            .into_iter()
            .map(|u| u.max(INTENSITY_FLOOR).ln())
            .collect())
    }

    pub fn log_likelihood(&mut self, problem: &FitProblem, s: &ParameterState) -> Result<f64> {
        let log_u = self.log_intensities(problem, s)?;
        Ok(probit_log_likelihood(problem.prepared(), &log_u, &s.beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cdf_is_continuous_across_branch() {
        let a = log_normal_cdf(-29.999_999);
        let b = log_normal_cdf(-30.000_001);
        assert!((a - b).abs() < 1e-4);
        let direct = std_normal_cdf(-30.0).ln();
        let series = {
            let x: f64 = -30.0;
            let x2 = x * x;
            let s = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
            -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + s.ln()
        };
        assert!((direct - series).abs() < 1e-9);
        assert!(log_normal_cdf(-200.0).is_finite());
        assert!(log_normal_cdf(10.0) <= 0.0);
    }
}
