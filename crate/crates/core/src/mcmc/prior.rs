use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point};
use crate::time::Month;

/// Prior distributions. `ω` is uniform over the modelled domain and `t0`
/// uniform over whole months in `[t0_start, t0_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Standard deviation of the independent Normal(0, σ²) prior on `β`.
    pub sigma_beta: f64,
    /// Standard deviation of the Normal(0, σ²) priors on `α0, α, γ0, γ`.
    pub sigma_alpha_gamma: f64,
    /// `log θ ~ Normal(theta_log_mean, theta_log_sd²)`.
    pub theta_log_mean: f64,
    pub theta_log_sd: f64,
    pub t0_start: Month,
    pub t0_end: Month,
}

impl PriorSpec {
    /// Default hyperparameters with a 30-year introduction window ending the
    /// month before `first_sample`.
    pub fn with_default_window(first_sample: Month) -> Self {
        PriorSpec {
            sigma_beta: 2.5,
            sigma_alpha_gamma: 2.5,
            theta_log_mean: 0.0,
            theta_log_sd: 1.0,
            t0_start: first_sample.offset(-360),
            t0_end: first_sample.offset(-1),
        }
    }

    pub fn validate(&self, first_sample: Option<Month>) -> Result<()> {
        for (name, v) in [
            ("sigma_beta", self.sigma_beta),
            ("sigma_alpha_gamma", self.sigma_alpha_gamma),
            ("theta_log_sd", self.theta_log_sd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "prior scale {name} must be positive, got {v}"
                )));
            }
        }
        if !self.theta_log_mean.is_finite() {
            return Err(Error::Config("theta_log_mean must be finite".into()));
        }
        if self.t0_end < self.t0_start {
            return Err(Error::Config(format!(
                "introduction window {}..{} is empty",
                self.t0_start, self.t0_end
            )));
        }
        if let Some(first) = first_sample {
            if self.t0_end >= first {
                return Err(Error::Config(format!(
                    "introduction window must end before the first sample ({first}), ends {}",
                    self.t0_end
                )));
            }
        }
        Ok(())
    }

    pub fn window_len(&self) -> i64 {
        self.t0_end.since(self.t0_start) + 1
    }

    pub fn contains_t0(&self, t0: Month) -> bool {
        t0 >= self.t0_start && t0 <= self.t0_end
    }

    pub fn sample_t0<R: Rng + ?Sized>(&self, rng: &mut R) -> Month {
        self.t0_start.offset(rng.random_range(0..self.window_len()))
    }

    pub fn sample_coefficient<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(0.0, self.sigma_alpha_gamma)
            .unwrap()
            .sample(rng)
    }

    pub fn sample_beta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(0.0, self.sigma_beta).unwrap().sample(rng)
    }

    pub fn sample_log_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(self.theta_log_mean, self.theta_log_sd)
            .unwrap()
            .sample(rng)
    }

    /// Log density of the dynamics coefficients, up to a constant.
    pub fn log_coefficients(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        let v = self.sigma_alpha_gamma * self.sigma_alpha_gamma;
        values.into_iter().map(|a| -0.5 * a * a / v).sum()
    }

    pub fn log_beta(&self, beta: &[f64]) -> f64 {
        let v = self.sigma_beta * self.sigma_beta;
        beta.iter().map(|b| -0.5 * b * b / v).sum()
    }

    /// Log density of `log θ` (the sampler works on the log scale).
    pub fn log_log_theta(&self, log_theta: f64) -> f64 {
        let z = (log_theta - self.theta_log_mean) / self.theta_log_sd;
        -0.5 * z * z
    }
}

/// Uniform draw over the fine cells in the grid support.
pub fn sample_location<R: Rng + ?Sized>(grid: &GridSpec, support: &[usize], rng: &mut R) -> Point {
    let f = support[rng.random_range(0..support.len())];
    let c = grid.fine_center(f);
    let h = grid.fine_cell_size();
    Point::new(
        c.x + (rng.random::<f64>() - 0.5) * h,
        c.y + (rng.random::<f64>() - 0.5) * h,
    )
}
