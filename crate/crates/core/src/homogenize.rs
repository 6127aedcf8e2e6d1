//! Coarse-scale coefficients for the homogenized diffusion equation.
//!
//! Under `c = μu` the growth-diffusion equation becomes `∂c/∂t = μΔc + λc`.
//! Averaging over a coarse cell gives the harmonic mean of `μ` and the
//! `1/μ`-weighted mean of `λ`; fine-scale intensity is recovered as
//! `u = c̄ / μ(s)`.

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedField {
    /// Per coarse cell, km²/month. Zero for cells with no masked fine cells.
    pub mu_bar: Vec<f64>,
    /// Per coarse cell, 1/month.
    pub lambda_bar: Vec<f64>,
}

pub fn homogenize(
    mu_fine: &[f64],
    lambda_fine: &[f64],
    grid: &GridSpec,
) -> Result<HomogenizedField> {
    assert_eq!(mu_fine.len(), grid.n_fine());
    assert_eq!(lambda_fine.len(), grid.n_fine());
    let mut mu_bar = vec![0.0; grid.n_coarse()];
    let mut lambda_bar = vec![0.0; grid.n_coarse()];
    for coarse in 0..grid.n_coarse() {
        let mut n = 0usize;
        let mut inv_sum = 0.0;
        let mut weighted = 0.0;
        for f in grid.masked_children(coarse) {
            let mu = mu_fine[f];
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(Error::Domain(format!(
                    "diffusion rate must be positive and finite, got {mu} at fine cell {f}"
                )));
            }
            n += 1;
            inv_sum += 1.0 / mu;
            weighted += lambda_fine[f] / mu;
        }
        if n > 0 {
            mu_bar[coarse] = n as f64 / inv_sum;
            lambda_bar[coarse] = weighted / inv_sum;
        }
    }
    Ok(HomogenizedField { mu_bar, lambda_bar })
}
