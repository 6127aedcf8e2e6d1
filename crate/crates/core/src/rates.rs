//! Covariate regressions for the diffusion and growth rates.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::homogenize::{homogenize, HomogenizedField};
use crate::raster::CovariateRaster;

/// `μ(s) = exp(α0 + z(s)ᵀα)` on every fine cell.
pub fn diffusion_field(
    alpha0: f64,
    alpha: &[f64],
    layers: &[String],
    covariates: &CovariateRaster,
) -> Result<Vec<f64>> {
    let mut eta = linear_predictor(alpha0, alpha, layers, covariates)?;
    for v in &mut eta {
        *v = v.exp();
    }
    Ok(eta)
}

/// `λ(s) = γ0 + w(s)ᵀγ` on every fine cell.
pub fn growth_field(
    gamma0: f64,
    gamma: &[f64],
    layers: &[String],
    covariates: &CovariateRaster,
) -> Result<Vec<f64>> {
    linear_predictor(gamma0, gamma, layers, covariates)
}

fn linear_predictor(
    intercept: f64,
    coefs: &[f64],
    layers: &[String],
    covariates: &CovariateRaster,
) -> Result<Vec<f64>> {
    if coefs.len() != layers.len() {
        return Err(Error::Config(format!(
            "{} coefficients for {} covariate layers",
            coefs.len(),
            layers.len()
        )));
    }
    let mut out = vec![intercept; covariates.n_cells()];
    for (name, &b) in layers.iter().zip(coefs) {
        let z = covariates.layer(name)?;
        for (o, &zv) in out.iter_mut().zip(z) {
            *o += zv * b;
        }
    }
    Ok(out)
}

/// Fine-scale rates together with their coarse homogenization.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFields {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub homogenized: HomogenizedField,
}

impl RateFields {
    pub fn new(grid: &GridSpec, mu: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if mu.len() != grid.n_fine() || lambda.len() != grid.n_fine() {
            return Err(Error::Config("rate fields do not match the grid".into()));
        }
        let homogenized = homogenize(&mu, &lambda, grid)?;
        Ok(RateFields {
            mu,
            lambda,
            homogenized,
        })
    }

    pub fn constant(grid: &GridSpec, mu: f64, lambda: f64) -> Result<Self> {
        Self::new(grid, vec![mu; grid.n_fine()], vec![lambda; grid.n_fine()])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_regression(
        grid: &GridSpec,
        covariates: &CovariateRaster,
        alpha0: f64,
        alpha: &[f64],
        diffusion_layers: &[String],
        gamma0: f64,
        gamma: &[f64],
        growth_layers: &[String],
    ) -> Result<Self> {
        let mu = diffusion_field(alpha0, alpha, diffusion_layers, covariates)?;
        let lambda = growth_field(gamma0, gamma, growth_layers, covariates)?;
        Self::new(grid, mu, lambda)
    }

    /// Largest homogenized diffusion rate over active coarse cells.
    pub fn max_mu_bar(&self, grid: &GridSpec) -> f64 {
        self.homogenized
            .mu_bar
            .iter()
            .zip(grid.coarse_active())
            .filter(|(_, &a)| a)
            .map(|(&m, _)| m)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Extent};

    fn setup() -> (GridSpec, CovariateRaster) {
        let g = build_grid(Extent::new(0.0, 0.0, 30.0, 30.0), 10.0, 10.0, None).unwrap();
        let mut cov = CovariateRaster::new(&g);
        cov.add_layer(&g, "forest", vec![0.5; 9]).unwrap();
        (g, cov)
    }

    #[test]
    fn diffusion_examples() {
        let (_, cov) = setup();
        let names = vec!["forest".to_string()];
        let mu = diffusion_field(0.0, &[0.0], &names, &cov).unwrap();
        assert!(mu.iter().all(|&m| m == 1.0));
        let mu = diffusion_field(2f64.ln(), &[1.0], &names, &cov).unwrap();
        let expected = 2.0 * 0.5f64.exp();
        assert!((expected - 3.297442541400256).abs() < 1e-12);
        assert!(mu.iter().all(|&m| (m - expected).abs() < 1e-12));
        let mu = diffusion_field(-30.0, &[-50.0], &names, &cov).unwrap();
        assert!(mu.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn growth_examples() {
        let (_, cov) = setup();
        let names = vec!["forest".to_string()];
        assert!(growth_field(0.0, &[0.0], &names, &cov)
            .unwrap()
            .iter()
            .all(|&l| l == 0.0));
        let lam = growth_field(-0.1, &[0.4], &names, &cov).unwrap();
        assert!(lam.iter().all(|&l| (l - 0.1).abs() < 1e-15));
        assert!(growth_field(-1.0, &[], &[], &cov)
            .unwrap()
            .iter()
            .all(|&l| l == -1.0));
    }

    #[test]
    fn missing_layer() {
        let (_, cov) = setup();
        let err = diffusion_field(0.0, &[1.0], &["karst".to_string()], &cov).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = growth_field(0.0, &[1.0], &["karst".to_string()], &cov).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
