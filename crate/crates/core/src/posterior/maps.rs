use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::mcmc::run::ChainOutput;
use crate::raster::CovariateRaster;
use crate::rates::{diffusion_field, growth_field};

/// Histogram of the `ω` draws of every source over masked fine cells,
/// normalized to sum to one.
///
/// With `smooth`, each draw is spread with a Gaussian kernel of one fine
/// cell SD (truncated at three cells and renormalized over the mask).
pub fn location_posterior_map(
    chains: &[ChainOutput],
    grid: &GridSpec,
    smooth: bool,
) -> Result<Vec<f64>> {
    let mut map = vec![0.0; grid.n_fine()];
    let mut n = 0usize;
    for d in chains.iter().flat_map(|c| &c.draws) {
        for w in &d.omega {
            let cell = grid
                .locate(*w)
                .filter(|&f| grid.in_mask(f))
                .ok_or_else(|| {
                    Error::Domain(format!(
                        "posterior draw ({}, {}) lies outside the mask",
                        w.x, w.y
                    ))
                })?;
            map[cell] += 1.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData(
            "chains contain no location draws".into(),
        ));
    }
    if smooth {
        map = smooth_map(&map, grid);
    }
    let total: f64 = map.iter().sum();
    for v in &mut map {
        *v /= total;
    }
    Ok(map)
}

fn smooth_map(counts: &[f64], grid: &GridSpec) -> Vec<f64> {
    const REACH: i64 = 3;
    let (rows, cols) = (grid.n_fine_rows() as i64, grid.n_fine_cols() as i64);
    let mut out = vec![0.0; counts.len()];
    for (f, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let (r, q) = grid.fine_row_col(f);
        let (r, q) = (r as i64, q as i64);
        let mut weights = Vec::new();
        for dr in -REACH..=REACH {
            for dq in -REACH..=REACH {
                let (rr, qq) = (r + dr, q + dq);
                if rr < 0 || qq < 0 || rr >= rows || qq >= cols {
                    continue;
                }
                let g = grid.fine_index(rr as usize, qq as usize);
                if grid.in_mask(g) {
                    weights.push((g, (-0.5 * (dr * dr + dq * dq) as f64).exp()));
                }
            }
        }
        let total: f64 = weights.iter().map(|w| w.1).sum();
        for (g, w) in weights {
            out[g] += c * w / total;
        }
    }
    out
}

/// Posterior-mean rate surfaces on fine cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMaps {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Averages `μ(s) = exp(α0 + zᵀα)` and `λ(s) = γ0 + wᵀγ` over retained draws.
pub fn posterior_rate_maps(
    chains: &[ChainOutput],
    covariates: &CovariateRaster,
    diffusion_layers: &[String],
    growth_layers: &[String],
) -> Result<RateMaps> {
    let n_cells = covariates.n_cells();
    let mut mu = vec![0.0; n_cells];
    let mut lambda = vec![0.0; n_cells];
    let mut n = 0usize;
    for d in chains.iter().flat_map(|c| &c.draws) {
        let m = diffusion_field(d.alpha0, &d.alpha, diffusion_layers, covariates)?;
        let l = growth_field(d.gamma0, &d.gamma, growth_layers, covariates)?;
        for i in 0..n_cells {
            mu[i] += m[i];
            lambda[i] += l[i];
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientData(
            "chains contain no retained draws".into(),
        ));
    }
    let scale = 1.0 / n as f64;
    mu.iter_mut()
        .chain(lambda.iter_mut())
        .for_each(|v| *v *= scale);
    Ok(RateMaps { mu, lambda })
}
