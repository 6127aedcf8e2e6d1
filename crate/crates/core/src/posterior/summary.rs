use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcmc::run::ChainOutput;
use crate::mcmc::state::{scalar_values, ParameterState};
use crate::observation::csv_error;
use crate::time::Month;

/// Fewer pooled draws than this earn a warning.
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub level: f64,
    pub n_draws: usize,
    pub parameters: Vec<ScalarSummary>,
    /// Posterior probability of introduction in each calendar year.
    pub year_pmf: Vec<(i64, f64)>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ScalarSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn write_parameters(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for p in &self.parameters {
            w.serialize(p).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_year_pmf(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["year", "probability"])
            .map_err(|e| csv_error(path, e))?;
        for (y, p) in &self.year_pmf {
            w.write_record([y.to_string(), p.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, median and equal-tailed interval of `values` at `level`.
pub fn summarize_values(name: &str, values: &[f64], level: f64) -> Result<ScalarSummary> {
    if values.is_empty() {
        return Err(Error::InsufficientData(format!("no draws for {name}")));
    }
    check_level(level)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(ScalarSummary {
        name: name.to_string(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        lower: quantile_sorted(&sorted, tail),
        upper: quantile_sorted(&sorted, 1.0 - tail),
    })
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "credible level must lie in (0, 1), got {level}"
        )))
    }
}

/// Fraction of `t0` draws falling in each calendar year, ascending by year.
pub fn year_pmf(t0: impl IntoIterator<Item = Month>) -> Vec<(i64, f64)> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    let mut n = 0usize;
    for m in t0 {
        *counts.entry(m.year()).or_default() += 1;
        n += 1;
    }
    counts
        .into_iter()
        .map(|(y, c)| (y, c as f64 / n as f64))
        .collect()
}

/// All retained draws across chains, in chain order.
pub fn pooled_draws(chains: &[ChainOutput]) -> Vec<&ParameterState> {
    chains.iter().flat_map(|c| c.draws.iter()).collect()
}

/// Marginal summaries for every scalar in `names` (the layout of
/// [`scalar_values`]) plus the calendar-year distribution of `t0`.
pub fn summarize_marginals(
    chains: &[ChainOutput],
    names: &[String],
    level: f64,
) -> Result<PosteriorSummary> {
    check_level(level)?;
    let draws = pooled_draws(chains);
    if draws.is_empty() {
        return Err(Error::InsufficientData(
            "chains contain no retained draws".into(),
        ));
    }
    if draws.len() < MIN_DRAWS {
        log::warn!(
            "only {} retained draws; summaries will be noisy",
            draws.len()
        );
    }
    let rows: Vec<Vec<f64>> = draws.iter().map(|d| scalar_values(d)).collect();
    if rows[0].len() != names.len() {
        return Err(Error::Config(format!(
            "{} parameter names for {} scalar columns",
            names.len(),
            rows[0].len()
        )));
    }
    let parameters = names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[p]).collect();
            summarize_values(name, &col, level)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSummary {
        level,
        n_draws: draws.len(),
        parameters,
        year_pmf: year_pmf(draws.iter().map(|d| d.t0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_draws_give_zero_width_interval() {
        let s = summarize_values("x", &[2.5; 300], 0.9).unwrap();
        assert_eq!((s.lower, s.median, s.upper, s.mean), (2.5, 2.5, 2.5, 2.5));
    }

    #[test]
    fn normal_draws_give_analytic_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let s = summarize_values("z", &x, 0.9).unwrap();
        assert!((s.lower + 1.645).abs() < 0.05, "{}", s.lower);
        assert!((s.upper - 1.645).abs() < 0.05, "{}", s.upper);
        assert!(s.lower <= s.median && s.median <= s.upper);
    }

    #[test]
    fn uniform_months_give_flat_year_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let start = Month::from_ym(1990, 1);
        let pmf = year_pmf((0..10_000).map(|_| start.offset(rng.random_range(0..120))));
        assert_eq!(pmf.len(), 10);
        assert_eq!(pmf[0].0, 1990);
        assert!((pmf.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-9);
        for (_, p) in pmf {
            assert!((p - 0.1).abs() < 0.02);
        }
    }

    #[test]
    fn level_and_emptiness_are_checked() {
        assert!(summarize_values("x", &[], 0.9).is_err());
        assert!(summarize_values("x", &[1.0], 1.0).is_err());
        assert!(summarize_marginals(&[], &[], 0.9).is_err());
    }
}
