//! Convergence diagnostics: split-R̂ and autocorrelation-based effective
//! sample size.

use serde::Serialize;

use crate::mcmc::run::ChainOutput;
use crate::mcmc::state::scalar_values;
use crate::mcmc::updates::AcceptanceStats;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-R̂ over `chains`. `None` with fewer than two chains, fewer than four
/// draws per chain, or zero within-chain variance.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let n = chains.iter().map(|c| c.len()).min()? / 2;
    if n < 2 {
        return None;
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..n], &c[n..2 * n]])
        .collect();
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = mean(&means);
    let nf = n as f64;
    let b = nf / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = halves.iter().map(|h| sample_var(h)).sum::<f64>() / m;
    if !(w > 0.0) {
        return None;
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Some((var_plus / w).sqrt())
}

fn autocorrelations(x: &[f64], max_lag: usize) -> impl Iterator<Item = f64> + '_ {
    let n = x.len();
    let m = mean(x);
    let c0 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    (0..max_lag.min(n)).map(move |k| {
        let ck = (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / n as f64;
        ck / c0
    })
}

/// Effective sample size of one chain: `n / (−1 + 2 Σ Γ_k)` where
/// `Γ_k = ρ_{2k} + ρ_{2k+1}`, summed until the first negative pair.
pub fn effective_sample_size(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let m = mean(x);
    if x.iter().all(|v| (v - m).abs() == 0.0) {
        return None;
    }
    let rho: Vec<f64> = autocorrelations(x, n).collect();
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair < 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    Some(n as f64 / tau)
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub rhat: Option<f64>,
    /// Summed over chains.
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsSummary {
    pub parameters: Vec<ParameterDiagnostics>,
    pub acceptance: Vec<(usize, AcceptanceStats)>,
    pub warnings: Vec<String>,
}

pub fn chain_diagnostics(chains: &[ChainOutput], names: &[String]) -> DiagnosticsSummary {
    let mut warnings = Vec::new();
    if chains.len() < 2 {
        warnings.push("fewer than two chains: R-hat omitted".to_string());
    }
    let series: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| {
            let rows: Vec<Vec<f64>> = c.draws.iter().map(scalar_values).collect();
            (0..names.len())
                .map(|p| rows.iter().map(|r| r[p]).collect())
                .collect()
        })
        .collect();
    let parameters = names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let per_chain: Vec<&[f64]> = series.iter().map(|s| s[p].as_slice()).collect();
            let rhat = split_rhat(&per_chain);
            let ess: Option<f64> = per_chain
                .iter()
                .map(|c| effective_sample_size(c))
                .try_fold(0.0, |acc, e| e.map(|v| acc + v));
            if chains.len() >= 2 && rhat.is_none() {
                warnings.push(format!(
                    "{name}: R-hat undefined (zero within-chain variance)"
                ));
            }
            if ess.is_none() {
                warnings.push(format!("{name}: effective sample size undefined"));
            }
            ParameterDiagnostics {
                name: name.clone(),
                rhat,
                ess,
            }
        })
        .collect();
    DiagnosticsSummary {
        parameters,
        acceptance: chains.iter().map(|c| (c.chain_id, c.acceptance)).collect(),
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_chains_are_flagged() {
        let a = vec![1.0; 100];
        assert_eq!(split_rhat(&[&a, &a]), None);
        assert_eq!(effective_sample_size(&a), None);
    }

    #[test]
    fn independent_normals_have_rhat_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                (0..10_000)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let r = split_rhat(&refs).unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");
        assert!(split_rhat(&refs[..1]).is_none());
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let rho: f64 = 0.9;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Vec::with_capacity(n);
        let mut v: f64 = StandardNormal.sample(&mut rng);
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            v = rho * v + (1.0 - rho * rho).sqrt() * e;
            x.push(v);
        }
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        let ess = effective_sample_size(&x).unwrap();
        assert!((ess / expected - 1.0).abs() < 0.25, "{ess} vs {expected}");
    }

    #[test]
    fn separated_chains_have_large_rhat() {
        let a: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 50.0).collect();
        assert!(split_rhat(&[&a, &b]).unwrap() > 2.0);
    }
}
