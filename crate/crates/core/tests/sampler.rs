mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use pointsource::mcmc::model::log_normal_cdf;
use pointsource::mcmc::run::{initial_state_from_prior, stream_rng};
use pointsource::mcmc::updates::{update_beta, BetaData, Chain};
use pointsource::mcmc::{run_mcmc, write_chains, ChainLayout, MCMCConfig, ProposalScales};
use pointsource::posterior::location_posterior_map;
use pointsource::Month;

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

/// Batch-means Monte Carlo standard error.
fn mcse(xs: &[f64]) -> f64 {
    let b = 50;
    let size = xs.len() / b;
    let means: Vec<f64> = xs
        .chunks(size)
        .take(b)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    (mean_and_var(&means).1 / b as f64).sqrt()
}

#[test]
fn beta_self_consistency_at_known_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 2000;
    let truth = 0.8;
    let p = Normal::new(0.0, 1.0).unwrap().cdf(truth);
    let positive: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < p).collect();
    let species = vec![0usize; n];
    let log_u = vec![0.0; n];
    let data = BetaData {
        species: &species,
        positive: &positive,
        log_u: &log_u,
    };
    let mut beta = vec![0.0];
    let mut draws = Vec::new();
    for i in 0..6000 {
        beta = update_beta(&beta, data, 2.5, &mut rng);
        if i >= 1000 {
            draws.push(beta[0]);
        }
    }
    let (m, v) = mean_and_var(&draws);
    assert!(
        (m - truth).abs() < 3.0 * v.sqrt(),
        "mean {m}, sd {}",
        v.sqrt()
    );
}

#[test]
fn beta_gibbs_mean_matches_random_walk_metropolis() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200;
    let species: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let log_u: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 / n as f64)).collect();
    let positive: Vec<bool> = log_u
        .iter()
        .zip(&species)
        .map(|(lu, &k)| {
            let eta = lu + [0.3, -0.4][k];
            rng.random::<f64>() < Normal::new(0.0, 1.0).unwrap().cdf(eta)
        })
        .collect();
    let data = BetaData {
        species: &species,
        positive: &positive,
        log_u: &log_u,
    };
    let sigma = 2.5;
    let log_target = |b: &[f64]| -> f64 {
        let mut lp = -0.5 * b.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma);
        for i in 0..n {
            let eta = log_u[i] + b[species[i]];
            lp += if positive[i] {
                log_normal_cdf(eta)
            } else {
                log_normal_cdf(-eta)
            };
        }
        lp
    };

    let mut gibbs = Vec::new();
    let mut beta = vec![0.0, 0.0];
    for i in 0..21_000 {
        beta = update_beta(&beta, data, sigma, &mut rng);
        if i >= 1000 {
            gibbs.push(beta[0]);
        }
    }
    let mut rwm = Vec::new();
    let mut cur = vec![0.0, 0.0];
    let mut cur_lp = log_target(&cur);
    for i in 0..120_000 {
        let prop: Vec<f64> = cur
            .iter()
            .map(|c| c + 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let lp = log_target(&prop);
        if rng.random::<f64>().ln() < lp - cur_lp {
            cur = prop;
            cur_lp = lp;
        }
        if i >= 20_000 {
            rwm.push(cur[0]);
        }
    }
    let (mg, _) = mean_and_var(&gibbs);
    let (mr, _) = mean_and_var(&rwm);
    let se = (mcse(&gibbs).powi(2) + mcse(&rwm).powi(2)).sqrt();
    assert!((mg - mr).abs() < 3.0 * se, "gibbs {mg}, rwm {mr}, se {se}");
}

#[test]
fn full_length_run_keeps_the_draw_count() {
    let problem = common::toy_problem();
    let cfg = MCMCConfig {
        n_chains: 3,
        n_iterations: 320_000,
        n_burnin: 20_000,
        thin: 100,
        use_likelihood: false,
        seed: 3,
        ..MCMCConfig::default()
    };
    let chains = run_mcmc(&problem, &cfg).unwrap();
    assert_eq!(chains.len(), 3);
    for c in &chains {
        assert_eq!(c.draws.len(), 3000);
        assert_eq!(c.log_post.len(), 3000);
        assert!(c.draws.iter().all(|d| problem.admits(d)));
    }
}

#[test]
fn prior_recovery_for_dynamics_coefficients() {
    let problem = common::toy_problem();
    let cfg = MCMCConfig {
        n_chains: 1,
        n_iterations: 110_000,
        n_burnin: 10_000,
        thin: 10,
        use_likelihood: false,
        seed: 17,
        ..MCMCConfig::default()
    };
    let chains = run_mcmc(&problem, &cfg).unwrap();
    let draws = &chains[0].draws;
    assert_eq!(draws.len(), 10_000);
    let normal = Normal::new(0.0, 2.5).unwrap();
    let ks_a = ks_statistic(draws.iter().map(|d| d.alpha0).collect(), |x| normal.cdf(x));
    let ks_g = ks_statistic(draws.iter().map(|d| d.gamma0).collect(), |x| normal.cdf(x));
    let std = Normal::new(0.0, 1.0).unwrap();
    let ks_t = ks_statistic(draws.iter().map(|d| d.theta[0].ln()).collect(), |x| {
        std.cdf(x)
    });
    for (name, ks) in [("alpha0", ks_a), ("gamma0", ks_g), ("log theta", ks_t)] {
        assert!(ks < 0.05, "{name}: KS distance {ks}");
    }
}

#[test]
fn zero_dynamics_scale_stays_put() {
    let problem = common::toy_problem();
    let mut rng = stream_rng(5, 0);
    let start = initial_state_from_prior(&problem, &mut rng);
    let scales = ProposalScales {
        alpha: 0.0,
        gamma: 0.0,
        log_theta: 0.0,
        ..ProposalScales::default()
    };
    let mut chain = Chain::new(&problem, start.clone(), true, rng, scales).unwrap();
    for _ in 0..20 {
        chain.update_dynamics();
    }
    assert_eq!(chain.state.alpha0, start.alpha0);
    assert_eq!(chain.state.alpha, start.alpha);
    assert_eq!(chain.state.gamma0, start.gamma0);
    assert_eq!(chain.state.theta, start.theta);
    assert_eq!(chain.stats.alpha.rate(), 1.0);
    assert_eq!(chain.stats.gamma.rate(), 1.0);
    assert_eq!(chain.stats.theta.rate(), 1.0);
}

#[test]
fn zero_location_step_only_moves_by_independent_draws() {
    let problem = common::toy_problem();
    let mut rng = stream_rng(6, 0);
    let start = initial_state_from_prior(&problem, &mut rng);
    let scales = ProposalScales {
        omega_km: 0.0,
        ..ProposalScales::default()
    };
    let mut chain = Chain::new(&problem, start, false, rng, scales).unwrap();
    let n = 4000;
    let mut moved = 0;
    for _ in 0..n {
        let before = chain.state.omega[0];
        chain.update_introduction();
        if chain.state.omega[0] != before {
            moved += 1;
        }
    }
    // Only the 10% independent component can change the location.
    let frac = moved as f64 / n as f64;
    assert!(
        (0.07..0.13).contains(&frac),
        "location changed in {frac} of updates"
    );
}

#[test]
fn clustered_positives_locate_the_source() {
    let start = Month::from_ym(2005, 1);
    let first = start.offset(6);
    let (lx, ly) = (95.0, 145.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let samples: Vec<_> = (0..60)
        .map(|i| {
            let dx = rng.random_range(-5.0..5.0);
            let dy = rng.random_range(-5.0..5.0);
            common::record(lx + dx, ly + dy, first.offset(i % 3), "A", 1)
        })
        .collect();
    let problem = common::problem(samples, common::prior(start, first.offset(-1)), &["A"]);
    let cfg = MCMCConfig {
        n_chains: 2,
        n_iterations: 3000,
        n_burnin: 1500,
        thin: 5,
        seed: 4,
        ..MCMCConfig::default()
    };
    let chains = run_mcmc(&problem, &cfg).unwrap();
    let map = location_posterior_map(&chains, &problem.grid, false).unwrap();
    let mode = (0..map.len())
        .max_by(|&a, &b| map[a].total_cmp(&map[b]))
        .unwrap();
    let c = problem.grid.fine_center(mode);
    let coarse = problem.grid.coarse_cell_size();
    assert!(
        (c.x - lx).abs() <= coarse && (c.y - ly).abs() <= coarse,
        "mode at ({}, {}), truth ({lx}, {ly})",
        c.x,
        c.y
    );
}

#[test]
fn identical_seeds_give_identical_chain_files() {
    let problem = common::toy_problem();
    let cfg = MCMCConfig {
        n_chains: 2,
        n_iterations: 400,
        n_burnin: 200,
        thin: 2,
        seed: 99,
        ..MCMCConfig::default()
    };
    let a = run_mcmc(&problem, &cfg).unwrap();
    let b = run_mcmc(&problem, &cfg).unwrap();
    assert_eq!(a, b);
    let layout = ChainLayout {
        diffusion_layers: problem.diffusion_layers.clone(),
        growth_layers: Vec::new(),
        species: problem.design.species_order.clone(),
        n_sources: 1,
    };
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_chains(&pa, &layout, &a).unwrap();
    write_chains(&pb, &layout, &b).unwrap();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}
