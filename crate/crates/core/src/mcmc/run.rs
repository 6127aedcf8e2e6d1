use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::model::{probit_log_likelihood, Evaluator, FitProblem};
use crate::mcmc::prior::sample_location;
use crate::mcmc::state::ParameterState;
use crate::mcmc::updates::{
    joint_vector, update_beta, AcceptanceStats, BetaData, BlockStats, Chain, ProposalScales,
};

/// Acceptance targets for Robbins–Monro adaptation.
const TARGET_SCALAR: f64 = 0.44;
const TARGET_MULTIVARIATE: f64 = 0.234;
const INIT_ATTEMPTS: usize = 200;
/// Prior draws scored when choosing a starting point for a data fit.
const INIT_CANDIDATES: usize = 32;
/// Gibbs sweeps on beta applied to each candidate before scoring it.
const INIT_BETA_SWEEPS: usize = 5;
/// Intercept grids for the starting-point search (log km^2/month, 1/month).
const INIT_ALPHA0: [f64; 6] = [-2.0, 0.0, 2.0, 4.0, 6.0, 8.0];
const INIT_GAMMA0: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.5];
/// Window quantiles tried for t0.
const INIT_T0_QUANTILES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
/// Positive sample locations tried for the source.
const INIT_LOCATIONS: usize = 4;
/// The joint block learns its covariance from the last three quarters of
/// burn-in and refreshes it this often.
const JOINT_REFRESH: usize = 200;
const JOINT_MIN_HISTORY: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MCMCConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub adapt: bool,
    pub seed: u64,
    pub proposal_scales: ProposalScales,
    /// `false` runs the sampler on the prior alone.
    pub use_likelihood: bool,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        MCMCConfig {
            n_chains: 3,
            n_iterations: 320_000,
            n_burnin: 20_000,
            thin: 100,
            adapt: true,
            seed: 1,
            proposal_scales: ProposalScales::default(),
            use_likelihood: true,
        }
    }
}

impl MCMCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(Error::Config(format!(
                "n_burnin ({}) must be less than n_iterations ({})",
                self.n_burnin, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        let s = &self.proposal_scales;
        if [s.alpha, s.gamma, s.log_theta, s.omega_km, s.t0_months]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config(
                "proposal scales must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iterations - self.n_burnin) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain_id: usize,
    pub draws: Vec<ParameterState>,
    pub log_post: Vec<f64>,
    /// Iteration number (1-based) of each retained draw.
    pub iterations: Vec<usize>,
    /// Acceptance counts over post-burn-in iterations.
    pub acceptance: AcceptanceStats,
    pub blowups: u64,
    pub final_scales: ProposalScales,
}

/// Deterministic per-stream RNG derived from a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a starting state from the prior.
pub fn initial_state_from_prior(problem: &FitProblem, rng: &mut ChaCha8Rng) -> ParameterState {
    let p = &problem.prior;
    ParameterState {
        alpha0: p.sample_coefficient(rng),
        alpha: problem
            .diffusion_layers
            .iter()
            .map(|_| p.sample_coefficient(rng))
            .collect(),
        gamma0: p.sample_coefficient(rng),
        gamma: problem
            .growth_layers
            .iter()
            .map(|_| p.sample_coefficient(rng))
            .collect(),
        beta: (0..problem.design.n_coefficients())
            .map(|_| p.sample_beta(rng))
            .collect(),
        omega: (0..problem.n_sources)
            .map(|_| sample_location(&problem.grid, problem.support(), rng))
            .collect(),
        t0: p.sample_t0(rng),
        theta: (0..problem.n_sources)
            .map(|_| p.sample_log_theta(rng).exp())
            .collect(),
    }
}

/// Starts a chain from the prior. With the likelihood on, the best of
/// several prior draws (after a few beta sweeps) is used, which keeps chains
/// off plateaus where the intensity is floored everywhere.
fn start_chain<'p>(
    problem: &'p FitProblem,
    config: &MCMCConfig,
    chain_id: usize,
) -> Result<Chain<'p>> {
    let mut rng = stream_rng(config.seed, chain_id as u64);
    let wanted = if config.use_likelihood {
        INIT_CANDIDATES
    } else {
        1
    };
    let mut best: Option<Chain<'p>> = None;
    let mut found = 0;
    let mut last_err = None;
    for _ in 0..INIT_ATTEMPTS {
        if found == wanted {
            break;
        }
        let state = initial_state_from_prior(problem, &mut rng);
        let probe = rng.clone();
        match Chain::new(
            problem,
            state,
            config.use_likelihood,
            probe,
            config.proposal_scales,
        ) {
            Ok(mut chain) if chain.log_posterior().is_finite() => {
                found += 1;
                if config.use_likelihood {
                    for _ in 0..INIT_BETA_SWEEPS {
                        chain.update_beta();
                    }
                }
                if best
                    .as_ref()
                    .is_none_or(|b| chain.log_posterior() > b.log_posterior())
                {
                    best = Some(chain);
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    if let Some(state) = config
        .use_likelihood
        .then(|| grid_start(problem, &mut rng))
        .flatten()
    {
        let probe = rng.clone();
        if let Ok(chain) = Chain::new(problem, state, true, probe, config.proposal_scales) {
            if best
                .as_ref()
                .is_none_or(|b| chain.log_posterior() > b.log_posterior())
            {
                best = Some(chain);
            }
        }
    }
    let mut chain = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| {
            Error::Domain(format!(
                "chain {chain_id}: no prior draw gave a finite posterior"
            ))
        })
    })?;
    chain.stats = AcceptanceStats::default();
    chain.rng = rng;
    log::debug!(
        "chain {chain_id} starts at log posterior {:.3}",
        chain.log_posterior()
    );
    Ok(chain)
}

/// Coarse search over intercepts, introduction dates and a few positive
/// sample locations, with slopes at zero and `theta` at its prior median.
fn grid_start(problem: &FitProblem, rng: &mut ChaCha8Rng) -> Option<ParameterState> {
    let prior = &problem.prior;
    let mut omegas: Vec<_> = problem
        .samples
        .iter()
        .filter(|s| s.y == 1 && problem.grid.locate_in_support(s.location).is_some())
        .map(|s| s.location)
        .collect();
    omegas.shuffle(rng);
    omegas.truncate(INIT_LOCATIONS);
    if omegas.is_empty() {
        return None;
    }
    let last = (prior.window_len() - 1) as f64;
    let t0s: Vec<_> = INIT_T0_QUANTILES
        .iter()
        .map(|q| prior.t0_start.offset((q * last).round() as i64))
        .collect();
    let species: Vec<usize> = problem.prepared().iter().map(|p| p.species).collect();
    let positive: Vec<bool> = problem.prepared().iter().map(|p| p.positive).collect();
    let j = problem.n_sources;
    let mut s = ParameterState {
        alpha0: 0.0,
        alpha: vec![0.0; problem.diffusion_layers.len()],
        gamma0: 0.0,
        gamma: vec![0.0; problem.growth_layers.len()],
        beta: vec![0.0; problem.design.n_coefficients()],
        omega: vec![omegas[0]; j],
        t0: t0s[0],
        theta: vec![prior.theta_log_mean.exp(); j],
    };
    let mut best: Option<(f64, ParameterState)> = None;
    for &a0 in &INIT_ALPHA0 {
        for &g0 in &INIT_GAMMA0 {
            s.alpha0 = a0;
            s.gamma0 = g0;
            let Ok(mut ev) = Evaluator::for_state(problem, &s) else {
                continue;
            };
            for &w in &omegas {
                for &t0 in &t0s {
                    s.omega = vec![w; j];
                    s.t0 = t0;
                    if !problem.admits(&s) {
                        continue;
                    }
                    let Ok(log_u) = ev.log_intensities(problem, &s) else {
                        continue;
                    };
                    for _ in 0..INIT_BETA_SWEEPS {
                        let data = BetaData {
                            species: &species,
                            positive: &positive,
                            log_u: &log_u,
                        };
                        s.beta = update_beta(&s.beta, data, prior.sigma_beta, rng);
                    }
                    let lp = probit_log_likelihood(problem.prepared(), &log_u, &s.beta)
                        + problem.log_prior(&s);
                    if lp.is_finite() && best.as_ref().is_none_or(|(b, _)| lp > *b) {
                        best = Some((lp, s.clone()));
                    }
                }
            }
        }
    }
    best.map(|(_, s)| s)
}

struct Adapter {
    log_scale: f64,
    target: f64,
    n: u64,
}

impl Adapter {
    fn new(scale: f64, target: f64) -> Self {
        Adapter {
            log_scale: scale.max(1e-12).ln(),
            target,
            n: 0,
        }
    }

    /// Robbins–Monro step on the log scale using the acceptance delta since
    /// the previous call.
    fn step(&mut self, before: BlockStats, after: BlockStats) -> f64 {
        let tried = after.proposed - before.proposed;
        if tried > 0 {
            let rate = (after.accepted - before.accepted) as f64 / tried as f64;
            self.n += 1;
            let gain = (self.n as f64).powf(-0.6);
            self.log_scale += gain * (rate - self.target);
        }
        self.log_scale.exp()
    }
}

/// Running covariance of the joint coordinates, turned into a scaled
/// Cholesky factor for [`Chain::update_joint`].
struct JointAdapter {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    scale: Adapter,
    factor: Option<DMatrix<f64>>,
}

impl JointAdapter {
    fn new(dim: usize) -> Self {
        JointAdapter {
            n: 0.0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
            scale: Adapter::new(2.38 / (dim as f64).sqrt(), TARGET_MULTIVARIATE),
            factor: None,
        }
    }

    fn observe(&mut self, x: &[f64]) {
        let x = DVector::from_column_slice(x);
        self.n += 1.0;
        let delta = &x - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn refresh(&mut self) {
        if self.n < JOINT_MIN_HISTORY as f64 {
            return;
        }
        let mut cov = &self.m2 / (self.n - 1.0);
        for i in 0..cov.nrows() {
            cov[(i, i)] += 1e-8 * (1.0 + cov[(i, i)]);
        }
        if let Some(ch) = cov.cholesky() {
            self.factor = Some(ch.l() * self.scale.log_scale.exp());
        }
    }

    fn rescale(&mut self, before: BlockStats, after: BlockStats) {
        let old = self.scale.log_scale;
        self.scale.step(before, after);
        if let Some(f) = self.factor.as_mut() {
            *f *= (self.scale.log_scale - old).exp();
        }
    }
}

/// Runs one chain to completion.
pub fn run_chain(
    problem: &FitProblem,
    config: &MCMCConfig,
    chain_id: usize,
) -> Result<ChainOutput> {
    let mut chain = start_chain(problem, config, chain_id)?;
    let target_for = |dim: usize| {
        if dim <= 1 {
            TARGET_SCALAR
        } else {
            TARGET_MULTIVARIATE
        }
    };
    let scales = config.proposal_scales;
    let mut adapt_alpha =
        Adapter::new(scales.alpha, target_for(1 + problem.diffusion_layers.len()));
    let mut adapt_gamma = Adapter::new(scales.gamma, target_for(1 + problem.growth_layers.len()));
    let mut adapt_theta = Adapter::new(scales.log_theta, TARGET_SCALAR);
    let mut adapt_intro = Adapter::new(1.0, TARGET_MULTIVARIATE);
    let mut joint = JointAdapter::new(joint_vector(&chain.state).len());
    let learn_from = config.n_burnin / 4;

    let mut out = ChainOutput {
        chain_id,
        draws: Vec::with_capacity(config.retained_per_chain()),
        log_post: Vec::with_capacity(config.retained_per_chain()),
        iterations: Vec::with_capacity(config.retained_per_chain()),
        acceptance: AcceptanceStats::default(),
        blowups: 0,
        final_scales: scales,
    };
    let mut burnin_stats = AcceptanceStats::default();
    for iter in 1..=config.n_iterations {
        let before = chain.stats;
        chain.update_beta();
        chain.update_dynamics();
        chain.update_introduction();
        if config.adapt {
            if let Some(f) = &joint.factor {
                chain.update_joint(f);
            }
        }
        if iter % 1000 == 0 {
            log::debug!(
                "chain {chain_id} iteration {iter}: log posterior {:.3}, scales {:?}",
                chain.log_posterior(),
                chain.scales
            );
        }
        if iter <= config.n_burnin {
            if config.adapt {
                let after = chain.stats;
                chain.scales.alpha = adapt_alpha.step(before.alpha, after.alpha);
                chain.scales.gamma = adapt_gamma.step(before.gamma, after.gamma);
                chain.scales.log_theta = adapt_theta.step(before.theta, after.theta);
                let m = adapt_intro
                    .step(before.introduction, after.introduction)
                    .clamp(1e-3, 1e3);
                chain.scales.omega_km = scales.omega_km * m;
                chain.scales.t0_months = (scales.t0_months * m).max(1.0);
                joint.rescale(before.joint, chain.stats.joint);
                if iter > learn_from {
                    joint.observe(&joint_vector(&chain.state));
                    if (iter - learn_from).is_multiple_of(JOINT_REFRESH) {
                        joint.refresh();
                    }
                }
            }
            if iter == config.n_burnin {
                burnin_stats = chain.stats;
            }
            continue;
        }
        if (iter - config.n_burnin).is_multiple_of(config.thin) {
            out.draws.push(chain.state.clone());
            out.log_post.push(chain.log_posterior());
            out.iterations.push(iter);
        }
    }
    let diff = |a: BlockStats, b: BlockStats| BlockStats {
        proposed: a.proposed - b.proposed,
        accepted: a.accepted - b.accepted,
    };
    let s = chain.stats;
    out.acceptance = AcceptanceStats {
        beta: diff(s.beta, burnin_stats.beta),
        alpha: diff(s.alpha, burnin_stats.alpha),
        gamma: diff(s.gamma, burnin_stats.gamma),
        theta: diff(s.theta, burnin_stats.theta),
        introduction: diff(s.introduction, burnin_stats.introduction),
        joint: diff(s.joint, burnin_stats.joint),
    };
    for (name, b) in out.acceptance.blocks() {
        if b.proposed > 0 && b.accepted == 0 {
            log::warn!("chain {chain_id}: block {name} accepted no proposals after burn-in");
        }
    }
    out.blowups = chain.blowups;
    out.final_scales = chain.scales;
    Ok(out)
}

/// Runs every chain (concurrently on the current rayon pool). Output order and
/// content depend only on the inputs and `config.seed`.
pub fn run_mcmc(problem: &FitProblem, config: &MCMCConfig) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    (0..config.n_chains)
        .into_par_iter()
        .map(|id| run_chain(problem, config, id))
        .collect()
}
