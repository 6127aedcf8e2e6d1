//! Metropolis-within-Gibbs update blocks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Point;
use crate::mcmc::model::{probit_log_likelihood, Evaluator, FitProblem};
use crate::mcmc::prior::sample_location;
use crate::mcmc::state::ParameterState;
use crate::normal::sample_truncated_at_zero;

/// Random-walk step sizes per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalScales {
    /// Per-coordinate SD for `(α0, α)`.
    pub alpha: f64,
    /// Per-coordinate SD for `(γ0, γ)`.
    pub gamma: f64,
    /// SD on `log θ`.
    pub log_theta: f64,
    /// Per-axis SD of local moves of `ω`, km.
    pub omega_km: f64,
    /// Half-width of local moves of `t0`, months.
    pub t0_months: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        ProposalScales {
            alpha: 0.1,
            gamma: 0.01,
            log_theta: 0.3,
            omega_km: 50.0,
            t0_months: 6.0,
        }
    }
}

/// Probability that an introduction proposal is a local move rather than an
/// independent draw from the prior.
pub const LOCAL_MOVE_PROB: f64 = 0.9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl BlockStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub beta: BlockStats,
    pub alpha: BlockStats,
    pub gamma: BlockStats,
    pub theta: BlockStats,
    pub introduction: BlockStats,
    pub joint: BlockStats,
}

impl AcceptanceStats {
    pub fn blocks(&self) -> [(&'static str, BlockStats); 6] {
        [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("theta", self.theta),
            ("introduction", self.introduction),
            ("joint", self.joint),
        ]
    }
}

/// The data the `β` full conditional depends on.
#[derive(Debug, Clone, Copy)]
pub struct BetaData<'a> {
    /// Species index of each sample.
    pub species: &'a [usize],
    pub positive: &'a [bool],
    /// `log max(u_i, floor)` at each sample.
    pub log_u: &'a [f64],
}

/// Exact Gibbs draw of `β` by latent-normal augmentation.
///
/// With `h_i ~ N(log u_i + β_{k(i)}, 1)` truncated to the side of zero given
/// by `y_i`, the one-hot design makes `β_k | h` independent normals with
/// precision `n_k + 1/σ²` and mean `Σ_{i∈k}(h_i − log u_i) / (n_k + 1/σ²)`.
pub fn update_beta<R: Rng + ?Sized>(
    beta: &[f64],
    data: BetaData<'_>,
    sigma_beta: f64,
    rng: &mut R,
) -> Vec<f64> {
    let k = beta.len();
    let mut resid = vec![0.0; k];
    let mut count = vec![0.0; k];
    for ((&sp, &pos), &lu) in data.species.iter().zip(data.positive).zip(data.log_u) {
        let h = sample_truncated_at_zero(lu + beta[sp], pos, rng);
        resid[sp] += h - lu;
        count[sp] += 1.0;
    }
    let prior_prec = 1.0 / (sigma_beta * sigma_beta);
    (0..k)
        .map(|j| {
            let prec = count[j] + prior_prec;
            let z: f64 = StandardNormal.sample(rng);
            resid[j] / prec + z / prec.sqrt()
        })
        .collect()
}

/// One MCMC chain: current state plus the cached quantities the blocks share.
#[derive(Debug, Clone)]
pub struct Chain<'p> {
    pub(crate) problem: &'p FitProblem,
    pub state: ParameterState,
    evaluator: Option<Evaluator>,
    log_u: Vec<f64>,
    log_lik: f64,
    pub rng: ChaCha8Rng,
    pub scales: ProposalScales,
    pub stats: AcceptanceStats,
    /// Proposals rejected because the solver failed.
    pub blowups: u64,
    species: Vec<usize>,
    positive: Vec<bool>,
}

impl<'p> Chain<'p> {
    /// Starts a chain at `state`. With `use_likelihood == false` the chain
    /// targets the prior alone and never solves the PDE.
    pub fn new(
        problem: &'p FitProblem,
        state: ParameterState,
        use_likelihood: bool,
        rng: ChaCha8Rng,
        scales: ProposalScales,
    ) -> Result<Self> {
        let species = problem.prepared().iter().map(|p| p.species).collect();
        let positive = problem.prepared().iter().map(|p| p.positive).collect();
        let mut chain = Chain {
            problem,
            state,
            evaluator: None,
            log_u: Vec::new(),
            log_lik: 0.0,
            rng,
            scales,
            stats: AcceptanceStats::default(),
            blowups: 0,
            species,
            positive,
        };
        if use_likelihood {
            let mut ev = Evaluator::for_state(problem, &chain.state)?;
            chain.log_u = ev.log_intensities(problem, &chain.state)?;
            chain.log_lik =
                probit_log_likelihood(problem.prepared(), &chain.log_u, &chain.state.beta);
            chain.evaluator = Some(ev);
        }
        Ok(chain)
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_lik
    }

    pub fn log_posterior(&self) -> f64 {
        self.log_lik + self.problem.log_prior(&self.state)
    }

    pub fn uses_likelihood(&self) -> bool {
        self.evaluator.is_some()
    }

    /// PDE solves performed by the current evaluator.
    pub fn solves(&self) -> usize {
        self.evaluator.as_ref().map_or(0, |e| e.solves())
    }

    fn evaluate(&mut self, candidate: &ParameterState) -> Result<(Vec<f64>, f64)> {
        match self.evaluator.as_mut() {
            None => Ok((Vec::new(), 0.0)),
            Some(ev) => {
                let log_u = ev.log_intensities(self.problem, candidate)?;
                let ll = probit_log_likelihood(self.problem.prepared(), &log_u, &candidate.beta);
                Ok((log_u, ll))
            }
        }
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio
    }

    pub fn update_beta(&mut self) {
        let prior_sd = self.problem.prior.sigma_beta;
        let beta = if self.evaluator.is_none() {
            let n = self.state.beta.len();
            (0..n)
                .map(|_| self.problem.prior.sample_beta(&mut self.rng))
                .collect()
        } else {
            let data = BetaData {
                species: &self.species,
                positive: &self.positive,
                log_u: &self.log_u,
            };
            update_beta(&self.state.beta, data, prior_sd, &mut self.rng)
        };
        self.state.beta = beta;
        if self.evaluator.is_some() {
            self.log_lik =
                probit_log_likelihood(self.problem.prepared(), &self.log_u, &self.state.beta);
        }
        self.stats.beta.record(true);
    }

    /// Random-walk Metropolis on `(α0, α)`, `(γ0, γ)` and each `log θ_j`.
    pub fn update_dynamics(&mut self) {
        for growth in [false, true] {
            let scale = if growth {
                self.scales.gamma
            } else {
                self.scales.alpha
            };
            let mut cand = self.state.clone();
            {
                let (intercept, coefs) = if growth {
                    (&mut cand.gamma0, &mut cand.gamma)
                } else {
                    (&mut cand.alpha0, &mut cand.alpha)
                };
                *intercept += scale * Distribution::<f64>::sample(&StandardNormal, &mut self.rng);
                for c in coefs.iter_mut() {
                    *c += scale * Distribution::<f64>::sample(&StandardNormal, &mut self.rng);
                }
            }
            let accepted = self.try_dynamics(cand);
            if growth {
                self.stats.gamma.record(accepted);
            } else {
                self.stats.alpha.record(accepted);
            }
        }
        for j in 0..self.state.n_sources() {
            let mut cand = self.state.clone();
            let step: f64 = StandardNormal.sample(&mut self.rng);
            let old = self.state.theta[j].ln();
            let new = old + self.scales.log_theta * step;
            cand.theta[j] = new.exp();
            let prior = &self.problem.prior;
            let accepted = if cand.theta[j] > 0.0 && cand.theta[j].is_finite() {
                match self.evaluate(&cand) {
                    Ok((log_u, ll)) => {
                        let r =
                            ll - self.log_lik + prior.log_log_theta(new) - prior.log_log_theta(old);
                        if self.accept(r) {
                            self.state = cand;
                            self.log_u = log_u;
                            self.log_lik = ll;
                            true
                        } else {
                            false
                        }
                    }
                    Err(_) => false,
                }
            } else {
                false
            };
            self.stats.theta.record(accepted);
        }
    }

    /// Random walk on every coordinate of [`joint_vector`] at once, with
    /// increments `factor · z`. The `t0` increment is rounded to whole months,
    /// which keeps the proposal symmetric.
    pub fn update_joint(&mut self, factor: &DMatrix<f64>) {
        let d = factor.nrows();
        let z = DVector::from_fn(d, |_, _| {
            Distribution::<f64>::sample(&StandardNormal, &mut self.rng)
        });
        let step = factor * z;
        let cand = joint_apply(&self.state, step.as_slice());
        let accepted = self.problem.admits(&cand) && self.try_dynamics(cand);
        self.stats.joint.record(accepted);
    }

    fn try_dynamics(&mut self, cand: ParameterState) -> bool {
        let prior_ratio = self.problem.log_prior(&cand) - self.problem.log_prior(&self.state);
        if self.evaluator.is_none() {
            if self.accept(prior_ratio) {
                self.state = cand;
                return true;
            }
            return false;
        }
        let attempt = (|| -> Result<(Evaluator, Vec<f64>, f64)> {
            let mut ev = Evaluator::for_state(self.problem, &cand)?;
            let log_u = ev.log_intensities(self.problem, &cand)?;
            let ll = probit_log_likelihood(self.problem.prepared(), &log_u, &cand.beta);
            Ok((ev, log_u, ll))
        })();
        match attempt {
            Ok((ev, log_u, ll)) => {
                if self.accept(ll - self.log_lik + prior_ratio) {
                    self.state = cand;
                    self.evaluator = Some(ev);
                    self.log_u = log_u;
                    self.log_lik = ll;
                    true
                } else {
                    false
                }
            }
            Err(e) => {
                self.blowups += 1;
                log::debug!("dynamics proposal rejected: {e}");
                false
            }
        }
    }

    /// Mixture proposal on `(ω_j, t0)` for each source in turn.
    pub fn update_introduction(&mut self) {
        let problem = self.problem;
        let grid = &problem.grid;
        let prior = &problem.prior;
        let s_omega = self.scales.omega_km;
        let k = self.scales.t0_months.round().max(1.0) as i64;
        for j in 0..self.state.n_sources() {
            let local = self.rng.random::<f64>() < LOCAL_MOVE_PROB;
            let (omega, t0) = if local {
                let dx: f64 = StandardNormal.sample(&mut self.rng);
                let dy: f64 = StandardNormal.sample(&mut self.rng);
                let w = self.state.omega[j];
                let dt = self.rng.random_range(-k..=k);
                (
                    Point::new(w.x + s_omega * dx, w.y + s_omega * dy),
                    self.state.t0.offset(dt),
                )
            } else {
                (
                    sample_location(grid, problem.support(), &mut self.rng),
                    prior.sample_t0(&mut self.rng),
                )
            };
            if grid.locate_in_support(omega).is_none() || !prior.contains_t0(t0) {
                self.stats.introduction.record(false);
                continue;
            }
            let mut cand = self.state.clone();
            cand.omega[j] = omega;
            cand.t0 = t0;
            let log_q = |from: (Point, i64), to: (Point, i64)| -> f64 {
                mixture_log_density(
                    from,
                    to,
                    s_omega,
                    k,
                    problem.support_area(),
                    prior.window_len(),
                )
            };
            let here = (self.state.omega[j], self.state.t0.index());
            let there = (omega, t0.index());
            let hastings = if s_omega > 0.0 {
                log_q(there, here) - log_q(here, there)
            } else {
                0.0
            };
            let accepted = match self.evaluate(&cand) {
                Ok((log_u, ll)) => {
                    if self.accept(ll - self.log_lik + hastings) {
                        self.state = cand;
                        self.log_u = log_u;
                        self.log_lik = ll;
                        true
                    } else {
                        false
                    }
                }
                Err(e) => {
                    self.blowups += 1;
                    log::debug!("introduction proposal rejected: {e}");
                    false
                }
            };
            self.stats.introduction.record(accepted);
        }
    }
}

/// Coordinates moved by the joint block: `α0, α, γ0, γ, β, log θ, ω, t0`.
pub fn joint_vector(s: &ParameterState) -> Vec<f64> {
    let mut v = vec![s.alpha0];
    v.extend(&s.alpha);
    v.push(s.gamma0);
    v.extend(&s.gamma);
    v.extend(&s.beta);
    v.extend(s.theta.iter().map(|t| t.ln()));
    for w in &s.omega {
        v.extend([w.x, w.y]);
    }
    v.push(s.t0.index() as f64);
    v
}

/// `s` moved by `delta` in [`joint_vector`] coordinates.
fn joint_apply(s: &ParameterState, delta: &[f64]) -> ParameterState {
    let mut out = s.clone();
    let mut it = delta.iter().copied();
    let mut next = || it.next().unwrap_or(0.0);
    out.alpha0 += next();
    out.alpha.iter_mut().for_each(|a| *a += next());
    out.gamma0 += next();
    out.gamma.iter_mut().for_each(|g| *g += next());
    out.beta.iter_mut().for_each(|b| *b += next());
    out.theta
        .iter_mut()
        .for_each(|t| *t = (t.ln() + next()).exp());
    for w in out.omega.iter_mut() {
        w.x += next();
        w.y += next();
    }
    out.t0 = s.t0.offset(next().round() as i64);
    out
}

/// Log density of the introduction mixture proposal from `from` to `to`.
fn mixture_log_density(
    from: (Point, i64),
    to: (Point, i64),
    s_omega: f64,
    k: i64,
    support_area: f64,
    window_len: i64,
) -> f64 {
    let independent = (1.0 - LOCAL_MOVE_PROB) / (support_area * window_len as f64);
    let dt = (to.1 - from.1).abs();
    let local = if dt <= k {
        let d2 = (to.0.x - from.0.x).powi(2) + (to.0.y - from.0.y).powi(2);
        let var = s_omega * s_omega;
        LOCAL_MOVE_PROB * (-0.5 * d2 / var).exp()
            / (2.0 * std::f64::consts::PI * var)
            / (2 * k + 1) as f64
    } else {
        0.0
    };
    (local + independent).ln()
}
