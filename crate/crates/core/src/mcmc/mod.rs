//! Metropolis-within-Gibbs sampler for the joint posterior.

pub mod diagnostics;
pub mod model;
pub mod output;
pub mod prior;
pub mod run;
pub mod state;
pub mod updates;

pub use diagnostics::{chain_diagnostics, effective_sample_size, split_rhat, DiagnosticsSummary};
pub use model::{Evaluator, FitProblem};
pub use output::{read_chains, write_chains, ChainLayout};
pub use prior::PriorSpec;
pub use run::{run_chain, run_mcmc, ChainOutput, MCMCConfig};
pub use state::ParameterState;
pub use updates::{AcceptanceStats, ProposalScales};
