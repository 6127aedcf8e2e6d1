//! Inference of the date and location of introduction of a spreading
//! pathogen from presence/absence surveillance records.
//!
//! A point-source initial condition feeds an ecological-diffusion PDE with
//! exponential growth; infection status of tested individuals depends on the
//! solved intensity through a log-normal CDF link. The full model is fit by
//! Metropolis-within-Gibbs.

pub mod error;
pub mod grid;
pub mod homogenize;
pub mod mcmc;
pub mod normal;
pub mod observation;
pub mod posterior;
pub mod raster;
pub mod rates;
pub mod solver;
pub mod time;

pub use error::{Error, Result};
pub use grid::{build_grid, Extent, GridSpec, Point};
pub use time::Month;
