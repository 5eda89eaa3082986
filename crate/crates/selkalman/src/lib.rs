//! Selection Kalman model: Bayesian inversion of Gauss-linear state-space
//! models whose initial distribution is selection-Gaussian, together with
//! the traditional Kalman baseline, an implicit advection-diffusion
//! forward model, and posterior summarization (MMAP maps, highest-density
//! intervals, RMSE, realizations).

pub mod error;
pub mod forward;
pub mod gaussian;
pub mod inference;
pub mod kalman;
pub mod selection;
mod univariate;

pub use error::{Error, Result};
pub use gaussian::{derive_seed, GaussianDist, IntervalUnion, RectProbConfig, RectProbEstimate, SelectionSet};
