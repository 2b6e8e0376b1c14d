//! Markov chain Monte Carlo kernels.
//!
//! - [`sphhmc`]: spherical HMC on products of spheres with adaptive
//!   trajectory length.
//! - [`adapt`]: dual-averaging step-size adaptation.
//! - [`ess`]: elliptical slice sampling under matrix-normal priors.
//! - [`slice`]: univariate slice sampling with stepping out.
//! - [`hmc`]: Euclidean HMC.
//! - [`gibbs`]: conjugate inverse-Gamma and Gaussian draws.

pub mod adapt;
pub mod ess;
pub mod gibbs;
pub mod hmc;
pub mod slice;
pub mod sphhmc;

pub use adapt::{dual_averaging_update, AdaptiveSphHmc, DualAvgState, DEFAULT_TARGET_ACCEPT};
pub use ess::ess_step;
pub use gibbs::{gibbs_gamma, gibbs_mu, GpBlock};
pub use hmc::hmc_step_euclidean;
pub use slice::slice_step_1d;
pub use sphhmc::{
    delta_sphhmc_step, sphhmc_accept_delta, sphhmc_leapfrog, stop_stochastic, stop_two_orthants,
    SphHmcConfig, SphereTarget, StepInfo, StopRule,
};
