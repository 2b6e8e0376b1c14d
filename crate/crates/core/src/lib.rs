//! Bayesian inference for static and dynamic correlation and covariance
//! matrices.
//!
//! Each row of a correlation Cholesky factor is a unit vector, so the factor
//! lives on a product of spheres. Rows are sampled with a spherical
//! Hamiltonian Monte Carlo integrator, and time-varying factors are given
//! unit-vector Gaussian process priors.
//!
//! Module map:
//!
//! - [`sphere`]: points and tangent vectors on spheres, geodesic flow,
//!   Cholesky/correlation conversions, Jacobians.
//! - [`priors`]: squared-Dirichlet, von Mises-Fisher, Bingham and
//!   unit-vector Gaussian densities on spheres.
//! - [`gp`]: exponential-kernel Gram matrices and (unit-vector) GP densities.
//! - [`samplers`]: spherical HMC with adaptive stopping and dual averaging,
//!   elliptical slice, univariate slice, Euclidean HMC, conjugate draws.
//! - [`models`]: the static normal-inverse-Wishart target and the dynamic
//!   correlation model with its Metropolis-within-Gibbs sweep.
//! - [`diagnostics`]: KS statistics, quantiles and other summaries.

pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod models;
pub mod par;
pub mod priors;
pub mod samplers;
pub mod sphere;

pub use error::{Error, Result};
pub use par::Exec;

/// Chain RNG. One per chain, seeded from `seed + chain_id`.
pub type ChainRng = rand_chacha::ChaCha8Rng;

/// Builds the RNG for chain `chain` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChainRng {
    use rand::SeedableRng;
    ChainRng::seed_from_u64(seed.wrapping_add(chain))
}
