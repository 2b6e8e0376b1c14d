//! Elliptical slice sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Result};

/// One elliptical slice update of an N×D matrix `current` whose prior is
/// matrix normal with zero mean, row covariance `K = F Fᵀ` (`prior_factor`
/// is `F`, N×N) and column covariance `I`.
///
/// `current_ll` is `loglik(current)`. Returns the new state and its
/// log-likelihood. Errors from `loglik` at proposed points count as
/// `−∞`.
pub fn ess_step<F, R>(
    current: &DMatrix<f64>,
    current_ll: f64,
    prior_factor: &DMatrix<f64>,
    loglik: F,
    rng: &mut R,
) -> Result<(DMatrix<f64>, f64)>
where
    F: FnMut(&DMatrix<f64>) -> Result<f64>,
    R: Rng + ?Sized,
{
    let threshold = current_ll + (1.0 - rng.random::<f64>()).ln();
    ess_step_with_threshold(current, current_ll, threshold, prior_factor, loglik, rng)
}

/// [`ess_step`] with an explicit slice level `threshold ≤ current_ll`.
pub fn ess_step_with_threshold<F, R>(
    current: &DMatrix<f64>,
    current_ll: f64,
    threshold: f64,
    prior_factor: &DMatrix<f64>,
    mut loglik: F,
    rng: &mut R,
) -> Result<(DMatrix<f64>, f64)>
where
    F: FnMut(&DMatrix<f64>) -> Result<f64>,
    R: Rng + ?Sized,
{
    check_dim(prior_factor.ncols(), current.nrows())?;
    let z = DMatrix::from_fn(current.nrows(), current.ncols(), |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let nu = prior_factor * z;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut theta = rng.random::<f64>() * two_pi;
    let (mut lo, mut hi) = (theta - two_pi, theta);
    loop {
        let (s, c) = theta.sin_cos();
        let prop = current * c + &nu * s;
        let ll = loglik(&prop).unwrap_or(f64::NEG_INFINITY);
        if ll.is_finite() && ll >= threshold {
            return Ok((prop, ll));
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo < 1e-12 {
            return Ok((current.clone(), current_ll));
        }
        theta = lo + rng.random::<f64>() * (hi - lo);
    }
}
