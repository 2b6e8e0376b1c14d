//! Synthetic periodic processes with known mean and covariance functions.
//!
//! With `θ = tπ/D` and 1-based indices,
//! `μ_i(t) = sin(iθ)`, `L_ij(t) = (−1)^i sin(iθ) (−1)^j cos(jθ)` for `j ≤ i`,
//! `S_ij = 1/(|i − j| + 1)` and `Σ(t) = L(t) L(t)ᵀ ∘ S`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::dynamic::TrialTensor;
use crate::error::{Error, Result};
use crate::linalg;

/// Ridge added to `Σ(t)` before factorizing; `Σ(0) = 0` otherwise.
pub const PERIODIC_RIDGE: f64 = 1e-8;

/// True mean and covariance on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicTruth {
    pub times: Vec<f64>,
    /// N×D.
    pub mean: DMatrix<f64>,
    pub cov: Vec<DMatrix<f64>>,
    pub corr: Vec<DMatrix<f64>>,
    /// N×D.
    pub sd: DMatrix<f64>,
}

impl PeriodicTruth {
    /// Derives correlations and standard deviations from `cov`.
    pub fn new(times: Vec<f64>, mean: DMatrix<f64>, cov: Vec<DMatrix<f64>>) -> Result<Self> {
        let (n, d) = mean.shape();
        crate::error::check_dim(n, times.len())?;
        crate::error::check_dim(n, cov.len())?;
        let sd = DMatrix::from_fn(n, d, |t, i| cov[t][(i, i)].sqrt());
        if sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::pd("truth covariance has a zero variance"));
        }
        let corr = cov
            .iter()
            .enumerate()
            .map(|(t, c)| {
                DMatrix::from_fn(d, d, |i, j| {
                    if i == j {
                        1.0
                    } else {
                        c[(i, j)] / (sd[(t, i)] * sd[(t, j)])
                    }
                })
            })
            .collect();
        Ok(Self {
            times,
            mean,
            cov,
            corr,
            sd,
        })
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }
}

/// `N` evenly spaced points from `t0` to `t1`, both included.
pub fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t0],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    t1
                } else {
                    t0 + (t1 - t0) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

pub fn periodic_mean(d: usize, t: f64) -> DVector<f64> {
    let theta = t * std::f64::consts::PI / d as f64;
    DVector::from_fn(d, |i, _| ((i + 1) as f64 * theta).sin())
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `L(t)` (lower triangular, not a correlation factor).
pub fn periodic_factor(d: usize, t: f64) -> DMatrix<f64> {
    let theta = t * std::f64::consts::PI / d as f64;
    DMatrix::from_fn(d, d, |i, j| {
        if j > i {
            return 0.0;
        }
        let (a, b) = (i + 1, j + 1);
        sign(a) * (a as f64 * theta).sin() * sign(b) * (b as f64 * theta).cos()
    })
}

/// `S_ij = 1/(|i − j| + 1)`.
pub fn periodic_weights(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| 1.0 / (i.abs_diff(j) + 1) as f64)
}

/// `Σ(t) = L Lᵀ ∘ S` without the ridge.
pub fn periodic_cov(d: usize, t: f64) -> DMatrix<f64> {
    let l = periodic_factor(d, t);
    (&l * l.transpose()).component_mul(&periodic_weights(d))
}

fn draw_trials<R: Rng + ?Sized>(
    mean: &DMatrix<f64>,
    factors: &[DMatrix<f64>],
    m: usize,
    times: Vec<f64>,
    rng: &mut R,
) -> Result<TrialTensor> {
    let (n, d) = mean.shape();
    let mut values = Vec::with_capacity(m * n * d);
    for _ in 0..m {
        for (t, c) in factors.iter().enumerate() {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = c * z;
            values.extend((0..d).map(|i| mean[(t, i)] + y[i]));
        }
    }
    TrialTensor::new(m, n, d, values, times)
}

fn check_sizes(d: usize, m: usize, n: usize) -> Result<()> {
    if d == 0 || m == 0 || n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need D >= 1, M >= 1 and N >= 2; got D = {d}, M = {m}, N = {n}"
        )));
    }
    Ok(())
}

/// `M` trials of the periodic process at `N` evenly spaced points of
/// `t_range`. The truth covariance includes [`PERIODIC_RIDGE`].
pub fn generate_periodic<R: Rng + ?Sized>(
    d: usize,
    m: usize,
    n: usize,
    t_range: (f64, f64),
    rng: &mut R,
) -> Result<(TrialTensor, PeriodicTruth)> {
    check_sizes(d, m, n)?;
    let times = linspace(t_range.0, t_range.1, n);
    let mean = DMatrix::from_fn(n, d, |t, i| periodic_mean(d, times[t])[i]);
    let cov: Vec<DMatrix<f64>> = times
        .iter()
        .map(|&t| periodic_cov(d, t) + DMatrix::identity(d, d) * PERIODIC_RIDGE)
        .collect();
    let factors = cov
        .iter()
        .map(|c| linalg::cholesky(c).map(|ch| ch.l()))
        .collect::<Result<Vec<_>>>()?;
    let data = draw_trials(&mean, &factors, m, times.clone(), rng)?;
    Ok((data, PeriodicTruth::new(times, mean, cov)?))
}

/// Correlation matrix of the sparse variant: identity except
/// `ρ_12(t) = −½ cos θ / √(cos²θ + cos²2θ)` and
/// `ρ_{D−1,D}(t) = −½ cos((D−1)θ) / √(cos²((D−1)θ) + cos²(tπ))`,
/// `θ = tπ/D`. For `D = 2` only the first applies.
pub fn sparse_periodic_corr(d: usize, t: f64) -> DMatrix<f64> {
    let theta = t * std::f64::consts::PI / d as f64;
    let mut p = DMatrix::identity(d, d);
    if d < 2 {
        return p;
    }
    let r12 = -0.5 * theta.cos() / (theta.cos().powi(2) + (2.0 * theta).cos().powi(2)).sqrt();
    p[(0, 1)] = r12;
    p[(1, 0)] = r12;
    if d >= 4 {
        let a = ((d - 1) as f64 * theta).cos();
        let b = (t * std::f64::consts::PI).cos();
        let r = -0.5 * a / (a * a + b * b).sqrt();
        p[(d - 2, d - 1)] = r;
        p[(d - 1, d - 2)] = r;
    }
    p
}

/// Zero-mean, unit-variance trials whose only correlations are those of
/// [`sparse_periodic_corr`], at `N` evenly spaced points of `[0, 1]`.
pub fn generate_sparse_periodic<R: Rng + ?Sized>(
    d: usize,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<(TrialTensor, PeriodicTruth)> {
    check_sizes(d, m, n)?;
    let times = linspace(0.0, 1.0, n);
    let mean = DMatrix::zeros(n, d);
    let cov: Vec<DMatrix<f64>> = times.iter().map(|&t| sparse_periodic_corr(d, t)).collect();
    let factors = cov
        .iter()
        .map(|c| linalg::cholesky(c).map(|ch| ch.l()))
        .collect::<Result<Vec<_>>>()?;
    let data = draw_trials(&mean, &factors, m, times.clone(), rng)?;
    Ok((data, PeriodicTruth::new(times, mean, cov)?))
}
