//! Exponential-kernel Gaussian processes on one-dimensional time grids.
//!
//! The kernel is `γ exp(−½ |t − t'|^s / ρ^s)`. Gram matrices are factored as
//! `K = γ K₀(η)` with `η = log ρ`, so changing `γ` only rescales a cached
//! factorization of `K₀`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Chol};

/// Largest nugget tried before giving up on a Cholesky factorization.
pub const MAX_NUGGET: f64 = 1e-1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub gamma: f64,
    pub rho: f64,
    pub s: f64,
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(gamma: f64, rho: f64, s: f64, nugget: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::NonPositiveGamma(gamma));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "length-scale {rho} is not positive"
            )));
        }
        if !(s > 0.0 && s <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "smoothness {s} is outside (0, 2]"
            )));
        }
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "nugget {nugget} is negative"
            )));
        }
        Ok(Self {
            gamma,
            rho,
            s,
            nugget,
        })
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            rho: 1.0,
            s: 2.0,
            nugget: 1e-5,
        }
    }
}

/// Strictly increasing time points.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter(
                "a time grid needs at least 2 points".into(),
            ));
        }
        if points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "time points must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Maps raw times affinely into `(0, 1]`: the first point lands one
    /// spacing above 0 and the last on 1.
    pub fn rescaled(raw: &[f64]) -> Result<Self> {
        Self::new(raw.to_vec())?;
        let n = raw.len();
        let delta = raw[1] - raw[0];
        let span = raw[n - 1] - raw[0] + delta;
        Self::new(raw.iter().map(|t| (t - raw[0] + delta) / span).collect())
    }

    /// `t_n = n / N` for `n = 1..N`.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|k| k as f64 / n as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Inverse-Gamma prior `(a, b)` on `γ` and normal prior `(m, V)` on `log ρ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperPrior {
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub v: f64,
}

impl HyperPrior {
    pub fn new(a: f64, b: f64, m: f64, v: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && v > 0.0) || !m.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "hyperprior needs a, b, V > 0; got a = {a}, b = {b}, V = {v}"
            )));
        }
        Ok(Self { a, b, m, v })
    }

    /// Mode of the inverse-Gamma prior on `γ`.
    pub fn gamma_mode(&self) -> f64 {
        self.b / (self.a + 1.0)
    }
}

/// `exp(−½ |Δt|^s / ρ^s)` without nugget or scale.
pub fn correlation_kernel(grid: &TimeGrid, rho: f64, s: f64) -> DMatrix<f64> {
    let t = grid.points();
    let n = t.len();
    DMatrix::from_fn(n, n, |i, j| {
        (-0.5 * ((t[i] - t[j]).abs() / rho).powf(s)).exp()
    })
}

/// Cholesky of `a + nugget·I`, multiplying the nugget by 10 until it succeeds
/// or exceeds [`MAX_NUGGET`]. Returns the factor and the nugget used.
fn factor_with_jitter(a: &DMatrix<f64>, nugget: f64) -> Result<(Chol, f64)> {
    let n = a.nrows();
    let mut jitter = nugget;
    loop {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Ok(ch) = linalg::cholesky(&m) {
            return Ok((ch, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_NUGGET * (1.0 + 1e-12) {
            return Err(Error::pd(format!(
                "Gram matrix with nugget up to {MAX_NUGGET}"
            )));
        }
    }
}

/// `K_ij = γ exp(−½|t_i − t_j|^s/ρ^s) + nugget·[i = j]`, with the nugget
/// escalated if needed to make `K` positive definite.
pub fn build_gram(grid: &TimeGrid, kp: &KernelParams) -> Result<DMatrix<f64>> {
    let k = correlation_kernel(grid, kp.rho, kp.s) * kp.gamma;
    let (_, nugget) = factor_with_jitter(&k, kp.nugget)?;
    let mut out = k;
    for i in 0..out.nrows() {
        out[(i, i)] += nugget;
    }
    Ok(out)
}

/// Factored unit-scale Gram matrix `K₀(η) = exp(−½|Δt|^s e^{−sη}) + nugget·I`;
/// the full Gram matrix is `γ K₀`.
#[derive(Clone, Debug)]
pub struct UnitGram {
    chol: Chol,
    logdet: f64,
    nugget: f64,
    eta: f64,
}

impl UnitGram {
    pub fn new(grid: &TimeGrid, eta: f64, s: f64, nugget: f64) -> Result<Self> {
        let k0 = correlation_kernel(grid, eta.exp(), s);
        let (chol, nugget) = factor_with_jitter(&k0, nugget)?;
        let logdet = linalg::chol_logdet(&chol);
        Ok(Self {
            chol,
            logdet,
            nugget,
            eta,
        })
    }

    pub fn n(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Nugget actually used after escalation.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// `log |K₀|`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `tr(Zᵀ K₀⁻¹ Z)`.
    pub fn quad(&self, z: &DMatrix<f64>) -> f64 {
        linalg::chol_trace_quad(&self.chol, z)
    }

    /// `K₀⁻¹ Z`.
    pub fn solve(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(z)
    }

    /// `K₀⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Lower Cholesky factor of `K₀`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Dense `K₀`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}

/// Matrix-normal log-density (up to a constant) of `Z` (N×D) with row
/// covariance `K` and column covariance `I`:
/// `−(D/2) log|K| − ½ tr(Zᵀ K⁻¹ Z)`.
pub fn vgp_logpdf(z: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    check_dim(k.nrows(), z.nrows())?;
    let ch = linalg::cholesky(k)?;
    Ok(-0.5 * z.ncols() as f64 * linalg::chol_logdet(&ch) - 0.5 * linalg::chol_trace_quad(&ch, z))
}

fn check_unit_rows(l: &DMatrix<f64>) -> Result<()> {
    for n in 0..l.nrows() {
        let r = l.row(n).norm();
        if (r - 1.0).abs() > 1e-9 {
            return Err(Error::RowNotUnitNorm { row: n, norm: r });
        }
    }
    Ok(())
}

fn minus_pole(l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = l.clone();
    let last = c.ncols() - 1;
    for n in 0..c.nrows() {
        c[(n, last)] -= 1.0;
    }
    c
}

/// Unit-vector GP log-density (up to a constant) of an N×i realization
/// whose rows are unit vectors, with mean `n_i = (0, …, 0, 1)` in every row:
/// `−½ tr((L − M)ᵀ K⁻¹ (L − M))`.
pub fn uvgp_logpdf(l: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    check_dim(k.nrows(), l.nrows())?;
    check_unit_rows(l)?;
    let ch = linalg::cholesky(k)?;
    Ok(-0.5 * linalg::chol_trace_quad(&ch, &minus_pole(l)))
}

/// Ambient gradient of [`uvgp_logpdf`]: `−K⁻¹ (L − M)`.
pub fn uvgp_grad(l: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(k.nrows(), l.nrows())?;
    let ch = linalg::cholesky(k)?;
    Ok(-ch.solve(&minus_pole(l)))
}

/// Log-densities (up to constants) of `γ ~ InvGamma(a, b)` and
/// `η ~ N(m, V)`.
pub fn hyper_logpdfs(gamma: f64, eta: f64, hp: &HyperPrior) -> Result<(f64, f64)> {
    if !(gamma > 0.0) {
        return Err(Error::NonPositiveGamma(gamma));
    }
    let lg = -(hp.a + 1.0) * gamma.ln() - hp.b / gamma;
    let le = -(eta - hp.m).powi(2) / (2.0 * hp.v);
    Ok((lg, le))
}
