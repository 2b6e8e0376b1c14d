//! Static normal model `y_n ~ N(μ₀, Σ)` with `Σ = diag(e^τ) P diag(e^τ)`.
//!
//! The correlation factor is sampled with Δ-spherical HMC and `τ` with
//! Euclidean HMC, alternating in a two-block Gibbs scheme. With the
//! inverse-Wishart prior the factor is the reversed (upper) Cholesky factor
//! `U*` of `P`; otherwise it is the usual lower factor `L`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::priors::{sqdir_grad_add, sqdir_logpdf_slice, sqdir_sample, SqDirichletParams};
use crate::samplers::{hmc_step_euclidean, AdaptiveSphHmc, SphHmcConfig, DEFAULT_TARGET_ACCEPT};
use crate::sphere::{SpherePoint, SphereProduct};

/// `τ_i ~ N(mean, sd²)` independently.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogNormalSd {
    pub mean: f64,
    pub sd: f64,
}

impl Default for LogNormalSd {
    fn default() -> Self {
        Self { mean: 0.0, sd: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StaticPrior {
    /// The conditionals of `W⁻¹(Ψ, ν)` in `(τ, U*)`.
    IwConditional,
    /// Squared-Dirichlet rows `i = 2..D` (one parameter set per row).
    SqDirichlet {
        alpha: Vec<SqDirichletParams>,
        tau: LogNormalSd,
    },
    /// `p(l_i) ∝ exp(κ l_ii)`.
    Vmf { kappa: f64, tau: LogNormalSd },
    /// `p(l_i) ∝ exp(ζ l_ii²)`.
    Bingham { zeta: f64, tau: LogNormalSd },
}

#[derive(Clone, Debug)]
pub struct StaticNiwModel {
    psi: DMatrix<f64>,
    nu: f64,
    mu0: Vec<f64>,
    data: DMatrix<f64>,
    prior: StaticPrior,
}

impl StaticNiwModel {
    /// `data` is N×D (one observation per row).
    pub fn new(
        psi: DMatrix<f64>,
        nu: f64,
        mu0: Vec<f64>,
        data: DMatrix<f64>,
        prior: StaticPrior,
    ) -> Result<Self> {
        let d = psi.nrows();
        check_dim(d, psi.ncols())?;
        check_dim(d, mu0.len())?;
        check_dim(d, data.ncols())?;
        linalg::cholesky(&psi).map_err(|_| Error::pd("scale matrix"))?;
        if !(nu >= d as f64) {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom {nu} below dimension {d}"
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "data contain non-finite values".into(),
            ));
        }
        if let StaticPrior::SqDirichlet { alpha, .. } = &prior {
            check_dim(d.saturating_sub(1), alpha.len())?;
            for (k, a) in alpha.iter().enumerate() {
                check_dim(k + 2, a.dim())?;
            }
        }
        Ok(Self {
            psi,
            nu,
            mu0,
            data,
            prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.data.nrows()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn prior(&self) -> &StaticPrior {
        &self.prior
    }

    /// Whether the correlation factor is the reversed (upper) one.
    pub fn uses_reversed_factor(&self) -> bool {
        matches!(self.prior, StaticPrior::IwConditional)
    }
}

fn centered(data: &DMatrix<f64>, mu0: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(data.ncols(), mu0.len())?;
    Ok(DMatrix::from_fn(data.nrows(), data.ncols(), |n, d| {
        data[(n, d)] - mu0[d]
    }))
}

fn is_lower(f: &DMatrix<f64>) -> bool {
    (0..f.nrows()).all(|i| (i + 1..f.ncols()).all(|j| f[(i, j)] == 0.0))
}

fn tri_solve(f: &DMatrix<f64>, lower: bool, b: &DMatrix<f64>) -> DMatrix<f64> {
    if lower {
        f.solve_lower_triangular(b).expect("non-zero diagonal")
    } else {
        f.solve_upper_triangular(b).expect("non-zero diagonal")
    }
}

pub(crate) struct FactorTerms {
    pub ll: f64,
    pub grad_tau: Vec<f64>,
    pub grad_f: DMatrix<f64>,
}

/// Log-likelihood `−N Σ τ − N Σ log|f_ii| − ½ Σ_n y*ᵀ P⁻¹ y*` for
/// `P = F Fᵀ` with a lower or upper triangular `F`, and its gradients in
/// `τ` and in the structural entries of `F`.
pub(crate) fn factor_terms(
    tau: &[f64],
    f: &DMatrix<f64>,
    centered: &DMatrix<f64>,
) -> Result<FactorTerms> {
    let d = f.nrows();
    check_dim(d, f.ncols())?;
    check_dim(d, tau.len())?;
    check_dim(d, centered.ncols())?;
    if let Some(i) = (0..d).find(|&i| f[(i, i)] == 0.0) {
        return Err(Error::ZeroDiagonal(i));
    }
    let lower = is_lower(f);
    let n = centered.nrows() as f64;
    // Columns are the standardized observations y*_n.
    let ys = DMatrix::from_fn(d, centered.nrows(), |i, k| {
        centered[(k, i)] * (-tau[i]).exp()
    });
    let w = tri_solve(f, lower, &ys);
    let z = tri_solve(&f.transpose(), !lower, &w);
    let logdet: f64 = (0..d).map(|i| f[(i, i)].abs().ln()).sum();
    let ll = -n * tau.iter().sum::<f64>() - n * logdet - 0.5 * w.norm_squared();
    let grad_tau = (0..d).map(|i| -n + ys.row(i).dot(&z.row(i))).collect();
    let zw = &z * w.transpose();
    let grad_f = DMatrix::from_fn(d, d, |i, j| {
        let inside = if lower { j <= i } else { j >= i };
        if !inside {
            0.0
        } else if i == j {
            zw[(i, i)] - n / f[(i, i)]
        } else {
            zw[(i, j)]
        }
    });
    Ok(FactorTerms {
        ll,
        grad_tau,
        grad_f,
    })
}

/// Log-likelihood and its gradient in `τ = log σ`, for a triangular
/// correlation factor `factor` (lower `L` or upper `U*`).
pub fn static_loglik_grad_tau(
    tau: &[f64],
    factor: &DMatrix<f64>,
    data: &DMatrix<f64>,
    mu0: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let t = factor_terms(tau, factor, &centered(data, mu0)?).map_err(|e| match e {
        Error::ZeroDiagonal(i) => {
            Error::pd(format!("correlation factor has a zero diagonal at {i}"))
        }
        e => e,
    })?;
    Ok((t.ll, t.grad_tau))
}

/// Log-likelihood and its ambient gradient in the lower-triangular entries
/// of `L`: `−N I/L + tril(P⁻¹ Σ_n y*_n y*_nᵀ L⁻ᵀ)`.
pub fn static_loglik_grad_l(
    l: &DMatrix<f64>,
    tau: &[f64],
    data: &DMatrix<f64>,
    mu0: &[f64],
) -> Result<(f64, DMatrix<f64>)> {
    if !is_lower(l) {
        return Err(Error::InvalidParameter(
            "expected a lower-triangular factor".into(),
        ));
    }
    let t = factor_terms(tau, l, &centered(data, mu0)?)?;
    Ok((t.ll, t.grad_f))
}

/// Same as [`static_loglik_grad_l`] for an upper-triangular factor `U*`:
/// the gradient is `−N I/U* + triu(P⁻¹ Σ_n y*_n y*_nᵀ U*⁻ᵀ)`.
pub fn static_loglik_grad_u(
    u: &DMatrix<f64>,
    tau: &[f64],
    data: &DMatrix<f64>,
    mu0: &[f64],
) -> Result<(f64, DMatrix<f64>)> {
    if !is_lower(&u.transpose()) {
        return Err(Error::InvalidParameter(
            "expected an upper-triangular factor".into(),
        ));
    }
    let t = factor_terms(tau, u, &centered(data, mu0)?)?;
    Ok((t.ll, t.grad_f))
}

/// Conditional log-priors of the inverse-Wishart model in `(τ, U*)` and
/// their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct IwConditionalTerms {
    /// `log p(τ | U*)`.
    pub log_tau: f64,
    pub grad_tau: Vec<f64>,
    /// `log p(U* | τ)`.
    pub log_u: f64,
    /// Gradient in the upper-triangular entries of `U*`.
    pub grad_u: DMatrix<f64>,
}

/// Exponent multiplying `τ_i` in `log p(τ | U*)` (0-based `i`).
fn iw_tau_coefficient(nu: f64, _d: usize, _i: usize) -> f64 {
    -nu
}

pub(crate) fn iw_terms_with(
    tau: &[f64],
    u: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    nu: f64,
    coef: impl Fn(f64, usize, usize) -> f64,
) -> Result<IwConditionalTerms> {
    let d = u.nrows();
    check_dim(d, tau.len())?;
    check_dim(d, psi.nrows())?;
    let v = linalg::upper_inverse(u)?;
    let e: Vec<f64> = tau.iter().map(|t| (-t).exp()).collect();
    let b = DMatrix::from_fn(d, d, |i, j| e[i] * psi[(i, j)] * e[j]);
    // tr(Ψ D P⁻¹ D) = tr(U*⁻¹ B U*⁻ᵀ) with B = D Ψ D.
    let c = &v * &b * v.transpose();
    let quad = c.trace();
    let p_inv = v.transpose() * &v;
    let psi_d_pinv = psi * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e.clone())) * &p_inv;
    let log_tau = (0..d).map(|i| coef(nu, d, i) * tau[i]).sum::<f64>() - 0.5 * quad;
    let grad_tau = (0..d)
        .map(|i| coef(nu, d, i) + psi_d_pinv[(i, i)] * e[i])
        .collect();
    let exps: Vec<f64> = (0..d)
        .map(|i| (i + 1) as f64 - (nu + d as f64 + 1.0))
        .collect();
    let log_u = (0..d).map(|i| exps[i] * u[(i, i)].abs().ln()).sum::<f64>() - 0.5 * quad;
    let vc = v.transpose() * &c;
    let grad_u = DMatrix::from_fn(d, d, |i, j| {
        if j < i {
            0.0
        } else if i == j {
            exps[i] / u[(i, i)] + vc[(i, i)]
        } else {
            vc[(i, j)]
        }
    });
    Ok(IwConditionalTerms {
        log_tau,
        grad_tau,
        log_u,
        grad_u,
    })
}

/// Conditionals of `Σ ~ W⁻¹(Ψ, ν)` written as `Σ = diag(e^τ) U* U*ᵀ diag(e^τ)`:
///
/// - `log p(τ | U*) = −ν Σ τ_i − ½ tr(Ψ diag(e^{−τ}) P⁻¹ diag(e^{−τ}))`
/// - `log p(U* | τ) = Σ (i − (ν + D + 1)) log|u*_ii| − ½ tr(…)` (same trace)
///
/// with `P = U* U*ᵀ` and `U*` upper triangular with unit-norm rows. The
/// `τ` exponent includes both the `σ ↦ τ` Jacobian and the Jacobian
/// `σ_i^{D−i}` of splitting row `u_i` into length and direction.
pub fn iw_conditional_logpriors(
    tau: &[f64],
    u_star: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    nu: f64,
) -> Result<IwConditionalTerms> {
    if !is_lower(&u_star.transpose()) {
        return Err(Error::InvalidParameter(
            "expected an upper-triangular factor".into(),
        ));
    }
    iw_terms_with(tau, u_star, psi, nu, iw_tau_coefficient)
}

/// Bartlett sampler for `W⁻¹(Ψ, ν)`.
#[derive(Clone, Debug)]
pub struct InverseWishart {
    /// Lower Cholesky factor of `Ψ⁻¹`.
    c: DMatrix<f64>,
    nu: f64,
}

impl InverseWishart {
    pub fn new(psi: &DMatrix<f64>, nu: f64) -> Result<Self> {
        let d = psi.nrows();
        let inv = linalg::cholesky(psi)
            .map_err(|_| Error::pd("scale matrix"))?
            .inverse();
        if !(nu > d as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom {nu} too small for D = {d}"
            )));
        }
        let c = linalg::cholesky(&inv)?.unpack();
        Ok(Self { c, nu })
    }

    /// `Σ⁻¹ = T Tᵀ` with `T = C T*`, `t*_ii ~ χ_{ν−i+1}`, `t*_ij ~ N(0, 1)`
    /// below the diagonal; returns `Σ = T⁻ᵀ T⁻¹`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let d = self.c.nrows();
        let mut t = DMatrix::zeros(d, d);
        for i in 0..d {
            let k = self.nu - i as f64;
            let g: f64 = Gamma::new(k / 2.0, 2.0)
                .expect("positive shape")
                .sample(rng);
            t[(i, i)] = g.sqrt();
            for j in 0..i {
                t[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let tt = &self.c * t;
        let ti = linalg::lower_inverse(&tt).expect("positive diagonal");
        ti.transpose() * ti
    }
}

/// Parameters `(Ψ + Σ_n (y_n − μ₀)(y_n − μ₀)ᵀ, ν + N)` of the conjugate
/// posterior.
pub fn iw_posterior_params(
    data: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    nu: f64,
    mu0: &[f64],
) -> Result<(DMatrix<f64>, f64)> {
    let c = centered(data, mu0)?;
    Ok((psi + c.transpose() * &c, nu + data.nrows() as f64))
}

/// One direct draw from the conjugate inverse-Wishart posterior.
pub fn iw_direct_posterior<R: Rng + ?Sized>(
    data: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    nu: f64,
    mu0: &[f64],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (p, n) = iw_posterior_params(data, psi, nu, mu0)?;
    Ok(InverseWishart::new(&p, n)?.sample(rng))
}

/// Run-length and tuning settings for [`StaticGibbs`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticChainConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub sph: SphHmcConfig,
    /// Acceptance target for step-size adaptation during burn-in.
    pub target_accept: f64,
    pub tau_step: f64,
    pub tau_leapfrog: usize,
    /// Independence Metropolis moves per row and sweep that propose from
    /// the squared-Dirichlet prior. HMC cannot cross the density spikes at
    /// `l_k = 0` when `α_k < ½`; these moves can. Ignored for other priors.
    pub prior_proposals: usize,
}

impl Default for StaticChainConfig {
    fn default() -> Self {
        Self {
            iters: 30_000,
            burnin: 10_000,
            thin: 10,
            sph: SphHmcConfig::default(),
            target_accept: DEFAULT_TARGET_ACCEPT,
            tau_step: 0.05,
            tau_leapfrog: 20,
            prior_proposals: 1,
        }
    }
}

impl StaticChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burnin || self.thin == 0 {
            return Err(Error::InvalidParameter(format!(
                "need iters > burnin and thin ≥ 1; got {}, {}, {}",
                self.iters, self.burnin, self.thin
            )));
        }
        if !(self.tau_step > 0.0) || self.tau_leapfrog == 0 {
            return Err(Error::InvalidParameter(
                "τ step size and leapfrog count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }
}

/// Retained draws of a static chain.
#[derive(Clone, Debug, Default)]
pub struct StaticSamples {
    pub tau: Vec<Vec<f64>>,
    /// Correlation factor (`L` lower, or `U*` upper for the inverse-Wishart
    /// prior).
    pub factor: Vec<DMatrix<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub tau_accept_rate: f64,
    pub factor_accept_rate: f64,
    pub step_size: f64,
    pub invalid_trajectories: u64,
    /// Acceptance rate of the prior-proposal moves (0 when none ran).
    pub prior_proposal_accept_rate: f64,
}

impl StaticSamples {
    /// Draws of `Σ_ij` across retained samples.
    pub fn sigma_entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.sigma.iter().map(|s| s[(i, j)]).collect()
    }

    /// Draws of `ρ_ij`.
    pub fn corr_entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.sigma
            .iter()
            .map(|s| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt())
            .collect()
    }
}

/// Dense lower factor `L'` with `L'_00 = 1` and rows `1..D` taken from `q`.
fn lower_from_rows(q: &SphereProduct, d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    l[(0, 0)] = 1.0;
    for k in 1..d {
        for (c, x) in q.row(k - 1).iter().enumerate() {
            l[(k, c)] = *x;
        }
    }
    l
}

/// `E M E` with `E` the exchange matrix.
fn reversed(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(r, c, |i, j| m[(r - 1 - i, c - 1 - j)])
}

fn scatter_lower(g: &DMatrix<f64>, q: &SphereProduct, out: &mut [f64]) {
    for k in 1..g.nrows() {
        let range = q.row_range(k - 1);
        for (c, o) in out[range].iter_mut().enumerate() {
            *o = g[(k, c)];
        }
    }
}

/// Two-block Gibbs sampler for [`StaticNiwModel`]: Euclidean HMC on `τ`,
/// Δ-spherical HMC on the factor rows `2..D` (row 1 is the scalar `+1`).
///
/// For the inverse-Wishart prior the rows hold `U*` reversed, i.e.
/// `L' = E U* E`, so every row keeps its diagonal entry last.
pub struct StaticGibbs {
    model: StaticNiwModel,
    centered: DMatrix<f64>,
    cfg: StaticChainConfig,
    tau: Vec<f64>,
    rows: SphereProduct,
    sph: AdaptiveSphHmc,
    iter: usize,
    tau_accepted: u64,
    prior_moves: u64,
    prior_accepted: u64,
}

impl StaticGibbs {
    /// Starts from `τ` at the log sample standard deviation (0 with fewer
    /// than two observations) and a factor close to the identity.
    pub fn new(model: StaticNiwModel, cfg: StaticChainConfig) -> Result<Self> {
        cfg.validate()?;
        let d = model.dim();
        let centered = centered(&model.data, &model.mu0)?;
        let n = centered.nrows();
        let tau = (0..d)
            .map(|j| {
                if n < 2 {
                    0.0
                } else {
                    let ss: f64 = centered.column(j).iter().map(|x| x * x).sum();
                    let v = ss / n as f64;
                    if v > 0.0 {
                        0.5 * v.ln()
                    } else {
                        0.0
                    }
                }
            })
            .collect();
        // Off the exact pole: squared-Dirichlet densities with α_k ≠ ½ are
        // zero or infinite where a coordinate vanishes.
        let mut rows = SphereProduct::new();
        for k in 1..d {
            let mut row = vec![0.1; k + 1];
            row[k] = 1.0;
            rows.push(SpherePoint::from_direction(row, 1.0)?, Some(k))?;
        }
        let sph = AdaptiveSphHmc::new(cfg.sph, cfg.target_accept, cfg.burnin as u64);
        Ok(Self {
            model,
            centered,
            cfg,
            tau,
            rows,
            sph,
            iter: 0,
            tau_accepted: 0,
            prior_moves: 0,
            prior_accepted: 0,
        })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Current correlation factor (`U*` for the inverse-Wishart prior).
    pub fn factor(&self) -> DMatrix<f64> {
        let l = lower_from_rows(&self.rows, self.model.dim());
        if self.model.uses_reversed_factor() {
            reversed(&l)
        } else {
            l
        }
    }

    /// Current `Σ = diag(e^τ) F Fᵀ diag(e^τ)`.
    pub fn sigma(&self) -> DMatrix<f64> {
        let f = self.factor();
        let p = &f * f.transpose();
        let d = p.nrows();
        DMatrix::from_fn(d, d, |i, j| (self.tau[i] + self.tau[j]).exp() * p[(i, j)])
    }

    pub fn step_size(&self) -> f64 {
        self.sph.step_size()
    }

    fn tau_log_density(&self, tau: &[f64], f: &DMatrix<f64>, grad: &mut [f64]) -> Result<f64> {
        let t = factor_terms(tau, f, &self.centered)?;
        grad.copy_from_slice(&t.grad_tau);
        let prior = match &self.model.prior {
            StaticPrior::IwConditional => {
                let iw = iw_conditional_logpriors(tau, f, &self.model.psi, self.model.nu)?;
                grad.iter_mut().zip(&iw.grad_tau).for_each(|(g, x)| *g += x);
                iw.log_tau
            }
            StaticPrior::SqDirichlet { tau: p, .. }
            | StaticPrior::Vmf { tau: p, .. }
            | StaticPrior::Bingham { tau: p, .. } => {
                let v = p.sd * p.sd;
                let mut s = 0.0;
                for (g, t) in grad.iter_mut().zip(tau) {
                    *g -= (t - p.mean) / v;
                    s -= (t - p.mean).powi(2) / (2.0 * v);
                }
                s
            }
        };
        Ok(t.ll + prior)
    }

    /// Log-density of the factor rows given `τ`, with the ambient gradient
    /// written in the flat layout of `q`.
    pub fn rows_log_density(&self, q: &SphereProduct, grad: &mut [f64]) -> Result<f64> {
        let d = self.model.dim();
        let lp = lower_from_rows(q, d);
        if self.model.uses_reversed_factor() {
            let u = reversed(&lp);
            let t = factor_terms(&self.tau, &u, &self.centered)?;
            let iw = iw_conditional_logpriors(&self.tau, &u, &self.model.psi, self.model.nu)?;
            let g = reversed(&(t.grad_f + iw.grad_u));
            scatter_lower(&g, q, grad);
            return Ok(t.ll + iw.log_u);
        }
        let t = factor_terms(&self.tau, &lp, &self.centered)?;
        scatter_lower(&t.grad_f, q, grad);
        let mut prior = 0.0;
        for k in 0..q.n_rows() {
            let row = q.row(k);
            let range = q.row_range(k);
            let last = row.len() - 1;
            match &self.model.prior {
                StaticPrior::SqDirichlet { alpha, .. } => {
                    prior += sqdir_logpdf_slice(row, &alpha[k])?;
                    sqdir_grad_add(row, &alpha[k], 1.0, &mut grad[range])?;
                }
                StaticPrior::Vmf { kappa, .. } => {
                    prior += kappa * row[last];
                    grad[range.start + last] += kappa;
                }
                StaticPrior::Bingham { zeta, .. } => {
                    prior += zeta * row[last] * row[last];
                    grad[range.start + last] += 2.0 * zeta * row[last];
                }
                StaticPrior::IwConditional => unreachable!(),
            }
        }
        Ok(t.ll + prior)
    }

    /// One Gibbs sweep: `τ` then the factor rows.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let f = self.factor();
        let mut tau = self.tau.clone();
        let target = |t: &[f64], g: &mut [f64]| self.tau_log_density(t, &f, g);
        if hmc_step_euclidean(
            &mut tau,
            &target,
            self.cfg.tau_step,
            self.cfg.tau_leapfrog,
            rng,
        )? {
            self.tau_accepted += 1;
        }
        self.tau = tau;
        if self.rows.n_rows() > 0 {
            let mut rows = self.rows.clone();
            let mut sph = self.sph.clone();
            let this = &*self;
            let target = |q: &SphereProduct, g: &mut [f64]| this.rows_log_density(q, g);
            if self.iter == 0 {
                sph.initialize(&rows, &target, rng)?;
            }
            sph.step(&mut rows, &target, rng)?;
            self.rows = rows;
            self.sph = sph;
            self.prior_proposal_moves(rng)?;
        }
        self.iter += 1;
        Ok(())
    }

    /// Replaces each row by a prior draw with probability
    /// `min(1, likelihood ratio)`, which leaves the row posterior invariant.
    fn prior_proposal_moves<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let alpha = match &self.model.prior {
            StaticPrior::SqDirichlet { alpha, .. } => alpha.clone(),
            _ => return Ok(()),
        };
        let d = self.model.dim();
        let loglik = |rows: &SphereProduct| -> Result<f64> {
            factor_terms(&self.tau, &lower_from_rows(rows, d), &self.centered).map(|t| t.ll)
        };
        let mut current = loglik(&self.rows)?;
        for k in 0..self.rows.n_rows() {
            for _ in 0..self.cfg.prior_proposals {
                let draw = sqdir_sample(&alpha[k], rng);
                let mut cand = self.rows.clone();
                cand.row_mut(k).copy_from_slice(draw.coords());
                self.prior_moves += 1;
                let ll = match loglik(&cand) {
                    Ok(v) => v,
                    Err(Error::ZeroDiagonal(_)) => continue,
                    Err(e) => return Err(e),
                };
                if rng.random::<f64>().ln() < ll - current {
                    self.rows = cand;
                    current = ll;
                    self.prior_accepted += 1;
                }
            }
        }
        Ok(())
    }

    /// Runs the configured schedule and returns the retained draws.
    pub fn run<R: Rng + ?Sized>(mut self, rng: &mut R) -> Result<StaticSamples> {
        let mut out = StaticSamples::default();
        for it in 0..self.cfg.iters {
            self.sweep(rng)?;
            if it >= self.cfg.burnin && (it - self.cfg.burnin + 1) % self.cfg.thin == 0 {
                out.tau.push(self.tau.clone());
                out.factor.push(self.factor());
                out.sigma.push(self.sigma());
            }
        }
        out.tau_accept_rate = self.tau_accepted as f64 / self.cfg.iters as f64;
        out.factor_accept_rate = self.sph.acceptance_rate();
        out.step_size = self.sph.step_size();
        out.invalid_trajectories = self.sph.invalid_count();
        out.prior_proposal_accept_rate = if self.prior_moves > 0 {
            self.prior_accepted as f64 / self.prior_moves as f64
        } else {
            0.0
        };
        Ok(out)
    }
}

/// Builds a [`StaticGibbs`] chain and runs it.
pub fn run_static<R: Rng + ?Sized>(
    model: StaticNiwModel,
    cfg: StaticChainConfig,
    rng: &mut R,
) -> Result<StaticSamples> {
    StaticGibbs::new(model, cfg)?.run(rng)
}

/// Maximum-likelihood correlations with known mean `μ₀`.
pub fn mle_correlation(data: &DMatrix<f64>, mu0: &[f64]) -> Result<DMatrix<f64>> {
    let c = centered(data, mu0)?;
    let s = c.transpose() * &c;
    let d = s.nrows();
    Ok(DMatrix::from_fn(d, d, |i, j| {
        s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt()
    }))
}
