//! Dynamic covariance model.
//!
//! Trials `y_mn ~ N(μ_n, Σ_n)` at time points `t_1..t_N`, with
//! `Σ_n = diag(e^{τ_n}) L_n L_nᵀ diag(e^{τ_n})`. The mean `μ̃`, the log
//! standard deviations `τ̃` and every Cholesky row `L̃_i` get GP priors over
//! time; the rows get unit-vector GP priors and live on spheres.
//!
//! With a band width `w < D`, row `i` keeps only its last `min(i + 1, w)`
//! entries, so `P_n` has at most `w − 1` non-zero off-diagonals below the
//! diagonal in its factor and the likelihood costs `O(M N D w)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::static_niw::factor_terms;
use crate::error::{check_dim, Error, Result};
use crate::gp::{HyperPrior, TimeGrid, UnitGram};
use crate::linalg;
use crate::par::{self, Exec};
use crate::samplers::gibbs::MuConditional;
use crate::samplers::slice::{DEFAULT_MAX_STEPOUT, DEFAULT_WIDTH};
use crate::samplers::{
    ess_step, gibbs_gamma, slice_step_1d, AdaptiveSphHmc, GpBlock, SphHmcConfig, SphereTarget,
    StepInfo,
};
use crate::sphere::{CorrCholesky, SpherePoint, SphereProduct};

/// Index of the mean block in per-block arrays such as [`ChainState::gamma`].
pub const MEAN: usize = 0;
/// Index of the log-sd block.
pub const LOG_SD: usize = 1;
/// Index of the Cholesky block.
pub const CHOL: usize = 2;

/// `M` trials of `D` channels observed at `N` time points.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialTensor {
    m: usize,
    n: usize,
    d: usize,
    /// `values[(m·N + n)·D + d]`.
    values: Vec<f64>,
    times: Vec<f64>,
    trial_labels: Vec<String>,
    channel_labels: Vec<String>,
}

impl TrialTensor {
    /// `values` is trial-major, then time, then channel.
    pub fn new(m: usize, n: usize, d: usize, values: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        if m == 0 || n == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "empty data tensor ({m} x {n} x {d})"
            )));
        }
        check_dim(m * n * d, values.len())?;
        check_dim(n, times.len())?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value at trial {}, time {}, channel {}",
                k / (n * d),
                (k / d) % n,
                k % d
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "time points must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self {
            m,
            n,
            d,
            values,
            times,
            trial_labels: (0..m).map(|k| k.to_string()).collect(),
            channel_labels: (0..d).map(|k| k.to_string()).collect(),
        })
    }

    /// Builds the tensor from one N×D matrix per trial.
    pub fn from_trials(trials: &[DMatrix<f64>], times: Vec<f64>) -> Result<Self> {
        let first = trials
            .first()
            .ok_or_else(|| Error::InvalidParameter("no trials".into()))?;
        let (n, d) = first.shape();
        let mut values = Vec::with_capacity(trials.len() * n * d);
        for y in trials {
            check_dim(n, y.nrows())?;
            check_dim(d, y.ncols())?;
            for t in 0..n {
                values.extend(y.row(t).iter());
            }
        }
        Self::new(trials.len(), n, d, values, times)
    }

    pub fn with_labels(mut self, trials: Vec<String>, channels: Vec<String>) -> Result<Self> {
        check_dim(self.m, trials.len())?;
        check_dim(self.d, channels.len())?;
        self.trial_labels = trials;
        self.channel_labels = channels;
        Ok(self)
    }

    pub fn n_trials(&self) -> usize {
        self.m
    }

    pub fn n_times(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trial_labels(&self) -> &[String] {
        &self.trial_labels
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn get(&self, m: usize, n: usize, d: usize) -> f64 {
        self.values[(m * self.n + n) * self.d + d]
    }

    /// The D-vector `y_mn`.
    pub fn obs(&self, m: usize, n: usize) -> &[f64] {
        let k = (m * self.n + n) * self.d;
        &self.values[k..k + self.d]
    }

    /// Trial `m` as an N×D matrix.
    pub fn trial(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.d, |n, d| self.get(m, n, d))
    }

    /// Observations at time `n` as an M×D matrix.
    pub fn at_time(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.d, |m, d| self.get(m, n, d))
    }

    /// Per-time mean over trials (N×D).
    pub fn sample_mean(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.d);
        for m in 0..self.m {
            for n in 0..self.n {
                for d in 0..self.d {
                    out[(n, d)] += self.get(m, n, d);
                }
            }
        }
        out / self.m as f64
    }

    /// Per-time standard deviation over trials (N×D, divisor `M − 1`).
    pub fn sample_sd(&self) -> Result<DMatrix<f64>> {
        if self.m < 2 {
            return Err(Error::InvalidParameter(
                "a sample standard deviation needs at least 2 trials".into(),
            ));
        }
        let mean = self.sample_mean();
        let mut out = DMatrix::zeros(self.n, self.d);
        for m in 0..self.m {
            for n in 0..self.n {
                for d in 0..self.d {
                    out[(n, d)] += (self.get(m, n, d) - mean[(n, d)]).powi(2);
                }
            }
        }
        out.apply(|v: &mut f64| *v = (*v / (self.m - 1) as f64).sqrt());
        Ok(out)
    }

    /// `Σ_m y_mn` for every `n`.
    pub fn trial_sums(&self) -> Vec<DVector<f64>> {
        (0..self.n)
            .map(|n| {
                let mut s = DVector::zeros(self.d);
                for m in 0..self.m {
                    s += DVector::from_column_slice(self.obs(m, n));
                }
                s
            })
            .collect()
    }
}

/// Storage layout of banded Cholesky rows at one time point.
///
/// Row 0 is the constant `(1)` and is not stored. Row `i ≥ 1` stores the
/// entries `lo(i)..=i` with the diagonal last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandLayout {
    dim: usize,
    band: usize,
    offsets: Vec<usize>,
}

impl BandLayout {
    /// A `band` of `dim` or more keeps full rows.
    pub fn new(dim: usize, band: usize) -> Result<Self> {
        if dim == 0 || band == 0 {
            return Err(Error::InvalidParameter(format!(
                "dimension {dim} and band {band} must be positive"
            )));
        }
        let band = band.min(dim);
        let mut offsets = vec![0, 0];
        for i in 1..dim {
            offsets.push(offsets[i] + (i + 1).min(band));
        }
        Ok(Self { dim, band, offsets })
    }

    pub fn full(dim: usize) -> Result<Self> {
        Self::new(dim, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn is_full(&self) -> bool {
        self.band == self.dim
    }

    /// Stored coordinates per time point.
    pub fn per_time(&self) -> usize {
        self.offsets[self.dim]
    }

    /// First stored column of row `i`.
    pub fn lo(&self, i: usize) -> usize {
        (i + 1).saturating_sub(self.band)
    }

    pub fn row_len(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.offsets[i + 1] - self.offsets[i]
        }
    }

    /// Range of row `i ≥ 1` within one time point's coordinates.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Whether any row has a free coordinate to sample.
    pub fn has_free_rows(&self) -> bool {
        self.dim > 1 && self.band > 1
    }

    /// Off-diagonal pairs `(i, j)`, `j < i`, inside the band, row by row.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (1..self.dim)
            .flat_map(|i| (self.lo(i)..i).map(move |j| (i, j)))
            .collect()
    }

    /// Entry `L_ij` from one time point's coordinates.
    pub fn entry(&self, rows: &[f64], i: usize, j: usize) -> f64 {
        if i == 0 {
            return if j == 0 { 1.0 } else { 0.0 };
        }
        let lo = self.lo(i);
        if j < lo || j > i {
            0.0
        } else {
            rows[self.offsets[i] + j - lo]
        }
    }

    fn diag(&self, rows: &[f64], i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            rows[self.offsets[i + 1] - 1]
        }
    }

    /// `ρ_ij = ⟨l_i, l_j⟩`.
    pub fn correlation(&self, rows: &[f64], i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let (a, b) = if i > j { (i, j) } else { (j, i) };
        (self.lo(a).max(self.lo(b))..=b)
            .map(|k| self.entry(rows, a, k) * self.entry(rows, b, k))
            .sum()
    }

    pub fn to_lower(&self, rows: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(rows, i, j))
    }

    pub fn to_corr_cholesky(&self, rows: &[f64]) -> Result<CorrCholesky> {
        CorrCholesky::from_lower(&self.to_lower(rows))
    }

    /// Extracts the band of a full factor; entries outside it must be zero.
    pub fn from_corr_cholesky(&self, l: &CorrCholesky) -> Result<Vec<f64>> {
        check_dim(self.dim, l.dim())?;
        let mut out = vec![0.0; self.per_time()];
        for i in 1..self.dim {
            let lo = self.lo(i);
            let r = l.row(i);
            if let Some(j) = (0..lo).find(|&j| r[j] != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "factor entry ({i}, {j}) lies outside band {}",
                    self.band
                )));
            }
            out[self.row_range(i)].copy_from_slice(&r[lo..]);
        }
        Ok(out)
    }

    fn forward(&self, rows: &[f64], y: &[f64], x: &mut [f64]) -> Result<()> {
        x[0] = y[0];
        for i in 1..self.dim {
            let r = &rows[self.row_range(i)];
            let lo = self.lo(i);
            let last = r.len() - 1;
            let mut s = y[i];
            for (k, l) in r[..last].iter().enumerate() {
                s -= l * x[lo + k];
            }
            if r[last] == 0.0 {
                return Err(Error::ZeroDiagonal(i));
            }
            x[i] = s / r[last];
        }
        Ok(())
    }

    fn backward(&self, rows: &[f64], x: &[f64], z: &mut [f64]) {
        for i in (0..self.dim).rev() {
            let mut s = x[i];
            for (k, zk) in z
                .iter()
                .enumerate()
                .take((i + self.band).min(self.dim))
                .skip(i + 1)
            {
                s -= self.entry(rows, k, i) * zk;
            }
            z[i] = s / self.diag(rows, i);
        }
    }
}

/// Per-time likelihood inputs for fixed `μ̃` and `τ̃`.
enum LikData {
    /// `S*_n = D_n⁻¹ R_n D_n⁻¹` with `R_n = Σ_m (y_mn − μ_n)(y_mn − μ_n)ᵀ`.
    Dense(Vec<DMatrix<f64>>),
    /// Standardized observations, `[(n·M + m)·D + d]`.
    Band(Vec<f64>),
}

fn scatter(data: &TrialTensor, mu: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let d = data.dim();
    let mut r = DMatrix::zeros(d, d);
    for m in 0..data.n_trials() {
        let y = data.obs(m, n);
        let c = DVector::from_fn(d, |i, _| y[i] - mu[(n, i)]);
        r.syger(1.0, &c, &c, 1.0);
    }
    r.fill_upper_triangle_with_lower_triangle();
    r
}

fn standardized(data: &TrialTensor, mu: &DMatrix<f64>, tau: &DMatrix<f64>) -> Vec<f64> {
    let (mm, nn, d) = (data.n_trials(), data.n_times(), data.dim());
    let mut out = vec![0.0; mm * nn * d];
    for n in 0..nn {
        for m in 0..mm {
            let y = data.obs(m, n);
            let base = (n * mm + m) * d;
            for i in 0..d {
                out[base + i] = (y[i] - mu[(n, i)]) * (-tau[(n, i)]).exp();
            }
        }
    }
    out
}

fn lik_data(
    data: &TrialTensor,
    layout: &BandLayout,
    mu: &DMatrix<f64>,
    tau: &DMatrix<f64>,
    exec: Exec,
) -> LikData {
    if layout.is_full() {
        LikData::Dense(par::map_indexed(exec, data.n_times(), |n| {
            let mut s = scatter(data, mu, n);
            let d = data.dim();
            for i in 0..d {
                for j in 0..d {
                    s[(i, j)] *= (-tau[(n, i)] - tau[(n, j)]).exp();
                }
            }
            s
        }))
    } else {
        LikData::Band(standardized(data, mu, tau))
    }
}

/// `−M Σ log|L_ii| − ½ tr(L⁻¹ S* L⁻ᵀ)` at one time point; the gradient in
/// the stored coordinates is `tril(L⁻ᵀ L⁻¹ S* L⁻ᵀ) − M/L_ii`.
fn time_terms_dense(
    layout: &BandLayout,
    rows: &[f64],
    s: &DMatrix<f64>,
    m: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let d = layout.dim();
    let l = layout.to_lower(rows);
    if let Some(i) = (0..d).find(|&i| l[(i, i)] == 0.0) {
        return Err(Error::ZeroDiagonal(i));
    }
    let b = l.solve_lower_triangular(s).expect("checked diagonal");
    let a = l
        .solve_lower_triangular(&b.transpose())
        .expect("checked diagonal");
    let logdet: f64 = (0..d).map(|i| l[(i, i)].abs().ln()).sum();
    if let Some(g) = grad {
        let full = l
            .transpose()
            .solve_upper_triangular(&a)
            .expect("checked diagonal");
        for i in 1..d {
            let lo = layout.lo(i);
            let r = layout.row_range(i);
            for (k, gk) in g[r].iter_mut().enumerate() {
                let j = lo + k;
                *gk = full[(i, j)] - if i == j { m / l[(i, i)] } else { 0.0 };
            }
        }
    }
    Ok(-m * logdet - 0.5 * a.trace())
}

/// Banded version of [`time_terms_dense`] working trial by trial:
/// `x = L⁻¹ y*`, `z = L⁻ᵀ x` and `∂/∂L_ij = Σ_m z_i x_j − M/L_ii`.
fn time_terms_band(
    layout: &BandLayout,
    rows: &[f64],
    ys: &[f64],
    m: usize,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let d = layout.dim();
    let mut x = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut logdet = 0.0;
    for i in 1..d {
        let l = layout.diag(rows, i);
        if l == 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
        logdet += l.abs().ln();
    }
    let mut quad = 0.0;
    match grad {
        None => {
            for y in ys.chunks_exact(d).take(m) {
                layout.forward(rows, y, &mut x)?;
                quad += linalg::dot(&x, &x);
            }
        }
        Some(g) => {
            g.fill(0.0);
            for y in ys.chunks_exact(d).take(m) {
                layout.forward(rows, y, &mut x)?;
                layout.backward(rows, &x, &mut z);
                quad += linalg::dot(&x, &x);
                for i in 1..d {
                    let lo = layout.lo(i);
                    let zi = z[i];
                    for (k, gk) in g[layout.row_range(i)].iter_mut().enumerate() {
                        *gk += zi * x[lo + k];
                    }
                }
            }
            for i in 1..d {
                let last = layout.row_range(i).end - 1;
                g[last] -= m as f64 / rows[last];
            }
        }
    }
    Ok(-(m as f64) * logdet - 0.5 * quad)
}

/// Sum over time points of the likelihood terms that depend on `L̃`
/// (everything but `−M Σ τ`). `coords` holds all time points back to back.
fn lik_terms(
    layout: &BandLayout,
    exec: Exec,
    m: usize,
    lik: &LikData,
    coords: &[f64],
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let c = layout.per_time();
    let n_times = match lik {
        LikData::Dense(s) => s.len(),
        LikData::Band(ys) => ys.len() / (m * layout.dim()),
    };
    let per = |n: usize, g: Option<&mut [f64]>| -> Result<f64> {
        let rows = &coords[n * c..(n + 1) * c];
        match lik {
            LikData::Dense(s) => time_terms_dense(layout, rows, &s[n], m as f64, g),
            LikData::Band(ys) => {
                let k = m * layout.dim();
                time_terms_band(layout, rows, &ys[n * k..(n + 1) * k], m, g)
            }
        }
    };
    let parts: Vec<Result<f64>> = match grad {
        Some(g) if c > 0 => par::map_chunks_mut(exec, g, c, |n, gn| per(n, Some(gn))),
        _ => par::map_indexed(exec, n_times, |n| per(n, None)),
    };
    parts.into_iter().sum()
}

/// `Z_L`: the stored Cholesky coordinates (N×C) minus 1 at each row's
/// diagonal.
fn chol_residual(layout: &BandLayout, coords: &[f64], n_times: usize) -> DMatrix<f64> {
    let c = layout.per_time();
    let mut z = DMatrix::from_fn(n_times, c, |n, k| coords[n * c + k]);
    for i in 1..layout.dim() {
        let last = layout.row_range(i).end - 1;
        for n in 0..n_times {
            z[(n, last)] -= 1.0;
        }
    }
    z
}

/// Cholesky factor of `(1 − λ) P + λ I` for the smallest `λ` in
/// `0, 0.05, 0.1, …` that keeps every diagonal entry above 1e-3. Zeros of
/// `P` outside a band stay exactly zero in the factor.
fn banded_factor(p: &DMatrix<f64>) -> Result<CorrCholesky> {
    let d = p.nrows();
    for k in 0..=20 {
        let lambda = k as f64 * 0.05;
        let q = p * (1.0 - lambda) + DMatrix::identity(d, d) * lambda;
        if let Ok(ch) = linalg::cholesky(&q) {
            let l = ch.l();
            if (0..d).all(|i| l[(i, i)] > 1e-3) {
                return crate::sphere::corr_to_rows(&q);
            }
        }
    }
    Ok(CorrCholesky::identity(d))
}

/// Parameters of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    /// `μ̃`, N×D.
    pub mu: DMatrix<f64>,
    /// `τ̃ = log σ̃`, N×D.
    pub tau: DMatrix<f64>,
    rows: SphereProduct,
    layout: BandLayout,
    /// GP scales for (mean, log-sd, Cholesky).
    pub gamma: [f64; 3],
    /// Log length scales for (mean, log-sd, Cholesky).
    pub eta: [f64; 3],
}

impl ChainState {
    /// State with identity correlation at every time point.
    pub fn new(mu: DMatrix<f64>, tau: DMatrix<f64>, layout: BandLayout) -> Result<Self> {
        let n = mu.nrows();
        let factors = vec![CorrCholesky::identity(layout.dim()); n];
        Self::with_factors(mu, tau, &factors, layout)
    }

    pub fn with_factors(
        mu: DMatrix<f64>,
        tau: DMatrix<f64>,
        factors: &[CorrCholesky],
        layout: BandLayout,
    ) -> Result<Self> {
        let (n, d) = mu.shape();
        check_dim(d, layout.dim())?;
        check_dim(n, tau.nrows())?;
        check_dim(d, tau.ncols())?;
        check_dim(n, factors.len())?;
        let mut rows = SphereProduct::new();
        for f in factors {
            let flat = layout.from_corr_cholesky(f)?;
            for i in 1..d {
                let r = flat[layout.row_range(i)].to_vec();
                let len = r.len();
                rows.push(SpherePoint::unit(r)?, Some(len - 1))?;
            }
        }
        Ok(Self {
            mu,
            tau,
            rows,
            layout,
            gamma: [1.0; 3],
            eta: [0.0; 3],
        })
    }

    pub fn n_times(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn layout(&self) -> &BandLayout {
        &self.layout
    }

    /// All Cholesky rows as one product of spheres; time point `n` owns
    /// rows `n(D − 1)..(n + 1)(D − 1)`.
    pub fn rows(&self) -> &SphereProduct {
        &self.rows
    }

    /// Stored coordinates of time point `n`.
    pub fn time_coords(&self, n: usize) -> &[f64] {
        let c = self.layout.per_time();
        &self.rows.coords()[n * c..(n + 1) * c]
    }

    pub fn corr_factor(&self, n: usize) -> Result<CorrCholesky> {
        self.layout.to_corr_cholesky(self.time_coords(n))
    }

    pub fn l_grid(&self) -> Result<Vec<CorrCholesky>> {
        (0..self.n_times()).map(|n| self.corr_factor(n)).collect()
    }

    pub fn correlation(&self, n: usize) -> DMatrix<f64> {
        let rows = self.time_coords(n);
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.layout.correlation(rows, i, j))
    }

    pub fn covariance(&self, n: usize) -> DMatrix<f64> {
        let p = self.correlation(n);
        DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
            p[(i, j)] * (self.tau[(n, i)] + self.tau[(n, j)]).exp()
        })
    }

    /// Overwrites the stored Cholesky coordinates (same layout as
    /// [`SphereProduct::coords`]); rows must stay unit vectors.
    pub fn set_coords(&mut self, coords: &[f64]) -> Result<()> {
        check_dim(self.rows.total_dim(), coords.len())?;
        self.rows.coords_mut().copy_from_slice(coords);
        if self.rows.max_norm_deviation() > 1e-9 {
            return Err(Error::InvalidSpherePoint(
                "Cholesky rows must have unit norm".into(),
            ));
        }
        Ok(())
    }
}

/// Full log-likelihood of all trials and its gradient with respect to every
/// `L_n` (D×D, lower triangular; zero outside the band).
pub fn dynamic_loglik_grad_l(
    state: &ChainState,
    data: &TrialTensor,
    exec: Exec,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    check_dim(data.n_times(), state.n_times())?;
    check_dim(data.dim(), state.dim())?;
    let layout = state.layout();
    let parts = par::map_indexed(exec, data.n_times(), |n| {
        let tau: Vec<f64> = state.tau.row(n).iter().copied().collect();
        let centered = DMatrix::from_fn(data.n_trials(), data.dim(), |m, d| {
            data.get(m, n, d) - state.mu[(n, d)]
        });
        let l = layout.to_lower(state.time_coords(n));
        let t = factor_terms(&tau, &l, &centered)?;
        let g = DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| {
            if j + layout.band() > i {
                t.grad_f[(i, j)]
            } else {
                0.0
            }
        });
        Ok((t.ll, g))
    });
    let mut ll = 0.0;
    let mut grads = Vec::with_capacity(parts.len());
    for p in parts {
        let (l, g) = p?;
        ll += l;
        grads.push(g);
    }
    Ok((ll, grads))
}

/// GP hyperpriors for the three blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpHyper {
    pub mean: HyperPrior,
    pub log_sd: HyperPrior,
    pub chol: HyperPrior,
}

impl GpHyper {
    pub fn get(&self, block: usize) -> &HyperPrior {
        match block {
            MEAN => &self.mean,
            LOG_SD => &self.log_sd,
            _ => &self.chol,
        }
    }
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            mean: HyperPrior {
                a: 1.0,
                b: 0.1,
                m: 0.0,
                v: 1.0,
            },
            log_sd: HyperPrior {
                a: 1.0,
                b: 1e-3,
                m: 0.0,
                v: 0.5,
            },
            chol: HyperPrior {
                a: 1.0,
                b: 0.2,
                m: 0.0,
                v: 1.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicOptions {
    pub hyper: GpHyper,
    /// Kernel exponent `s`.
    pub s: f64,
    /// Band width `w`; `None` keeps full rows.
    pub band: Option<usize>,
    /// Sample `μ̃`; otherwise fix it at the per-time sample mean.
    pub sample_mean: bool,
    /// Sample `τ̃`; otherwise fix it at the log per-time sample sd.
    pub sample_variance: bool,
    pub nugget: f64,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        Self {
            hyper: GpHyper::default(),
            s: 2.0,
            band: None,
            sample_mean: true,
            sample_variance: true,
            nugget: 1e-5,
        }
    }
}

/// Data, time grid and priors of the dynamic model.
#[derive(Clone, Debug)]
pub struct DynamicCorrModel {
    data: TrialTensor,
    grid: TimeGrid,
    opts: DynamicOptions,
    layout: BandLayout,
    trial_sums: Vec<DVector<f64>>,
    plug_mean: DMatrix<f64>,
    plug_tau: Option<DMatrix<f64>>,
    /// Log sample standard deviations, floored at the smallest positive one.
    tau_center: Option<DMatrix<f64>>,
}

impl DynamicCorrModel {
    /// `grid` holds the (rescaled) kernel inputs for the data's time points.
    pub fn new(data: TrialTensor, grid: TimeGrid, opts: DynamicOptions) -> Result<Self> {
        check_dim(data.n_times(), grid.len())?;
        if !(opts.s > 0.0 && opts.s <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel exponent {} must lie in (0, 2]",
                opts.s
            )));
        }
        if !(opts.nugget >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nugget {} must be non-negative",
                opts.nugget
            )));
        }
        for b in [MEAN, LOG_SD, CHOL] {
            let h = opts.hyper.get(b);
            HyperPrior::new(h.a, h.b, h.m, h.v)?;
        }
        let layout = BandLayout::new(data.dim(), opts.band.unwrap_or(data.dim()))?;
        let plug_tau = if opts.sample_variance {
            None
        } else {
            let sd = data.sample_sd()?;
            if let Some(k) = sd.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "channel {} has zero spread at time {}; cannot fix its variance",
                    k / sd.nrows(),
                    k % sd.nrows()
                )));
            }
            Some(sd.map(f64::ln))
        };
        let tau_center = data.sample_sd().ok().and_then(|sd| {
            let floor = sd
                .iter()
                .copied()
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min);
            floor.is_finite().then(|| sd.map(|v| v.max(floor).ln()))
        });
        Ok(Self {
            tau_center,
            trial_sums: data.trial_sums(),
            plug_mean: data.sample_mean(),
            plug_tau,
            data,
            grid,
            opts,
            layout,
        })
    }

    pub fn data(&self) -> &TrialTensor {
        &self.data
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn options(&self) -> &DynamicOptions {
        &self.opts
    }

    pub fn layout(&self) -> &BandLayout {
        &self.layout
    }

    /// Blocks updated by the sweep.
    pub fn active(&self, block: usize) -> bool {
        match block {
            MEAN => self.opts.sample_mean,
            LOG_SD => self.opts.sample_variance,
            _ => self.layout.has_free_rows(),
        }
    }

    fn gp_block(&self, block: usize) -> GpBlock {
        match block {
            MEAN => GpBlock::Mean,
            LOG_SD => GpBlock::LogSd,
            _ => GpBlock::Cholesky {
                band: self.layout.band(),
            },
        }
    }

    /// Starting state: Cholesky rows at their poles, `μ̃ = 0` and `τ̃ = 0`
    /// when sampled (plug-in values otherwise), scales at their prior
    /// modes and log length scales at their prior means.
    pub fn initial_state(&self) -> Result<ChainState> {
        let (n, d) = (self.data.n_times(), self.data.dim());
        let mu = if self.opts.sample_mean {
            DMatrix::zeros(n, d)
        } else {
            self.plug_mean.clone()
        };
        let tau = self
            .plug_tau
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(n, d));
        let mut s = ChainState::new(mu, tau, self.layout.clone())?;
        for b in [MEAN, LOG_SD, CHOL] {
            let h = self.opts.hyper.get(b);
            s.gamma[b] = h.gamma_mode();
            s.eta[b] = h.m;
        }
        Ok(s)
    }

    /// Starting state from the data: per-time sample means, log sample
    /// standard deviations and Cholesky factors of the band-masked sample
    /// correlations (shrunk toward the identity until positive definite).
    /// Scales start at their conditional modes given these values. Needs at
    /// least two trials.
    pub fn data_initial_state(&self) -> Result<ChainState> {
        let data = &self.data;
        let (n, d) = (data.n_times(), data.dim());
        let mean = data.sample_mean();
        let sd = data.sample_sd()?;
        let tau = match (&self.plug_tau, &self.tau_center) {
            (Some(t), _) | (None, Some(t)) => t.clone(),
            (None, None) => return Err(Error::InvalidParameter("data have no spread".into())),
        };
        let factors = (0..n)
            .map(|t| {
                let y = data.at_time(t);
                let p = DMatrix::from_fn(d, d, |i, j| {
                    if i == j {
                        return 1.0;
                    }
                    if i.abs_diff(j) >= self.layout.band() || sd[(t, i)] == 0.0 || sd[(t, j)] == 0.0
                    {
                        return 0.0;
                    }
                    let c: f64 = (0..data.n_trials())
                        .map(|m| (y[(m, i)] - mean[(t, i)]) * (y[(m, j)] - mean[(t, j)]))
                        .sum();
                    c / ((data.n_trials() - 1) as f64 * sd[(t, i)] * sd[(t, j)])
                });
                banded_factor(&p)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s = ChainState::with_factors(mean, tau, &factors, self.layout.clone())?;
        if !self.opts.sample_mean {
            s.mu = self.plug_mean.clone();
        }
        for b in [MEAN, LOG_SD, CHOL] {
            let h = self.opts.hyper.get(b);
            s.eta[b] = h.m;
            let q = self.block_quad(&s, b)?;
            let shape = crate::samplers::gibbs::gamma_posterior_shape(h.a, n, d, self.gp_block(b));
            s.gamma[b] = (h.b + 0.5 * q) / (shape + 1.0);
        }
        Ok(s)
    }

    fn block_values(&self, state: &ChainState, block: usize) -> DMatrix<f64> {
        match block {
            MEAN => state.mu.clone(),
            LOG_SD => state.tau.clone(),
            _ => chol_residual(&self.layout, state.rows.coords(), state.n_times()),
        }
    }

    fn gram(&self, eta: f64) -> Result<UnitGram> {
        UnitGram::new(&self.grid, eta, self.opts.s, self.opts.nugget)
    }

    /// `log p(η | Z, γ)` up to a constant, `Z` being the block's N×K
    /// centred values.
    pub fn eta_log_posterior(&self, block: usize, eta: f64, gamma: f64, z: &DMatrix<f64>) -> f64 {
        let h = self.opts.hyper.get(block);
        let prior = -(eta - h.m).powi(2) / (2.0 * h.v);
        match self.gram(eta) {
            Ok(g) => -0.5 * z.ncols() as f64 * g.logdet() - g.quad(z) / (2.0 * gamma) + prior,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// `Q = tr(Zᵀ K₀⁻¹ Z)` of a block under its current length scale.
    pub fn block_quad(&self, state: &ChainState, block: usize) -> Result<f64> {
        Ok(self
            .gram(state.eta[block])?
            .quad(&self.block_values(state, block)))
    }

    /// Full log-likelihood at `state`.
    pub fn loglik(&self, state: &ChainState, exec: Exec) -> Result<f64> {
        let lik = lik_data(&self.data, &self.layout, &state.mu, &state.tau, exec);
        let ll = lik_terms(
            &self.layout,
            exec,
            self.data.n_trials(),
            &lik,
            state.rows.coords(),
            None,
        )?;
        Ok(ll - self.data.n_trials() as f64 * state.tau.sum())
    }
}

/// Log-density of the Cholesky rows given everything else: likelihood plus
/// the unit-vector GP prior `−tr(Z_Lᵀ K₀⁻¹ Z_L)/(2γ_L)`.
struct CholTarget<'a> {
    layout: &'a BandLayout,
    m: usize,
    n_times: usize,
    lik: &'a LikData,
    gram: &'a UnitGram,
    gamma: f64,
    exec: Exec,
}

impl SphereTarget for CholTarget<'_> {
    fn log_density(&self, q: &SphereProduct, grad: &mut [f64]) -> Result<f64> {
        let coords = q.coords();
        let ll = lik_terms(self.layout, self.exec, self.m, self.lik, coords, Some(grad))?;
        let z = chol_residual(self.layout, coords, self.n_times);
        let sol = self.gram.solve(&z);
        let c = self.layout.per_time();
        let mut quad = 0.0;
        for k in 0..c {
            for n in 0..self.n_times {
                quad += z[(n, k)] * sol[(n, k)];
                grad[n * c + k] -= sol[(n, k)] / self.gamma;
            }
        }
        Ok(ll - quad / (2.0 * self.gamma))
    }
}

/// MCMC schedule for the dynamic model.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicChainConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub sph: SphHmcConfig,
    pub target_accept: f64,
    /// Elliptical slice updates of `τ̃` per sweep.
    pub ess_steps: usize,
    /// Centre the elliptical slice updates of `τ̃` on the data (needs at
    /// least two trials); otherwise use the GP prior as the ellipse.
    pub centred_ess: bool,
    pub exec: Exec,
}

impl Default for DynamicChainConfig {
    fn default() -> Self {
        Self {
            iters: 150_000,
            burnin: 50_000,
            thin: 10,
            sph: SphHmcConfig::default(),
            target_accept: crate::samplers::DEFAULT_TARGET_ACCEPT,
            ess_steps: 1,
            centred_ess: true,
            exec: Exec::Parallel,
        }
    }
}

impl DynamicChainConfig {
    /// `iters` sweeps with the first third as burn-in, thinned by 10.
    pub fn with_iters(iters: usize) -> Self {
        Self {
            iters,
            burnin: iters / 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.ess_steps == 0 || self.burnin >= self.iters {
            return Err(Error::InvalidParameter(format!(
                "need thin >= 1, ess_steps >= 1 and burnin < iters (iters {}, burnin {}, thin {}, ess_steps {})",
                self.iters, self.burnin, self.thin, self.ess_steps
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target acceptance {} must lie in (0, 1)",
                self.target_accept
            )));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        (self.iters - self.burnin).div_ceil(self.thin)
    }
}

/// Outcome of one sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepInfo {
    /// Spherical HMC transition of the Cholesky rows, if they were updated.
    pub chol: Option<StepInfo>,
    /// Step size used for that transition.
    pub step_size: f64,
}

/// Sampler state that persists across sweeps: step-size adaptation and the
/// factored Gram matrices for the current length scales.
pub struct DynamicSampler<'a> {
    model: &'a DynamicCorrModel,
    sph: AdaptiveSphHmc,
    grams: Vec<UnitGram>,
    exec: Exec,
    ess_steps: usize,
    centred_ess: bool,
    started: bool,
}

impl<'a> DynamicSampler<'a> {
    /// The step size adapts during the first `cfg.burnin` sweeps.
    pub fn new(
        model: &'a DynamicCorrModel,
        state: &ChainState,
        cfg: &DynamicChainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let grams = state
            .eta
            .iter()
            .map(|&e| model.gram(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            sph: AdaptiveSphHmc::new(cfg.sph, cfg.target_accept, cfg.burnin as u64),
            grams,
            exec: cfg.exec,
            ess_steps: cfg.ess_steps,
            centred_ess: cfg.centred_ess,
            started: false,
        })
    }

    pub fn sph(&self) -> &AdaptiveSphHmc {
        &self.sph
    }

    /// One Metropolis-within-Gibbs sweep: scales `γ`, log length scales
    /// `η`, then `μ̃`, `τ̃` and the Cholesky rows.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        state: &mut ChainState,
        rng: &mut R,
    ) -> Result<SweepInfo> {
        let model = self.model;
        let (n, d, m) = (
            model.data.n_times(),
            model.data.dim(),
            model.data.n_trials(),
        );
        let blocks: Vec<usize> = [MEAN, LOG_SD, CHOL]
            .into_iter()
            .filter(|&b| model.active(b))
            .collect();

        for &b in &blocks {
            let z = model.block_values(state, b);
            let q = self.grams[b].quad(&z);
            state.gamma[b] = gibbs_gamma(q, n, d, model.gp_block(b), model.opts.hyper.get(b), rng);
        }
        for &b in &blocks {
            let z = model.block_values(state, b);
            let gamma = state.gamma[b];
            let eta = slice_step_1d(
                state.eta[b],
                |e| model.eta_log_posterior(b, e, gamma, &z),
                rng,
                DEFAULT_WIDTH,
                DEFAULT_MAX_STEPOUT,
            )
            .map_err(|e| e.in_stage("length scale"))?;
            state.eta[b] = eta;
            self.grams[b] = model.gram(eta).map_err(|e| e.in_stage("length scale"))?;
        }

        if model.opts.sample_mean {
            self.update_mean(state, rng)
                .map_err(|e| e.in_stage("mean"))?;
        }
        if model.opts.sample_variance {
            self.update_log_sd(state, rng)
                .map_err(|e| e.in_stage("log-sd"))?;
        }
        let mut info = SweepInfo {
            chol: None,
            step_size: self.sph.step_size(),
        };
        if model.active(CHOL) {
            let lik = lik_data(&model.data, &model.layout, &state.mu, &state.tau, self.exec);
            let target = CholTarget {
                layout: &model.layout,
                m,
                n_times: n,
                lik: &lik,
                gram: &self.grams[CHOL],
                gamma: state.gamma[CHOL],
                exec: self.exec,
            };
            if !self.started {
                self.sph
                    .initialize(&state.rows, &target, rng)
                    .map_err(|e| e.in_stage("cholesky"))?;
                self.started = true;
            }
            info.step_size = self.sph.step_size();
            info.chol = Some(
                self.sph
                    .step(&mut state.rows, &target, rng)
                    .map_err(|e| e.in_stage("cholesky"))?,
            );
        }
        Ok(info)
    }

    fn update_mean<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let model = self.model;
        let d = model.data.dim();
        let sigma_inv = par::map_indexed(self.exec, model.data.n_times(), |t| {
            let linv = linalg::lower_inverse(&model.layout.to_lower(state.time_coords(t)))?;
            let pinv = linv.transpose() * &linv;
            Ok(DMatrix::from_fn(d, d, |i, j| {
                pinv[(i, j)] * (-state.tau[(t, i)] - state.tau[(t, j)]).exp()
            }))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let kinv = self.grams[MEAN].inverse() / state.gamma[MEAN];
        let cond = MuConditional::new(&model.trial_sums, &sigma_inv, &kinv, model.data.n_trials())?;
        state.mu = cond.sample(rng);
        Ok(())
    }

    fn update_log_sd<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let model = self.model;
        let (n, d, m) = (
            model.data.n_times(),
            model.data.dim(),
            model.data.n_trials(),
        );
        let exec = self.exec;
        let coords = state.rows.coords();
        // Full rows: precompute R_n and P_n⁻¹ so each evaluation is O(N D²).
        let dense = if model.layout.is_full() {
            let parts = par::map_indexed(exec, n, |t| {
                let l = model.layout.to_lower(state.time_coords(t));
                let linv = linalg::lower_inverse(&l)?;
                let logdet: f64 = (0..d).map(|i| l[(i, i)].abs().ln()).sum();
                Ok((
                    linv.transpose() * &linv,
                    scatter(&model.data, &state.mu, t),
                    logdet,
                ))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            Some(parts)
        } else {
            None
        };
        let mu = &state.mu;
        let loglik = |tau: &DMatrix<f64>| -> Result<f64> {
            let base = -(m as f64) * tau.sum();
            match &dense {
                Some(parts) => {
                    let mut ll = base;
                    for (t, (pinv, r, logdet)) in parts.iter().enumerate() {
                        let mut q = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                q += pinv[(i, j)] * r[(i, j)] * (-tau[(t, i)] - tau[(t, j)]).exp();
                            }
                        }
                        ll -= m as f64 * logdet + 0.5 * q;
                    }
                    Ok(ll)
                }
                None => {
                    let lik = LikData::Band(standardized(&model.data, mu, tau));
                    Ok(base + lik_terms(&model.layout, exec, m, &lik, coords, None)?)
                }
            }
        };
        let gamma = state.gamma[LOG_SD];
        match (&model.tau_center, self.centred_ess) {
            (Some(center), true) => {
                // Elliptical slice under N(c, Λ⁻¹), Λ = K⁻¹ + 2M·I, centred on
                // the data-implied c = Λ⁻¹ 2M log σ̂. The likelihood is
                // reweighted by prior/N(c, Λ⁻¹) so the conditional is
                // unchanged: log p(τ) + ll(τ) − log N(τ; c, Λ⁻¹) =
                // ll(τ) − ⟨K⁻¹c, τ⟩ + M‖τ − c‖² + const.
                let w = 2.0 * m as f64;
                let kinv = self.grams[LOG_SD].inverse() / gamma;
                let mut lam = kinv.clone();
                for i in 0..n {
                    lam[(i, i)] += w;
                }
                let ch = linalg::cholesky(&lam)?;
                let c = ch.solve(&(center * w));
                let kc = &kinv * &c;
                let factor = linalg::upper_inverse(&ch.l().transpose())?;
                let shifted = |x: &DMatrix<f64>| -> Result<f64> {
                    let tau = x + &c;
                    Ok(loglik(&tau)? - kc.dot(&tau) + 0.5 * w * x.norm_squared())
                };
                let mut x = &state.tau - &c;
                let mut ll = shifted(&x)?;
                for _ in 0..self.ess_steps {
                    (x, ll) = ess_step(&x, ll, &factor, shifted, rng)?;
                }
                state.tau = x + c;
            }
            _ => {
                let mut ll = loglik(&state.tau)?;
                let factor = self.grams[LOG_SD].factor() * gamma.sqrt();
                let mut tau = state.tau.clone();
                for _ in 0..self.ess_steps {
                    (tau, ll) = ess_step(&tau, ll, &factor, loglik, rng)?;
                }
                state.tau = tau;
            }
        }
        Ok(())
    }
}

/// Runs one sweep; see [`DynamicSampler::sweep`].
pub fn mwg_sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    sampler: &mut DynamicSampler<'_>,
    rng: &mut R,
) -> Result<SweepInfo> {
    sampler.sweep(state, rng)
}

/// Retained draws of a dynamic chain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DynamicSamples {
    pub times: Vec<f64>,
    pub dim: usize,
    pub band: usize,
    /// Off-diagonal pairs `(i, j)` stored in `corr`, see [`BandLayout::pairs`].
    pub pairs: Vec<(usize, usize)>,
    /// `μ(t)`, one N×D matrix per draw.
    pub mean: Vec<DMatrix<f64>>,
    /// `σ(t)`, one N×D matrix per draw.
    pub sd: Vec<DMatrix<f64>>,
    /// `ρ_ij(t)` for each pair, one N×(number of pairs) matrix per draw.
    pub corr: Vec<DMatrix<f64>>,
    /// Stored Cholesky coordinates per draw.
    pub factor_coords: Vec<Vec<f64>>,
    pub gamma: Vec<[f64; 3]>,
    pub eta: Vec<[f64; 3]>,
    /// Step size of every sweep, burn-in included.
    pub step_size: Vec<f64>,
    /// Acceptance probability of every spherical HMC transition.
    pub accept_prob: Vec<f64>,
    pub accept_rate: f64,
    pub invalid_trajectories: u64,
}

impl DynamicSamples {
    fn new(model: &DynamicCorrModel) -> Self {
        Self {
            times: model.data.times().to_vec(),
            dim: model.data.dim(),
            band: model.layout.band(),
            pairs: model.layout.pairs(),
            ..Self::default()
        }
    }

    fn record(&mut self, state: &ChainState) {
        let n = state.n_times();
        self.mean.push(state.mu.clone());
        self.sd.push(state.tau.map(f64::exp));
        let layout = state.layout();
        self.corr
            .push(DMatrix::from_fn(n, self.pairs.len(), |t, k| {
                let (i, j) = self.pairs[k];
                layout.correlation(state.time_coords(t), i, j)
            }));
        self.factor_coords.push(state.rows().coords().to_vec());
        self.gamma.push(state.gamma);
        self.eta.push(state.eta);
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// `ρ_ij(t_n)` in draw `s`; zero outside the band.
    pub fn corr_entry(&self, s: usize, n: usize, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let key = if i > j { (i, j) } else { (j, i) };
        match self.pairs.iter().position(|&p| p == key) {
            Some(k) => self.corr[s][(n, k)],
            None => 0.0,
        }
    }

    /// `Σ_ij(t_n)` in draw `s`.
    pub fn cov_entry(&self, s: usize, n: usize, i: usize, j: usize) -> f64 {
        self.sd[s][(n, i)] * self.sd[s][(n, j)] * self.corr_entry(s, n, i, j)
    }

    /// Correlation matrix at time `n` in draw `s`.
    pub fn corr_matrix(&self, s: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.corr_entry(s, n, i, j))
    }
}

/// Runs a chain from [`DynamicCorrModel::initial_state`].
pub fn run_dynamic<R: Rng + ?Sized>(
    model: &DynamicCorrModel,
    cfg: &DynamicChainConfig,
    rng: &mut R,
) -> Result<DynamicSamples> {
    let state = model.initial_state()?;
    Ok(run_dynamic_from(model, state, cfg, rng)?.0)
}

/// Runs a chain from `state`, adapting the step size during burn-in.
/// Returns the retained draws and the final state.
pub fn run_dynamic_from<R: Rng + ?Sized>(
    model: &DynamicCorrModel,
    mut state: ChainState,
    cfg: &DynamicChainConfig,
    rng: &mut R,
) -> Result<(DynamicSamples, ChainState)> {
    cfg.validate()?;
    check_dim(model.data.n_times(), state.n_times())?;
    if state.layout() != model.layout() {
        return Err(Error::InvalidParameter(
            "state and model use different band layouts".into(),
        ));
    }
    let mut sampler = DynamicSampler::new(model, &state, cfg)?;
    let mut out = DynamicSamples::new(model);
    out.step_size.reserve(cfg.iters);
    for it in 0..cfg.iters {
        let info = sampler.sweep(&mut state, rng)?;
        if let Some(s) = info.chol {
            out.step_size.push(info.step_size);
            out.accept_prob.push(s.accept_prob);
        }
        if it >= cfg.burnin && (it - cfg.burnin) % cfg.thin == 0 {
            out.record(&state);
        }
        if (it + 1) % 1000 == 0 {
            log::debug!(
                "sweep {}/{}: step size {:.4}, acceptance {:.3}",
                it + 1,
                cfg.iters,
                sampler.sph.step_size(),
                sampler.sph.acceptance_rate()
            );
        }
    }
    out.accept_rate = sampler.sph.acceptance_rate();
    out.invalid_trajectories = sampler.sph.invalid_count();
    Ok((out, state))
}
