//! Conjugate draws for the GP scales and the mean process.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::gp::HyperPrior;
use crate::linalg;

/// Which GP block a scale `γ` belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpBlock {
    Mean,
    LogSd,
    /// Cholesky rows `2..D`, each restricted to its last `min(i, band)`
    /// coordinates.
    Cholesky {
        band: usize,
    },
}

/// Number of scalar GP components per time point in a block.
pub fn components_per_time(which: GpBlock, dim: usize) -> usize {
    match which {
        GpBlock::Mean | GpBlock::LogSd => dim,
        GpBlock::Cholesky { band } => (2..=dim).map(|i| i.min(band)).sum(),
    }
}

/// Shape of the conditional inverse-Gamma for `γ`:
/// `a + N·(components per time point)/2`. For full Cholesky rows the count
/// is `D(D + 1)/2 − 1 = D((D + 1)/2 − 1/D)`.
pub fn gamma_posterior_shape(a: f64, n: usize, dim: usize, which: GpBlock) -> f64 {
    a + (n * components_per_time(which, dim)) as f64 / 2.0
}

/// Draws `γ ~ InvGamma(a', b + Q/2)` where `Q = Σ tr(Zᵀ K₀⁻¹ Z)` over the
/// block's centred GP components and `a'` is [`gamma_posterior_shape`].
pub fn gibbs_gamma<R: Rng + ?Sized>(
    q: f64,
    n: usize,
    dim: usize,
    which: GpBlock,
    hp: &HyperPrior,
    rng: &mut R,
) -> f64 {
    let shape = gamma_posterior_shape(hp.a, n, dim, which);
    let rate = hp.b + 0.5 * q.max(0.0);
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    rate / g
}

/// Gaussian full conditional of the mean process, in the ordering
/// `vec(μ̃)[d·N + n] = μ̃[n, d]`.
#[derive(Clone, Debug)]
pub struct MuConditional {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    chol: linalg::Chol,
    n: usize,
    dim: usize,
}

impl MuConditional {
    /// `trial_sums[n]` is `Σ_m y_mn`, `sigma_inv[n]` is `Σ̃_n⁻¹`, `kmu_inv`
    /// is `K_μ⁻¹` and `m` the number of trials.
    pub fn new(
        trial_sums: &[DVector<f64>],
        sigma_inv: &[DMatrix<f64>],
        kmu_inv: &DMatrix<f64>,
        m: usize,
    ) -> Result<Self> {
        let n = kmu_inv.nrows();
        check_dim(n, trial_sums.len())?;
        check_dim(n, sigma_inv.len())?;
        let dim = trial_sums.first().map_or(0, |v| v.len());
        let size = n * dim;
        let mut prec = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for d in 0..dim {
            prec.view_mut((d * n, d * n), (n, n)).copy_from(kmu_inv);
        }
        for t in 0..n {
            check_dim(dim, trial_sums[t].len())?;
            let si = &sigma_inv[t];
            let b = si * &trial_sums[t];
            for a in 0..dim {
                rhs[a * n + t] = b[a];
                for c in 0..dim {
                    prec[(a * n + t, c * n + t)] += m as f64 * si[(a, c)];
                }
            }
        }
        let chol = linalg::cholesky(&prec).map_err(|_| Error::pd("mean conditional precision"))?;
        let mean = chol.solve(&rhs);
        Ok(Self {
            mean,
            precision: prec,
            chol,
            n,
            dim,
        })
    }

    /// Conditional mean as an N×D matrix.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.dim, self.mean.as_slice())
    }

    /// Draws `μ̃` (N×D).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let z = DVector::from_fn(self.n * self.dim, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let l = self.chol.l();
        let x = l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("non-singular factor");
        DMatrix::from_column_slice(self.n, self.dim, (&self.mean + x).as_slice())
    }
}

/// Draws the mean process from its Gaussian full conditional given data
/// `y[m][n]` (each a D-vector), per-time covariances `Σ̃_n` and the mean GP
/// Gram matrix `K_μ`.
pub fn gibbs_mu<R: Rng + ?Sized>(
    y: &[Vec<DVector<f64>>],
    sigma: &[DMatrix<f64>],
    k_mu: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = k_mu.nrows();
    let dim = sigma.first().map_or(0, |s| s.nrows());
    let mut sums = vec![DVector::zeros(dim); n];
    for trial in y {
        check_dim(n, trial.len())?;
        for (s, v) in sums.iter_mut().zip(trial) {
            *s += v;
        }
    }
    let sigma_inv = sigma
        .iter()
        .map(|s| linalg::cholesky(s).map(|c| c.inverse()))
        .collect::<Result<Vec<_>>>()?;
    let kinv = linalg::cholesky(k_mu)?.inverse();
    Ok(MuConditional::new(&sums, &sigma_inv, &kinv, y.len())?.sample(rng))
}
