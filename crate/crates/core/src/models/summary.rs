//! Pointwise posterior summaries of dynamic chains.

use nalgebra::DMatrix;

use super::dynamic::DynamicSamples;
use super::periodic::PeriodicTruth;
use crate::diagnostics::quantile_sorted;
use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Fewest retained draws accepted by [`summarize_posterior`].
pub const MIN_SAMPLES: usize = 100;

/// Pointwise posterior mean with 2.5% and 97.5% quantiles.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

impl Band {
    pub fn width(&self) -> DMatrix<f64> {
        &self.upper - &self.lower
    }

    /// Fraction of entries of `truth` inside the band.
    pub fn coverage(&self, truth: &DMatrix<f64>) -> Result<f64> {
        check_dim(self.mean.nrows(), truth.nrows())?;
        check_dim(self.mean.ncols(), truth.ncols())?;
        if truth.is_empty() {
            return Ok(f64::NAN);
        }
        let inside = truth
            .iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .filter(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
            .count();
        Ok(inside as f64 / truth.len() as f64)
    }

    /// Mean over entries of the squared error of the posterior mean.
    pub fn mean_sq_error(&self, truth: &DMatrix<f64>) -> Result<f64> {
        check_dim(self.mean.nrows(), truth.nrows())?;
        check_dim(self.mean.ncols(), truth.ncols())?;
        Ok((&self.mean - truth).norm_squared() / truth.len().max(1) as f64)
    }
}

/// Summarizes equally shaped draws entry by entry.
pub fn pointwise_band(draws: &[DMatrix<f64>]) -> Result<Band> {
    if draws.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: draws.len(),
        });
    }
    let (r, c) = draws[0].shape();
    let mut mean = DMatrix::zeros(r, c);
    let mut lower = DMatrix::zeros(r, c);
    let mut upper = DMatrix::zeros(r, c);
    let mut buf = vec![0.0; draws.len()];
    for j in 0..c {
        for i in 0..r {
            for (b, d) in buf.iter_mut().zip(draws) {
                *b = d[(i, j)];
            }
            mean[(i, j)] = buf.iter().sum::<f64>() / buf.len() as f64;
            buf.sort_by(f64::total_cmp);
            lower[(i, j)] = quantile_sorted(&buf, 0.025);
            upper[(i, j)] = quantile_sorted(&buf, 0.975);
        }
    }
    Ok(Band { mean, lower, upper })
}

/// How the posterior compares with a known truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthComparison {
    pub mean_coverage: f64,
    pub sd_coverage: f64,
    /// Over the in-band off-diagonal pairs.
    pub corr_coverage: f64,
    /// Over the entries in [`PosteriorSummary::cov_entries`].
    pub cov_coverage: f64,
    /// Squared error of the posterior mean of `μ`, averaged over time and
    /// channels.
    pub mean_mise: f64,
    /// Same for the covariance entries.
    pub cov_mise: f64,
    /// `‖P̂(t) − P(t)‖₂` per time point.
    pub corr_norm_error: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub times: Vec<f64>,
    pub dim: usize,
    /// Off-diagonal pairs, the columns of `corr`.
    pub pairs: Vec<(usize, usize)>,
    /// Covariance entries, the columns of `cov`: the diagonal, then `pairs`.
    pub cov_entries: Vec<(usize, usize)>,
    pub mean: Band,
    pub sd: Band,
    pub corr: Band,
    pub cov: Band,
    pub truth: Option<TruthComparison>,
}

impl PosteriorSummary {
    /// Posterior mean correlation matrix at time `n` (zero outside the band).
    pub fn corr_mean_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.dim, self.dim);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            p[(i, j)] = self.corr.mean[(n, k)];
            p[(j, i)] = self.corr.mean[(n, k)];
        }
        p
    }

    /// Posterior mean covariance matrix at time `n`.
    pub fn cov_mean_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim, self.dim);
        for (k, &(i, j)) in self.cov_entries.iter().enumerate() {
            s[(i, j)] = self.cov.mean[(n, k)];
            s[(j, i)] = self.cov.mean[(n, k)];
        }
        s
    }

    pub fn column_of_pair(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i > j { (i, j) } else { (j, i) };
        self.pairs.iter().position(|&p| p == key)
    }
}

fn compare(s: &PosteriorSummary, truth: &PeriodicTruth) -> Result<TruthComparison> {
    check_dim(s.times.len(), truth.n_times())?;
    check_dim(s.dim, truth.dim())?;
    let n = s.times.len();
    let corr_truth = DMatrix::from_fn(n, s.pairs.len(), |t, k| {
        let (i, j) = s.pairs[k];
        truth.corr[t][(i, j)]
    });
    let cov_truth = DMatrix::from_fn(n, s.cov_entries.len(), |t, k| {
        let (i, j) = s.cov_entries[k];
        truth.cov[t][(i, j)]
    });
    let corr_norm_error = (0..n)
        .map(|t| linalg::sym_spectral_norm(&(s.corr_mean_matrix(t) - &truth.corr[t])))
        .collect();
    Ok(TruthComparison {
        mean_coverage: s.mean.coverage(&truth.mean)?,
        sd_coverage: s.sd.coverage(&truth.sd)?,
        corr_coverage: s.corr.coverage(&corr_truth)?,
        cov_coverage: s.cov.coverage(&cov_truth)?,
        mean_mise: s.mean.mean_sq_error(&truth.mean)?,
        cov_mise: s.cov.mean_sq_error(&cov_truth)?,
        corr_norm_error,
    })
}

/// Pointwise posterior means and 95% bands for `μ`, `σ`, `ρ` and `Σ`,
/// plus coverage and error curves when `truth` is given.
pub fn summarize_posterior(
    samples: &DynamicSamples,
    truth: Option<&PeriodicTruth>,
) -> Result<PosteriorSummary> {
    let n = samples.n_times();
    let d = samples.dim;
    let cov_entries: Vec<(usize, usize)> = (0..d)
        .map(|i| (i, i))
        .chain(samples.pairs.iter().copied())
        .collect();
    let cov_draws: Vec<DMatrix<f64>> = (0..samples.len())
        .map(|s| {
            DMatrix::from_fn(n, cov_entries.len(), |t, k| {
                let (i, j) = cov_entries[k];
                samples.cov_entry(s, t, i, j)
            })
        })
        .collect();
    let mut out = PosteriorSummary {
        times: samples.times.clone(),
        dim: d,
        pairs: samples.pairs.clone(),
        mean: pointwise_band(&samples.mean)?,
        sd: pointwise_band(&samples.sd)?,
        corr: pointwise_band(&samples.corr)?,
        cov: pointwise_band(&cov_draws)?,
        cov_entries,
        truth: None,
    };
    if let Some(t) = truth {
        out.truth = Some(compare(&out, t)?);
    }
    Ok(out)
}

/// `‖P̂_a(t) − P̂_b(t)‖_F` between the posterior mean correlation processes
/// of two summaries on the same grid.
pub fn frobenius_distance_curve(a: &PosteriorSummary, b: &PosteriorSummary) -> Result<Vec<f64>> {
    check_dim(a.times.len(), b.times.len())?;
    check_dim(a.dim, b.dim)?;
    Ok((0..a.times.len())
        .map(|t| (a.corr_mean_matrix(t) - b.corr_mean_matrix(t)).norm())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::dynamic::{BandLayout, ChainState, DynamicSamples};
    use crate::models::periodic::PeriodicTruth;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn constant_samples(count: usize) -> DynamicSamples {
        DynamicSamples {
            times: vec![0.0, 1.0, 2.0],
            dim: 2,
            band: 2,
            pairs: vec![(1, 0)],
            mean: vec![DMatrix::from_element(3, 2, 0.3); count],
            sd: vec![DMatrix::from_element(3, 2, 2.0); count],
            corr: vec![DMatrix::from_element(3, 1, -0.4); count],
            ..DynamicSamples::default()
        }
    }

    #[test]
    fn constant_chain_has_zero_width() {
        let s = summarize_posterior(&constant_samples(120), None).unwrap();
        assert!(s.mean.width().iter().all(|w| *w == 0.0));
        assert!(s.corr.width().iter().all(|w| *w == 0.0));
        assert!(s.mean.mean.iter().all(|m| (m - 0.3).abs() < 1e-15));
        assert!(s.sd.lower.iter().all(|m| *m == 2.0));
        assert_eq!(s.cov_entries, vec![(0, 0), (1, 1), (1, 0)]);
        assert!((s.cov.mean[(1, 2)] + 1.6).abs() < 1e-14);
        assert!((s.cov_mean_matrix(0)[(0, 1)] + 1.6).abs() < 1e-14);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            summarize_posterior(&constant_samples(99), None),
            Err(Error::TooFewSamples {
                needed: 100,
                got: 99
            })
        );
    }

    #[test]
    fn identical_processes_have_zero_distance() {
        let s = summarize_posterior(&constant_samples(100), None).unwrap();
        assert!(frobenius_distance_curve(&s, &s)
            .unwrap()
            .iter()
            .all(|d| *d == 0.0));
        let mut other = constant_samples(100);
        other.corr = vec![DMatrix::from_element(3, 1, 0.1); 100];
        let o = summarize_posterior(&other, None).unwrap();
        let dist = frobenius_distance_curve(&s, &o).unwrap();
        assert!(dist.iter().all(|d| (d - 0.5 * 2f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn truth_comparison() {
        let s = constant_samples(100);
        let cov = vec![DMatrix::from_row_slice(2, 2, &[4.0, -1.6, -1.6, 4.0]); 3];
        let truth =
            PeriodicTruth::new(s.times.clone(), DMatrix::from_element(3, 2, 0.3), cov).unwrap();
        let c = summarize_posterior(&s, Some(&truth))
            .unwrap()
            .truth
            .unwrap();
        assert_eq!(
            (
                c.mean_coverage,
                c.sd_coverage,
                c.corr_coverage,
                c.cov_coverage
            ),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(c.mean_mise < 1e-28 && c.cov_mise < 1e-28);
        assert!(c.corr_norm_error.iter().all(|e| *e < 1e-14));
        let off = PeriodicTruth::new(
            s.times.clone(),
            DMatrix::from_element(3, 2, 0.5),
            truth.cov.clone(),
        )
        .unwrap();
        let c = summarize_posterior(&s, Some(&off)).unwrap().truth.unwrap();
        assert_eq!(c.mean_coverage, 0.0);
        assert!((c.mean_mise - 0.04).abs() < 1e-12);
    }

    #[test]
    fn summaries_from_a_chain_state() {
        let layout = BandLayout::new(3, 2).unwrap();
        let st = ChainState::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3), layout).unwrap();
        let p = st.correlation(1);
        assert_eq!(p, DMatrix::identity(3, 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn quantiles_match_order_statistics(seed in 0u64..1000, count in 100usize..400) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<DMatrix<f64>> = (0..count).map(|_| DMatrix::from_fn(2, 3, |_, _| rng.random::<f64>())).collect();
            let b = pointwise_band(&draws).unwrap();
            for i in 0..2 {
                for j in 0..3 {
                    let mut v: Vec<f64> = draws.iter().map(|d| d[(i, j)]).collect();
                    v.sort_by(f64::total_cmp);
                    // Type-7 position h = (n − 1)p between order statistics.
                    for (p, got) in [(0.025, b.lower[(i, j)]), (0.975, b.upper[(i, j)])] {
                        let h = (count - 1) as f64 * p;
                        let k = h.floor() as usize;
                        let want = v[k] + (h - k as f64) * (v[(k + 1).min(count - 1)] - v[k]);
                        prop_assert!((got - want).abs() < 1e-15);
                        prop_assert!(v[k] <= got && got <= v[(k + 1).min(count - 1)]);
                    }
                    let m: f64 = v.iter().sum::<f64>() / count as f64;
                    prop_assert!((b.mean[(i, j)] - m).abs() < 1e-12);
                }
            }
        }
    }
}
