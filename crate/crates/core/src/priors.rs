//! Densities on spheres.
//!
//! All log-densities are unnormalized and taken with respect to the surface
//! measure of the sphere. Gradients are ambient; projecting them onto the
//! tangent space is left to the samplers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, dot};
use crate::sphere::SpherePoint;

/// Squared-Dirichlet: `l ∘ l ~ Dirichlet(α)` with symmetric random signs.
#[derive(Clone, Debug, PartialEq)]
pub struct SqDirichletParams {
    alpha: Vec<f64>,
}

impl SqDirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidParameter("empty concentration vector".into()));
        }
        if let Some((k, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a > 0.0 && a.is_finite()))
        {
            return Err(Error::NonPositiveAlpha {
                row: 0,
                col: k,
                value: *a,
            });
        }
        Ok(Self { alpha })
    }

    /// `α = ½·1`, the uniform distribution on the sphere.
    pub fn uniform(dim: usize) -> Self {
        Self {
            alpha: vec![0.5; dim],
        }
    }

    /// `α = (a·1_{d−1}, a_last)`.
    pub fn polar(dim: usize, a: f64, a_last: f64) -> Result<Self> {
        let mut alpha = vec![a; dim];
        alpha[dim - 1] = a_last;
        Self::new(alpha)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
}

/// `Σ_k (2α_k − 1) log|l_k|`.
pub fn sqdir_logpdf(l: &SpherePoint, p: &SqDirichletParams) -> Result<f64> {
    sqdir_logpdf_slice(l.coords(), p)
}

pub(crate) fn sqdir_logpdf_slice(l: &[f64], p: &SqDirichletParams) -> Result<f64> {
    check_dim(p.dim(), l.len())?;
    let mut s = 0.0;
    for (k, (x, a)) in l.iter().zip(&p.alpha).enumerate() {
        let e = 2.0 * a - 1.0;
        if e == 0.0 {
            continue;
        }
        if *x == 0.0 {
            return Err(Error::LogOfZero(k));
        }
        s += e * x.abs().ln();
    }
    Ok(s)
}

/// `(2α_k − 1) / l_k`.
pub fn sqdir_grad(l: &SpherePoint, p: &SqDirichletParams) -> Result<Vec<f64>> {
    let mut g = vec![0.0; l.dim()];
    sqdir_grad_into(l.coords(), p, &mut g)?;
    Ok(g)
}

/// Adds `scale · ∇ log p` into `out`.
pub(crate) fn sqdir_grad_add(
    l: &[f64],
    p: &SqDirichletParams,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    check_dim(p.dim(), l.len())?;
    for (k, ((x, a), o)) in l.iter().zip(&p.alpha).zip(out.iter_mut()).enumerate() {
        let e = 2.0 * a - 1.0;
        if e == 0.0 {
            continue;
        }
        if *x == 0.0 {
            return Err(Error::DivByZero(k));
        }
        *o += scale * e / x;
    }
    Ok(())
}

fn sqdir_grad_into(l: &[f64], p: &SqDirichletParams, out: &mut [f64]) -> Result<()> {
    out.iter_mut().for_each(|x| *x = 0.0);
    sqdir_grad_add(l, p, 1.0, out)
}

/// Draws `l` with `l² ~ Dirichlet(α)` and independent uniform signs.
pub fn sqdir_sample<R: Rng + ?Sized>(p: &SqDirichletParams, rng: &mut R) -> SpherePoint {
    // log G_k for G_k ~ Gamma(α_k) as log Gamma(α_k + 1) + log U / α_k, which
    // stays finite for small α.
    let logs: Vec<f64> = p
        .alpha
        .iter()
        .map(|&a| {
            let g: f64 = Gamma::new(a + 1.0, 1.0)
                .expect("positive shape")
                .sample(rng);
            let u: f64 = rng.random::<f64>();
            g.ln() + (1.0 - u).ln() / a
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|x| (x - m).exp()).sum();
    let coords: Vec<f64> = logs
        .iter()
        .map(|x| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * (0.5 * (x - m - total.ln())).exp()
        })
        .collect();
    SpherePoint::from_direction(coords, 1.0).expect("non-zero direction")
}

/// Per-row concentrations for rows `i = 2..D` making `P` jointly uniform:
/// `α_i = (½·1_{i−1}, (D − i)/2 + 1)`.
pub fn jointly_uniform_alpha(dim: usize) -> Result<Vec<SqDirichletParams>> {
    if dim < 2 {
        return Err(Error::InvalidParameter(
            "dimension must be at least 2".into(),
        ));
    }
    (2..=dim)
        .map(|i| SqDirichletParams::polar(i, 0.5, (dim - i) as f64 / 2.0 + 1.0))
        .collect()
}

/// Row `i` (1-based) of the marginally uniform parameterization,
/// `α_i = (½·1_{i−1}, ((i − 2)D − 1)/2)`. The last entry is non-positive at
/// `i = 2` for every `D`.
pub fn marginally_uniform_row_alpha(dim: usize, i: usize) -> Result<SqDirichletParams> {
    if dim < 2 || i < 2 || i > dim {
        return Err(Error::InvalidParameter(format!(
            "row {i} out of range for D = {dim}"
        )));
    }
    let last = ((i as f64 - 2.0) * dim as f64 - 1.0) / 2.0;
    if last <= 0.0 {
        return Err(Error::NonPositiveAlpha {
            row: i,
            col: i,
            value: last,
        });
    }
    SqDirichletParams::polar(i, 0.5, last)
}

/// All rows `i = 2..D` of the marginally uniform parameterization.
pub fn marginally_uniform_alpha(dim: usize) -> Result<Vec<SqDirichletParams>> {
    if dim < 2 {
        return Err(Error::InvalidParameter(
            "dimension must be at least 2".into(),
        ));
    }
    (2..=dim)
        .map(|i| marginally_uniform_row_alpha(dim, i))
        .collect()
}

/// von Mises-Fisher with mean direction `mu` and concentration `kappa`.
#[derive(Clone, Debug, PartialEq)]
pub struct VmfParams {
    kappa: f64,
    mu: Vec<f64>,
}

impl VmfParams {
    pub fn new(kappa: f64, mu: Vec<f64>) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa {kappa} must be non-negative"
            )));
        }
        SpherePoint::unit(mu.clone())?;
        Ok(Self { kappa, mu })
    }

    /// Concentration toward the pole `n_d = (0, …, 0, 1)`.
    pub fn polar(dim: usize, kappa: f64) -> Result<Self> {
        Self::new(kappa, SpherePoint::pole(dim, 1.0).into_coords())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
}

pub fn vmf_logpdf(l: &SpherePoint, p: &VmfParams) -> Result<f64> {
    check_dim(p.mu.len(), l.dim())?;
    Ok(p.kappa * dot(&p.mu, l.coords()))
}

pub fn vmf_grad(l: &SpherePoint, p: &VmfParams) -> Result<Vec<f64>> {
    check_dim(p.mu.len(), l.dim())?;
    Ok(p.mu.iter().map(|m| p.kappa * m).collect())
}

/// Polar Bingham, `log p(l) = ζ l_d²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinghamParams {
    pub zeta: f64,
}

pub fn bingham_logpdf(l: &SpherePoint, p: &BinghamParams) -> f64 {
    let x = l.coords()[l.dim() - 1];
    p.zeta * x * x
}

pub fn bingham_grad(l: &SpherePoint, p: &BinghamParams) -> Vec<f64> {
    let d = l.dim();
    let mut g = vec![0.0; d];
    g[d - 1] = 2.0 * p.zeta * l.coords()[d - 1];
    g
}

/// Gaussian restricted to the unit sphere.
#[derive(Clone, Debug)]
pub struct UnitVecGaussParams {
    mean: DVector<f64>,
    chol: linalg::Chol,
}

impl UnitVecGaussParams {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        let chol = linalg::cholesky(&cov)?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `−½ (l − μ)ᵀ Σ⁻¹ (l − μ)`.
pub fn uvgauss_logpdf(l: &SpherePoint, p: &UnitVecGaussParams) -> Result<f64> {
    check_dim(p.dim(), l.dim())?;
    let r = DVector::from_column_slice(l.coords()) - &p.mean;
    let z = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
    Ok(-0.5 * linalg::chol_trace_quad(&p.chol, &z))
}

/// `−Σ⁻¹ (l − μ)`.
pub fn uvgauss_grad(l: &SpherePoint, p: &UnitVecGaussParams) -> Result<Vec<f64>> {
    check_dim(p.dim(), l.dim())?;
    let r = DVector::from_column_slice(l.coords()) - &p.mean;
    Ok((-p.chol.solve(&r)).as_slice().to_vec())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diagnostics::ks_one_sample;
    use crate::linalg::norm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    /// Derivative of `f` along the chart `(x_1..x_{d−1}) ↦ (x, ±√(1 − ‖x‖²))`
    /// by central differences, and the same derivative from an ambient
    /// gradient `g`.
    pub(crate) fn chart_check(f: impl Fn(&[f64]) -> f64, g: &[f64], l: &[f64]) -> f64 {
        let d = l.len();
        let last = l[d - 1];
        let lift = |x: &[f64]| {
            let mut v = x.to_vec();
            let s: f64 = x.iter().map(|t| t * t).sum();
            v.push(last.signum() * (1.0 - s).sqrt());
            v
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..d - 1 {
            let mut xp = l[..d - 1].to_vec();
            let mut xm = xp.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (f(&lift(&xp)) - f(&lift(&xm))) / (2.0 * h);
            let an = g[k] - g[d - 1] * l[k] / last;
            let rel = (fd - an).abs() / an.abs().max(1e-3);
            worst = worst.max(rel);
        }
        worst
    }

    fn random_unit(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> SpherePoint {
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let p = SpherePoint::from_direction(v, 1.0).unwrap();
            // Stay away from coordinate hyperplanes and the chart boundary.
            if p.coords().iter().all(|x| x.abs() > 0.1) {
                return p;
            }
        }
    }

    #[test]
    fn sqdir_examples() {
        let half = SqDirichletParams::uniform(3);
        let mut r = rng(1);
        let l = random_unit(3, &mut r);
        assert_eq!(sqdir_logpdf(&l, &half).unwrap(), 0.0);
        assert_eq!(sqdir_grad(&l, &half).unwrap(), vec![0.0; 3]);

        let ones = SqDirichletParams::new(vec![1.0, 1.0]).unwrap();
        let h = 0.5f64.sqrt();
        let l = SpherePoint::unit(vec![h, h]).unwrap();
        assert!((sqdir_logpdf(&l, &ones).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let g = sqdir_grad(&l, &ones).unwrap();
        assert!((g[0] - 2f64.sqrt()).abs() < 1e-14 && (g[1] - 2f64.sqrt()).abs() < 1e-14);

        let l = SpherePoint::unit(vec![1.0, 0.0]).unwrap();
        assert_eq!(sqdir_logpdf(&l, &ones), Err(Error::LogOfZero(1)));
        assert_eq!(sqdir_grad(&l, &ones), Err(Error::DivByZero(1)));
        assert!(matches!(
            SqDirichletParams::new(vec![1.0, -0.5]),
            Err(Error::NonPositiveAlpha { col: 1, .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(2);
        for _ in 0..20 {
            let d = 2 + r.random_range(0..4);
            let l = random_unit(d, &mut r);
            let alpha: Vec<f64> = (0..d).map(|_| 0.1 + 3.0 * r.random::<f64>()).collect();
            let p = SqDirichletParams::new(alpha).unwrap();
            let f = |x: &[f64]| sqdir_logpdf_slice(x, &p).unwrap();
            assert!(chart_check(f, &sqdir_grad(&l, &p).unwrap(), l.coords()) < 1e-5);

            let mu = random_unit(d, &mut r).into_coords();
            let vp = VmfParams::new(5.0 * r.random::<f64>(), mu).unwrap();
            let f = |x: &[f64]| vp.kappa * dot(&vp.mu, x);
            assert!(chart_check(f, &vmf_grad(&l, &vp).unwrap(), l.coords()) < 1e-5);

            let bp = BinghamParams {
                zeta: 10.0 * (r.random::<f64>() - 0.5),
            };
            let f = |x: &[f64]| bp.zeta * x[d - 1] * x[d - 1];
            assert!(chart_check(f, &bingham_grad(&l, &bp), l.coords()) < 1e-5);

            let a = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
            let cov = &a * a.transpose() + DMatrix::identity(d, d);
            let mean: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let gp = UnitVecGaussParams::new(mean, cov).unwrap();
            let f = |x: &[f64]| {
                uvgauss_logpdf(&SpherePoint::from_direction(x.to_vec(), 1.0).unwrap(), &gp).unwrap()
            };
            assert!(chart_check(f, &uvgauss_grad(&l, &gp).unwrap(), l.coords()) < 1e-5);
        }
    }

    #[test]
    fn uniform_sqdir_fills_octants_evenly() {
        let mut r = rng(3);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let l = sqdir_sample(&SqDirichletParams::uniform(3), &mut r);
            assert!((norm(l.coords()) - 1.0).abs() < 1e-12);
            let c = l.coords();
            let k = (c[0] > 0.0) as usize + 2 * (c[1] > 0.0) as usize + 4 * (c[2] > 0.0) as usize;
            counts[k] += 1;
        }
        let e = n as f64 / 8.0;
        let chi: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(ChiSquared::new(7.0).unwrap().sf(chi) > 0.01, "chi2 = {chi}");

        // Uniform on S²: each coordinate is Uniform(−1, 1).
        let zs: Vec<f64> = (0..20_000)
            .map(|_| sqdir_sample(&SqDirichletParams::uniform(3), &mut r).coords()[2])
            .collect();
        let (_, p) = ks_one_sample(&zs, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn polar_sqdir_concentrates() {
        let mut r = rng(4);
        let p = SqDirichletParams::new(vec![0.1, 0.1, 10.0]).unwrap();
        let n = 10_000;
        let near = (0..n)
            .filter(|_| sqdir_sample(&p, &mut r).coords()[2].abs() > 0.9)
            .count();
        assert!(near as f64 / n as f64 > 0.95);
    }

    #[test]
    fn uniformity_parameterizations() {
        let a = jointly_uniform_alpha(3).unwrap();
        assert_eq!(a[0].alpha(), &[0.5, 1.5]);
        assert_eq!(a[1].alpha(), &[0.5, 0.5, 1.0]);
        assert_eq!(jointly_uniform_alpha(2).unwrap()[0].alpha(), &[0.5, 1.0]);

        assert!(matches!(
            marginally_uniform_alpha(3),
            Err(Error::NonPositiveAlpha { row: 2, value, .. }) if value == -0.5
        ));
        assert_eq!(marginally_uniform_row_alpha(3, 3).unwrap().alpha()[2], 1.0);
        assert_eq!(marginally_uniform_row_alpha(5, 4).unwrap().alpha()[3], 4.5);
    }

    #[test]
    fn vmf_bingham_uvgauss_examples() {
        let n3 = SpherePoint::pole(3, 1.0);
        let mut r = rng(5);
        let l = random_unit(3, &mut r);
        assert_eq!(
            vmf_logpdf(&l, &VmfParams::polar(3, 0.0).unwrap()).unwrap(),
            0.0
        );
        assert_eq!(
            vmf_logpdf(&n3, &VmfParams::polar(3, 10.0).unwrap()).unwrap(),
            10.0
        );
        let b = BinghamParams { zeta: 100.0 };
        assert_eq!(bingham_logpdf(&n3, &b), 100.0);
        assert_eq!(bingham_logpdf(&n3.negated(), &b), 100.0);
        assert_eq!(bingham_logpdf(&l, &BinghamParams { zeta: 0.0 }), 0.0);

        let iso = UnitVecGaussParams::new(vec![0.0; 3], DMatrix::identity(3, 3)).unwrap();
        assert!((uvgauss_logpdf(&l, &iso).unwrap() + 0.5).abs() < 1e-15);
        let at_pole =
            UnitVecGaussParams::new(n3.coords().to_vec(), DMatrix::identity(3, 3)).unwrap();
        assert_eq!(uvgauss_logpdf(&n3, &at_pole).unwrap(), 0.0);

        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let mean = vec![0.1, -0.2, 0.3];
        let p = UnitVecGaussParams::new(mean.clone(), cov.clone()).unwrap();
        let d = DVector::from_column_slice(l.coords()) - DVector::from_vec(mean);
        let oracle = -0.5 * (d.transpose() * cov.try_inverse().unwrap() * &d)[(0, 0)];
        assert!((uvgauss_logpdf(&l, &p).unwrap() - oracle).abs() < 1e-12);
        assert!(matches!(
            UnitVecGaussParams::new(vec![0.0; 2], -DMatrix::<f64>::identity(2, 2)),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn uniform_priors_agree() {
        let mut r = rng(6);
        let s = SqDirichletParams::uniform(4);
        let v = VmfParams::polar(4, 0.0).unwrap();
        let b = BinghamParams { zeta: 0.0 };
        for _ in 0..100 {
            let l = random_unit(4, &mut r);
            let a = sqdir_logpdf(&l, &s).unwrap();
            assert!((a - vmf_logpdf(&l, &v).unwrap()).abs() < 1e-12);
            assert!((a - bingham_logpdf(&l, &b)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn sqdir_draws_square_to_simplex(seed in 0u64..2000, d in 1usize..6) {
            let mut r = rng(seed);
            let alpha: Vec<f64> = (0..d).map(|_| 0.05 + 5.0 * r.random::<f64>()).collect();
            let l = sqdir_sample(&SqDirichletParams::new(alpha).unwrap(), &mut r);
            let sq: Vec<f64> = l.coords().iter().map(|x| x * x).collect();
            prop_assert!((sq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(sq.iter().all(|x| *x >= 0.0 && *x <= 1.0));
        }

        #[test]
        fn bingham_is_antipodal(seed in 0u64..1000, zeta in -50.0f64..50.0) {
            let mut r = rng(seed);
            let l = random_unit(3, &mut r);
            let p = BinghamParams { zeta };
            prop_assert_eq!(bingham_logpdf(&l, &p), bingham_logpdf(&l.negated(), &p));
        }
    }
}
