//! Geometry of spheres and sphere products.
//!
//! A point on `S^{d-1}(r)` is stored in ambient coordinates. Tangent
//! vectors are ambient vectors orthogonal to their base point. The rows of a
//! correlation Cholesky factor are unit vectors, row `i` living on
//! `S^{i-1}` with its last coordinate bounded away from zero.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, dot, norm};

/// Relative tolerance for `‖q‖ = r` and tangency.
pub const NORM_TOL: f64 = 1e-9;
/// A row is rejected when its pole coordinate falls to this magnitude.
pub const EQUATOR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SpherePoint {
    coords: Vec<f64>,
    radius: f64,
}

impl SpherePoint {
    pub fn new(coords: Vec<f64>, radius: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidSpherePoint(
                "dimension must be at least 1".into(),
            ));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSpherePoint(format!(
                "radius {radius} is not positive"
            )));
        }
        let n = norm(&coords);
        if !((n - radius).abs() <= NORM_TOL * radius) {
            return Err(Error::InvalidSpherePoint(format!(
                "norm {n} differs from radius {radius}"
            )));
        }
        Ok(Self { coords, radius })
    }

    /// Unit-sphere point.
    pub fn unit(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords, 1.0)
    }

    /// Scales `coords` onto the sphere of the given radius.
    pub fn from_direction(mut coords: Vec<f64>, radius: f64) -> Result<Self> {
        let n = norm(&coords);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidSpherePoint(
                "zero or non-finite direction".into(),
            ));
        }
        coords.iter_mut().for_each(|x| *x *= radius / n);
        Self::new(coords, radius)
    }

    /// The north pole `(0, …, 0, r)`.
    pub fn pole(dim: usize, radius: f64) -> Self {
        assert!(dim >= 1 && radius > 0.0);
        let mut coords = vec![0.0; dim];
        coords[dim - 1] = radius;
        Self { coords, radius }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn negated(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|x| -x).collect(),
            radius: self.radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    base: SpherePoint,
    vec: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: SpherePoint, vec: Vec<f64>) -> Result<Self> {
        check_dim(base.dim(), vec.len())?;
        let ip = dot(base.coords(), &vec);
        if ip.abs() > NORM_TOL * base.radius() * norm(&vec).max(1.0) {
            return Err(Error::InvalidSpherePoint(format!(
                "vector is not tangent: <q, v> = {ip}"
            )));
        }
        Ok(Self { base, vec })
    }

    pub fn zero(base: SpherePoint) -> Self {
        let d = base.dim();
        Self {
            base,
            vec: vec![0.0; d],
        }
    }

    pub fn base(&self) -> &SpherePoint {
        &self.base
    }

    pub fn vec(&self) -> &[f64] {
        &self.vec
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vec)
    }

    pub fn negated(&self) -> Self {
        Self {
            base: self.base.clone(),
            vec: self.vec.iter().map(|x| -x).collect(),
        }
    }
}

/// `g ← (I − r⁻² q qᵀ) g`.
pub(crate) fn project_in_place(q: &[f64], radius: f64, g: &mut [f64]) {
    let c = dot(q, g) / (radius * radius);
    g.iter_mut().zip(q).for_each(|(gk, qk)| *gk -= c * qk);
}

/// Follows the great circle through `(q, v)` for time `h`, in place.
pub(crate) fn rotate_in_place(q: &mut [f64], v: &mut [f64], radius: f64, h: f64) {
    let speed = norm(v);
    if speed == 0.0 {
        return;
    }
    let angle = speed * h / radius;
    let (s, c) = angle.sin_cos();
    for (qk, vk) in q.iter_mut().zip(v.iter_mut()) {
        let q0 = *qk;
        let v0 = *vk;
        *qk = q0 * c + radius * v0 / speed * s;
        *vk = -q0 * speed / radius * s + v0 * c;
    }
}

/// Projects an ambient vector onto the tangent space at `q`.
pub fn project_tangent(q: &SpherePoint, g: &[f64]) -> Result<TangentVector> {
    check_dim(q.dim(), g.len())?;
    let mut v = g.to_vec();
    project_in_place(q.coords(), q.radius(), &mut v);
    Ok(TangentVector {
        base: q.clone(),
        vec: v,
    })
}

/// Geodesic flow on the sphere for time `h`: the point moves along the great
/// circle with angular speed `‖v‖/r` and the velocity is transported with it.
pub fn geodesic_rotate(q: &SpherePoint, v: &TangentVector, h: f64) -> (SpherePoint, TangentVector) {
    let mut qc = q.coords.clone();
    let mut vc = v.vec.clone();
    rotate_in_place(&mut qc, &mut vc, q.radius, h);
    let base = SpherePoint {
        coords: qc,
        radius: q.radius,
    };
    let tangent = TangentVector {
        base: base.clone(),
        vec: vc,
    };
    (base, tangent)
}

/// Lower-triangular factor with unit-norm rows: `P = L Lᵀ` is a correlation
/// matrix. Row `i` (0-based) has `i + 1` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrCholesky {
    rows: Vec<Vec<f64>>,
}

impl CorrCholesky {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("empty Cholesky factor".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            check_dim(i + 1, r.len())?;
            let n = norm(r);
            if (n - 1.0).abs() > NORM_TOL {
                return Err(Error::RowNotUnitNorm { row: i, norm: n });
            }
            if r[i].abs() <= EQUATOR_TOL {
                return Err(Error::ZeroDiagonal(i));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            rows: (0..dim)
                .map(|i| {
                    let mut r = vec![0.0; i + 1];
                    r[i] = 1.0;
                    r
                })
                .collect(),
        }
    }

    /// Builds the factor from a dense lower-triangular matrix.
    pub fn from_lower(l: &DMatrix<f64>) -> Result<Self> {
        let d = l.nrows();
        Self::new(
            (0..d)
                .map(|i| (0..=i).map(|j| l[(i, j)]).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn to_lower(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| if j <= i { self.rows[i][j] } else { 0.0 })
    }

    /// `ρ_ij = ⟨l_i, l_j⟩`.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let k = i.min(j) + 1;
        dot(&self.rows[i][..k], &self.rows[j][..k])
    }

    /// Flips the sign of column `j` in every row that has it.
    pub fn flip_column(&mut self, j: usize) {
        for r in self.rows.iter_mut().skip(j) {
            r[j] = -r[j];
        }
    }
}

/// `P = L Lᵀ`.
pub fn rows_to_corr(l: &CorrCholesky) -> DMatrix<f64> {
    let d = l.dim();
    let mut p = DMatrix::identity(d, d);
    for i in 0..d {
        for j in 0..i {
            let r = l.correlation(i, j);
            p[(i, j)] = r;
            p[(j, i)] = r;
        }
        p[(i, i)] = dot(l.row(i), l.row(i));
    }
    p
}

/// Cholesky factor of a correlation matrix, positive diagonal.
pub fn corr_to_rows(p: &DMatrix<f64>) -> Result<CorrCholesky> {
    check_dim(p.nrows(), p.ncols())?;
    for i in 0..p.nrows() {
        if (p[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(Error::NotUnitDiagonal {
                index: i,
                value: p[(i, i)],
            });
        }
    }
    let l = linalg::cholesky(p)?.unpack();
    let d = l.nrows();
    // Renormalize away the ~1e-16 rounding in the unit diagonal.
    let rows = (0..d)
        .map(|i| {
            let r: Vec<f64> = (0..=i).map(|j| l[(i, j)]).collect();
            let n = norm(&r);
            r.into_iter().map(|x| x / n).collect()
        })
        .collect();
    CorrCholesky::new(rows)
}

/// `Σ = diag(σ) P diag(σ)` with `P = L Lᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovCholesky {
    scale: Vec<f64>,
    factor: CorrCholesky,
}

impl CovCholesky {
    pub fn new(scale: Vec<f64>, factor: CorrCholesky) -> Result<Self> {
        check_dim(factor.dim(), scale.len())?;
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "scale {s} is not positive"
            )));
        }
        Ok(Self { scale, factor })
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn factor(&self) -> &CorrCholesky {
        &self.factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let p = rows_to_corr(&self.factor);
        DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
            self.scale[i] * p[(i, j)] * self.scale[j]
        })
    }
}

/// Upper-triangular `U` with `Σ = U Uᵀ`, via the Cholesky factor of the
/// index-reversed matrix.
pub fn reversed_cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(sigma.nrows(), sigma.ncols())?;
    let d = sigma.nrows();
    let rev = DMatrix::from_fn(d, d, |i, j| sigma[(d - 1 - i, d - 1 - j)]);
    let l = linalg::cholesky(&rev)?.unpack();
    Ok(DMatrix::from_fn(d, d, |i, j| l[(d - 1 - i, d - 1 - j)]))
}

/// `log |∂ vech Σ / ∂ vech Uᵀ| = D log 2 + Σ_i i log|u_ii|` (1-based `i`).
pub fn logdet_jacobian_sigma_to_u(u: &DMatrix<f64>) -> Result<f64> {
    let d = u.nrows();
    let mut s = d as f64 * std::f64::consts::LN_2;
    for i in 0..d {
        let x = u[(i, i)];
        if x == 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
        s += (i + 1) as f64 * x.abs().ln();
    }
    Ok(s)
}

/// `log |∂ vech L / ∂ vech P| = −D log 2 + Σ_i (i − (D+1)) log|l_ii|`.
pub fn logdet_jacobian_l_to_p(l: &DMatrix<f64>) -> Result<f64> {
    let d = l.nrows();
    let mut s = -(d as f64) * std::f64::consts::LN_2;
    for i in 0..d {
        let x = l[(i, i)];
        if x == 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
        s += ((i + 1) as f64 - (d + 1) as f64) * x.abs().ln();
    }
    Ok(s)
}

/// Row-major half-vectorization of the lower triangle.
pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vech`]; the upper triangle is filled symmetrically when
/// `symmetric` is set and with zeros otherwise.
pub fn unvech(v: &[f64], d: usize, symmetric: bool) -> Result<DMatrix<f64>> {
    check_dim(d * (d + 1) / 2, v.len())?;
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            m[(i, j)] = v[k];
            if symmetric {
                m[(j, i)] = v[k];
            }
            k += 1;
        }
    }
    Ok(m)
}

/// A point on a product of spheres, stored contiguously.
///
/// Each row carries its radius and optionally the index of a "pole"
/// coordinate that must stay off the equator.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereProduct {
    coords: Vec<f64>,
    offsets: Vec<usize>,
    radii: Vec<f64>,
    poles: Vec<Option<usize>>,
}

impl Default for SphereProduct {
    fn default() -> Self {
        Self {
            coords: Vec::new(),
            offsets: vec![0],
            radii: Vec::new(),
            poles: Vec::new(),
        }
    }
}

impl SphereProduct {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<SpherePoint>, poles: Vec<Option<usize>>) -> Result<Self> {
        check_dim(points.len(), poles.len())?;
        let mut out = Self::new();
        for (p, pole) in points.into_iter().zip(poles) {
            out.push(p, pole)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, p: SpherePoint, pole: Option<usize>) -> Result<()> {
        if let Some(k) = pole {
            if k >= p.dim() {
                return Err(Error::InvalidParameter(format!(
                    "pole index {k} out of range"
                )));
            }
        }
        self.radii.push(p.radius);
        self.coords.extend_from_slice(&p.coords);
        self.offsets.push(self.coords.len());
        self.poles.push(pole);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.radii.len()
    }

    pub fn total_dim(&self) -> usize {
        self.coords.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.coords[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.coords[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn row_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn radius(&self, k: usize) -> f64 {
        self.radii[k]
    }

    pub fn pole(&self, k: usize) -> Option<usize> {
        self.poles[k]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn point(&self, k: usize) -> SpherePoint {
        SpherePoint {
            coords: self.row(k).to_vec(),
            radius: self.radii[k],
        }
    }

    pub fn to_points(&self) -> Vec<SpherePoint> {
        (0..self.n_rows()).map(|k| self.point(k)).collect()
    }

    /// Sum over rows of `⟨a_k, b_k⟩`.
    pub fn inner(&self, other: &SphereProduct) -> f64 {
        dot(&self.coords, &other.coords)
    }

    pub fn radius_sq_sum(&self) -> f64 {
        self.radii.iter().map(|r| r * r).sum()
    }

    /// True when some row's pole coordinate is on (or within
    /// [`EQUATOR_TOL`] of) the equator.
    pub fn touches_equator(&self) -> bool {
        (0..self.n_rows()).any(|k| match self.poles[k] {
            Some(p) => self.row(k)[p].abs() <= EQUATOR_TOL * self.radii[k],
            None => false,
        })
    }

    /// Largest relative deviation `|‖q_k‖ − r_k| / r_k` over rows.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.n_rows())
            .map(|k| (norm(self.row(k)) - self.radii[k]).abs() / self.radii[k])
            .fold(0.0, f64::max)
    }

    /// Projects a flat ambient vector onto the product tangent space.
    pub fn project(&self, g: &mut [f64]) {
        debug_assert_eq!(g.len(), self.coords.len());
        for k in 0..self.n_rows() {
            let r = self.row_range(k);
            project_in_place(&self.coords[r.clone()], self.radii[k], &mut g[r]);
        }
    }

    /// `Σ_k ‖P(q_k) g_k‖²`.
    pub fn projected_norm_sq(&self, g: &[f64]) -> f64 {
        (0..self.n_rows())
            .map(|k| {
                let r = self.row_range(k);
                let q = &self.coords[r.clone()];
                let gk = &g[r];
                let rad2 = self.radii[k] * self.radii[k];
                dot(gk, gk) - dot(q, gk).powi(2) / rad2
            })
            .sum()
    }

    /// Geodesic flow on every row, then renormalization of each row to its
    /// radius. Returns the largest relative norm deviation seen before the
    /// renormalization.
    pub(crate) fn rotate(&mut self, v: &mut [f64], h: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.n_rows() {
            let r = self.row_range(k);
            let rad = self.radii[k];
            let q = &mut self.coords[r.clone()];
            let vk = &mut v[r];
            rotate_in_place(q, vk, rad, h);
            let n = norm(q);
            worst = worst.max((n - rad).abs() / rad);
            q.iter_mut().for_each(|x| *x *= rad / n);
            project_in_place(q, rad, vk);
        }
        worst
    }
}
