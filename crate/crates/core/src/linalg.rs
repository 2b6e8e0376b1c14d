//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

pub fn cholesky(m: &DMatrix<f64>) -> Result<Chol> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::pd(""))
}

/// log |A| from a Cholesky factor of A.
pub fn chol_logdet(ch: &Chol) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// tr(Zᵀ A⁻¹ Z) from a Cholesky factor of A.
pub fn chol_trace_quad(ch: &Chol, z: &DMatrix<f64>) -> f64 {
    let w = ch
        .l()
        .solve_lower_triangular(z)
        .expect("non-singular factor");
    w.norm_squared()
}

/// Inverse of a lower-triangular matrix with non-zero diagonal.
pub fn lower_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    for i in 0..n {
        if l[(i, i)] == 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
    }
    Ok(l.solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("checked diagonal"))
}

/// Inverse of an upper-triangular matrix with non-zero diagonal.
pub fn upper_inverse(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = u.nrows();
    for i in 0..n {
        if u[(i, i)] == 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
    }
    Ok(u.solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("checked diagonal"))
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).amax()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.nrows() == m.ncols()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
