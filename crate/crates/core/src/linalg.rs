//! Small dense helpers on top of nalgebra: Hermitian inversion through
//! Cholesky, condition estimates, and column-major vec/unvec.

use nalgebra::{Cholesky, Dyn};
use num_complex::Complex64;

use crate::{CMatrix, CVector, Error, Result};

/// Condition number above which `HH^H` is treated as rank deficient.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Eigenvalues of a Hermitian matrix, sorted in descending order.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let eig = a.clone().symmetric_eigenvalues();
    let mut v: Vec<f64> = eig.iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

/// Cholesky factor of a Hermitian positive-definite Gram matrix, refusing
/// matrices whose condition number exceeds [`SINGULAR_CONDITION`].
pub fn checked_cholesky(gram: &CMatrix) -> Result<Cholesky<Complex64, Dyn>> {
    let eig = hermitian_eigenvalues(gram);
    let (max, min) = match (eig.first(), eig.last()) {
        (Some(&max), Some(&min)) => (max, min),
        _ => return Err(Error::Dimension("empty Gram matrix".into())),
    };
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularChannel { condition });
    }
    Cholesky::new(gram.clone()).ok_or(Error::SingularChannel { condition })
}

/// `HH^H` for a wide matrix.
pub fn gram(h: &CMatrix) -> CMatrix {
    h * h.adjoint()
}

/// Column-major vectorization.
pub fn vec(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`] for a `rows × cols` matrix.
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product. Test and verification code only; production paths
/// never materialize Kronecker structure.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
