//! Zero-forcing precoder and power normalization.
//!
//! `B = Hᴴ(HHᴴ)⁻¹`, `α² = P / Tr{(HHᴴ)⁻¹Γ}`. The Gram inverse is applied
//! through a Cholesky factorization.

use nalgebra::DVector;
use serde::Serialize;

use crate::linalg::{checked_cholesky, gram, hermitian_eigenvalues};
use crate::{CMatrix, Complex64, Error, Result};

#[derive(Debug, Clone)]
pub struct PrecoderSolution {
    /// `M × K` ZF precoder.
    pub b: CMatrix,
    /// Diagonal of Γ.
    pub gamma: Vec<f64>,
    pub alpha_sq: f64,
    /// `Tr{(HHᴴ)⁻¹Γ}`.
    pub j: f64,
    /// `α² γ_k`.
    pub per_user_rx_power: Vec<f64>,
}

impl PrecoderSolution {
    /// `‖b_l‖²` for each column.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        self.b.column_iter().map(|c| c.norm_squared()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Eigenvalues of `HHᴴ`, descending.
    pub eigenvalues: Vec<f64>,
    /// Singular values of `Γ^{-1/2}H`, descending.
    pub singular_values: Vec<f64>,
    /// `γ_l ‖b_l‖²`.
    pub column_norm_products: Vec<f64>,
}

fn check_gamma(k: usize, m: usize, gamma: &[f64]) -> Result<()> {
    if k > m {
        return Err(Error::Dimension(format!("{k} users exceed {m} antennas")));
    }
    if gamma.len() != k {
        return Err(Error::Dimension(format!("Γ has {} entries for {k} users", gamma.len())));
    }
    if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::Config("Γ entries must be positive".into()));
    }
    Ok(())
}

/// `(HHᴴ)⁻¹` through a checked Cholesky factorization.
pub fn gram_inverse(h: &CMatrix) -> Result<CMatrix> {
    Ok(checked_cholesky(&gram(h))?.inverse())
}

/// `Tr{(HHᴴ)⁻¹Γ}` given the Gram inverse.
pub fn trace_weighted(e_inv: &CMatrix, gamma: &[f64]) -> f64 {
    gamma.iter().enumerate().map(|(k, g)| e_inv[(k, k)].re * g).sum()
}

pub fn zero_forcing(h: &CMatrix, gamma: &[f64], p: f64) -> Result<PrecoderSolution> {
    let (k, m) = h.shape();
    check_gamma(k, m, gamma)?;
    let chol = checked_cholesky(&gram(h))?;
    // B = Hᴴ E⁻¹ = (E⁻¹ H)ᴴ since E is Hermitian
    let b = chol.solve(h).adjoint();
    let e_inv = chol.inverse();
    let j = trace_weighted(&e_inv, gamma);
    let alpha_sq = p / j;
    Ok(PrecoderSolution {
        b,
        gamma: gamma.to_vec(),
        alpha_sq,
        j,
        per_user_rx_power: gamma.iter().map(|g| alpha_sq * g).collect(),
    })
}

pub fn spectral_report(h: &CMatrix, gamma: &[f64]) -> Result<SpectralReport> {
    let (k, m) = h.shape();
    check_gamma(k, m, gamma)?;
    let e_inv = gram_inverse(h)?;
    let eigenvalues: Vec<f64> = hermitian_eigenvalues(&gram(h))
        .into_iter()
        .map(|x| x.max(0.0))
        .collect();
    let scale = DVector::from_iterator(k, gamma.iter().map(|g| Complex64::from(g.sqrt().recip())));
    let scaled = CMatrix::from_diagonal(&scale) * h;
    let singular_values = hermitian_eigenvalues(&gram(&scaled))
        .into_iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    let column_norm_products = (0..k).map(|l| gamma[l] * e_inv[(l, l)].re).collect();
    Ok(SpectralReport {
        eigenvalues,
        singular_values,
        column_norm_products,
    })
}
