//! Link-level metrics under imperfect CSI.
//!
//! With `ε = E B` the received sample at user `k` is, to first order,
//! `(α̂ − α ε_kk) γ_k^{1/2} s_k − α Σ_{l≠k} ε_kl γ_l^{1/2} s_l + n_k`.
//! LS errors are white, which gives
//!
//! ```text
//! var(ε_kl) = (1 + N_r) ‖b_l‖² σ²_UL / (P_k T_k)
//! σ_k²      = α² (1 + N_r) σ²_UL Σ_{l≠k} γ_l ‖b_l‖² / (P_k T_k) + σ²
//! Z_k       = 3/(A−1) · α̂² γ_k / σ_k²
//! ```
//!
//! BER bound (amplitude error averaged in closed form, Q bounded by
//! `¼e^{−x²} + ¼e^{−x²/2}`):
//!
//! ```text
//! P_e ≤ (√A−1)/(√A log₂A) · [ √2/√(2+σ_ε²Z) · e^{−Z/(2+σ_ε²Z)}
//!                             +  1/√(1+σ_ε²Z) · e^{−Z/(1+σ_ε²Z)} ]
//! ```
//!
//! The published form carries an extra `√2` on the second term, which breaks
//! agreement with the perfect-CSI bound at `σ_ε² = 0`; this form restores it.

mod montecarlo;
mod quadrature;

pub use montecarlo::{mc_ber, wilson_interval, BerEstimate, Downlink, SquareQam};
pub use quadrature::{complex_gaussian_mean, gauss_hermite};

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::estimation::PilotPlan;
use crate::precoder::PrecoderSolution;
use crate::{Error, Result};

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn check_order(order: usize) -> Result<f64> {
    SquareQam::new(order).map(|_| order as f64)
}

/// Nearest-neighbour BER approximation of Gray-coded square QAM.
pub fn qam_ber(snr: f64, order: usize) -> Result<f64> {
    let a = check_order(order)?;
    Ok(4.0 / a.log2() * (1.0 - 1.0 / a.sqrt()) * q_function((3.0 * snr.max(0.0) / (a - 1.0)).sqrt()))
}

/// The QAM approximation with `Q` replaced by its two-exponential bound.
pub fn qam_ber_exponential_bound(snr: f64, order: usize) -> Result<f64> {
    let a = check_order(order)?;
    let x2 = 3.0 * snr.max(0.0) / (a - 1.0);
    Ok(4.0 / a.log2() * (1.0 - 1.0 / a.sqrt()) * 0.25 * ((-x2).exp() + (-x2 / 2.0).exp()))
}

/// Closed-form bound on the BER averaged over the amplitude error.
pub fn ber_bound_imperfect(z: f64, sigma_eps_sq: f64, order: usize) -> Result<f64> {
    let a = check_order(order)?;
    let z = z.max(0.0);
    let s = sigma_eps_sq.max(0.0) * z;
    let lead = (a.sqrt() - 1.0) / (a.sqrt() * a.log2());
    let t1 = std::f64::consts::SQRT_2 / (2.0 + s).sqrt() * (-z / (2.0 + s)).exp();
    let t2 = 1.0 / (1.0 + s).sqrt() * (-z / (1.0 + s)).exp();
    Ok(lead * (t1 + t2))
}

/// Expected QAM BER over `ε_kk ~ CN(0, σ_ε²)`, by Gauss–Hermite quadrature
/// of `P_b(Z_snr |1 − ε|²)`, where `snr` is the nominal SNR.
pub fn ber_quadrature(snr: f64, sigma_eps_sq: f64, order: usize, nodes: usize) -> Result<f64> {
    check_order(order)?;
    Ok(complex_gaussian_mean(sigma_eps_sq, nodes, |x, y| {
        let gain = (1.0 - x).powi(2) + y * y;
        qam_ber(snr * gain, order).unwrap_or(f64::NAN)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStatistics {
    /// `var(ε_kl)`, row `k`, column `l`.
    pub var_eps: Vec<Vec<f64>>,
    /// `var(ε_kk)`.
    pub sigma_eps_sq: Vec<f64>,
    /// MUI plus noise power.
    pub sigma_k_sq: Vec<f64>,
    pub alpha_sq: f64,
    pub alpha_hat_sq: f64,
    pub noise_dl: f64,
}

impl ErrorStatistics {
    /// `Z_k` for square `order`-QAM.
    pub fn z(&self, gamma: &[f64], order: usize) -> Vec<f64> {
        let a = order as f64;
        gamma
            .iter()
            .zip(&self.sigma_k_sq)
            .map(|(g, s)| 3.0 / (a - 1.0) * self.alpha_hat_sq * g / s)
            .collect()
    }
}

/// Closed-form error statistics. `sol` is designed on the true channel and
/// supplies `‖b_l‖²` and `α²`; `sol_hat` supplies `α̂²`.
pub fn error_statistics(
    sol: &PrecoderSolution,
    sol_hat: &PrecoderSolution,
    plan: &PilotPlan,
    noise_ul: f64,
    noise_dl: f64,
) -> Result<ErrorStatistics> {
    let energies: Vec<f64> = (0..plan.users())
        .map(|k| plan.per_user_power[k] * plan.per_user_t[k] as f64)
        .collect();
    error_statistics_for_energies(sol, sol_hat, plan.elements(), &energies, noise_ul, noise_dl)
}

/// As [`error_statistics`], with the pilot plan reduced to the per-user
/// energies `P_l T_l`.
pub fn error_statistics_for_energies(
    sol: &PrecoderSolution,
    sol_hat: &PrecoderSolution,
    nr: usize,
    energies: &[f64],
    noise_ul: f64,
    noise_dl: f64,
) -> Result<ErrorStatistics> {
    let k = sol.gamma.len();
    if sol_hat.gamma.len() != k || energies.len() != k {
        return Err(Error::Dimension(format!(
            "statistics for {k} users with {} pilot energies",
            energies.len()
        )));
    }
    let norms = sol.column_norms_sq();
    // row k of E comes from user k's own pilots, so its energy sets the scale
    let var_eps: Vec<Vec<f64>> = (0..k)
        .map(|kk| {
            let scale = (1.0 + nr as f64) * noise_ul / energies[kk];
            norms.iter().map(|n| scale * n).collect()
        })
        .collect();
    let sigma_k_sq = (0..k)
        .map(|kk| {
            let mui: f64 = (0..k).filter(|&l| l != kk).map(|l| sol.gamma[l] * var_eps[kk][l]).sum();
            sol.alpha_sq * mui + noise_dl
        })
        .collect();
    Ok(ErrorStatistics {
        sigma_eps_sq: (0..k).map(|kk| var_eps[kk][kk]).collect(),
        var_eps,
        sigma_k_sq,
        alpha_sq: sol.alpha_sq,
        alpha_hat_sq: sol_hat.alpha_sq,
        noise_dl,
    })
}

/// How the per-user SNR entering `log₂(1 + SNR)` is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrForm {
    /// `α̂² γ_k / σ_k²`, the SNR that also drives the BER bound.
    #[default]
    Nominal,
    /// `P α² (1 + σ_ε²) / σ_k²` exactly as printed with the rate tables.
    Printed,
}

pub fn snr(stats: &ErrorStatistics, gamma: &[f64], p: f64, form: SnrForm) -> Vec<f64> {
    (0..gamma.len())
        .map(|k| match form {
            SnrForm::Nominal => stats.alpha_hat_sq * gamma[k] / stats.sigma_k_sq[k],
            SnrForm::Printed => p * stats.alpha_sq * (1.0 + stats.sigma_eps_sq[k]) / stats.sigma_k_sq[k],
        })
        .collect()
}

pub fn rate_from_snr(snr: f64) -> f64 {
    (1.0 + snr.max(0.0)).log2()
}

pub fn achievable_rate(stats: &ErrorStatistics, gamma: &[f64], p: f64, form: SnrForm) -> Vec<f64> {
    snr(stats, gamma, p, form).into_iter().map(rate_from_snr).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub order: usize,
    pub z: Vec<f64>,
    pub snr: Vec<f64>,
    pub ber_bound: Vec<f64>,
    pub rate: Vec<f64>,
}

pub fn link_report(stats: &ErrorStatistics, gamma: &[f64], p: f64, order: usize, form: SnrForm) -> Result<LinkReport> {
    let z = stats.z(gamma, order);
    let ber_bound = z
        .iter()
        .zip(&stats.sigma_eps_sq)
        .map(|(z, s)| ber_bound_imperfect(*z, *s, order))
        .collect::<Result<_>>()?;
    Ok(LinkReport {
        order,
        snr: snr(stats, gamma, p, form),
        rate: achievable_rate(stats, gamma, p, form),
        z,
        ber_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustAllocation {
    /// `P_l T_l` per user.
    pub energies: Vec<f64>,
    pub total: f64,
}

impl RobustAllocation {
    /// Keeps each user's slot count and sets its power to `energy / T_l`.
    pub fn apply(&self, plan: PilotPlan) -> Result<PilotPlan> {
        let t = plan.per_user_t.clone();
        let power = self.energies.iter().zip(&t).map(|(e, t)| e / *t as f64).collect();
        plan.with_allocation(power, t)
    }
}

/// Splits `e_p` in proportion to `γ_l ‖b_l‖²`.
pub fn robust_pilot_allocation(sol: &PrecoderSolution, e_p: f64) -> Result<RobustAllocation> {
    if !(e_p.is_finite() && e_p > 0.0) {
        return Err(Error::Config("pilot energy budget must be positive".into()));
    }
    let w: Vec<f64> = sol
        .column_norms_sq()
        .iter()
        .zip(&sol.gamma)
        .map(|(n, g)| n * g)
        .collect();
    let sum: f64 = w.iter().sum();
    Ok(RobustAllocation {
        energies: w.iter().map(|x| e_p * x / sum).collect(),
        total: e_p,
    })
}
