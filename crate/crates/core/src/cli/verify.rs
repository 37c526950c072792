//! Fast oracle suite behind `riszf verify`.

use serde::Serialize;

use crate::channel::ChannelSet;
use crate::estimation::{cascade_block, design_pilots, simulate_uplink_ls, PilotFamily};
use crate::linalg::{gram, hermitian_eigenvalues};
use crate::optimizer::{verify_gradient, RisState};
use crate::performance::{ber_bound_imperfect, q_function, qam_ber_exponential_bound};
use crate::precoder::zero_forcing;
use crate::rng::{derive_seed, stream};
use crate::{CMatrix, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn below(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            passed: value.is_finite() && value <= tolerance,
            value,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn gradient_check(seed: u64) -> Result<Check> {
    let mut worst = 0.0f64;
    for s in 0..10 {
        let chs = ChannelSet::random_iid(derive_seed(seed, &[1, s]), 2, 4, 8, 1.0);
        let ris = RisState::random(&mut stream(seed, &[2, s]), 8);
        worst = worst.max(verify_gradient(&chs, &ris, &[1.0, 0.5], 1e-6)?);
    }
    Ok(Check::below("gradient_vs_central_differences", worst, 1e-6))
}

fn power_bound_check(seed: u64) -> Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    for s in 0..200 {
        let chs = ChannelSet::random_iid(derive_seed(seed, &[3, s]), 3, 4, 0, 1.0);
        let gamma = [1.0, 0.5 + (s % 7) as f64 * 0.2, 2.0];
        let sol = zero_forcing(&chs.h_bu, &gamma, 1.0)?;
        let lmin = *hermitian_eigenvalues(&gram(&chs.h_bu)).last().unwrap_or(&0.0);
        let gmin = gamma.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max(sol.alpha_sq / (lmin / gmin) - 1.0);
    }
    Ok(Check::below("power_normalization_bound", worst, 1e-9))
}

fn ls_checks(seed: u64) -> Result<[Check; 2]> {
    let (m, nr, t) = (2, 3, 4);
    let chs = ChannelSet::random_iid(derive_seed(seed, &[4]), 1, m, nr, 1.0);
    let plan = design_pilots(nr, t, PilotFamily::Dft, 1, 0.5)?;
    let exact = simulate_uplink_ls(&chs, &plan, 0.0, seed)?;
    let v = cascade_block(&chs, 0);
    let exactness = (&exact.v_hat[0] - &v).norm() / v.norm();

    let noise = 0.2;
    let draws = 4000u64;
    let mut acc = 0.0;
    for d in 0..draws {
        let out = simulate_uplink_ls(&chs, &plan, noise, derive_seed(seed, &[5, d]))?;
        let err: CMatrix = &out.v_hat[0] - &v;
        acc += err.norm_squared();
    }
    let empirical = acc / (draws as f64 * (m * (nr + 1)) as f64);
    let predicted = plan.entry_variance(0, noise);
    Ok([
        Check::below("ls_zero_noise_exactness", exactness, 1e-12),
        Check::below("ls_error_variance_relative", (empirical / predicted - 1.0).abs(), 0.05),
    ])
}

fn ber_checks() -> Result<[Check; 2]> {
    let mut worst = 0.0f64;
    for i in 0..20 {
        let z = 0.25 * (i + 1) as f64;
        // with no estimation error and A = 4, Z = 3·SNR/(A − 1) = SNR
        let a = ber_bound_imperfect(z, 0.0, 4)?;
        let b = qam_ber_exponential_bound(z, 4)?;
        worst = worst.max((a - b).abs() / b);
    }
    let q3 = (q_function(3.0) - 1.349_898_031_630_094_6e-3).abs() / 1.349_898_031_630_094_6e-3;
    Ok([
        Check::below("ber_bound_reduces_to_exponential_bound", worst, 1e-12),
        Check::below("q_function_reference", q3, 1e-12),
    ])
}

pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let mut checks = vec![gradient_check(seed)?, power_bound_check(seed)?];
    checks.extend(ls_checks(seed)?);
    checks.extend(ber_checks()?);
    Ok(VerifyReport { seed, checks })
}
