//! Symbol-level BER simulation of the downlink with mismatched precoding.
//!
//! Transmit `x = α̂ B̂ Γ^{1/2} s` with unit-energy Gray-coded square QAM, add
//! circular noise at each user and slice with the nominal amplitude
//! `α̂ γ_k^{1/2}`. Interference comes only from `H B̂` departing from `I`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::rng::{complex_normal, stream};
use crate::{CMatrix, Complex64, Error, Result};

const BATCH: usize = 1 << 14;

/// Gray-coded square QAM with unit average energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareQam {
    levels: usize,
    spacing: f64,
}

impl SquareQam {
    pub fn new(order: usize) -> Result<Self> {
        let levels = (order as f64).sqrt().round() as usize;
        if order < 4 || levels * levels != order || !levels.is_power_of_two() {
            return Err(Error::Config(format!("{order} is not a square QAM order")));
        }
        // per-dimension PAM energy (L²−1)d²/3 must be 1/2
        let spacing = (1.5 / (order as f64 - 1.0)).sqrt();
        Ok(SquareQam { levels, spacing })
    }

    pub fn order(&self) -> usize {
        self.levels * self.levels
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.order().trailing_zeros()
    }

    fn level(&self, i: usize) -> f64 {
        (2.0 * i as f64 - (self.levels as f64 - 1.0)) * self.spacing
    }

    fn slice(&self, r: f64) -> usize {
        let i = ((r / self.spacing + self.levels as f64 - 1.0) / 2.0).round();
        i.clamp(0.0, self.levels as f64 - 1.0) as usize
    }

    /// Modulates per-dimension level indices.
    pub fn symbol(&self, i: usize, q: usize) -> Complex64 {
        Complex64::new(self.level(i), self.level(q))
    }

    /// Bit errors between a sent index pair and the decision on `r`.
    pub fn bit_errors(&self, i: usize, q: usize, r: Complex64) -> u32 {
        let gray = |x: usize| x ^ (x >> 1);
        (gray(i) ^ gray(self.slice(r.re))).count_ones() + (gray(q) ^ gray(self.slice(r.im))).count_ones()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerEstimate {
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bit_errors: u64,
    pub bits: u64,
}

impl BerEstimate {
    fn new(errors: u64, bits: u64) -> Self {
        let (lo, hi) = wilson_interval(errors, bits, 1.959_963_984_540_054);
        BerEstimate {
            ber: errors as f64 / bits as f64,
            ci_low: lo,
            ci_high: hi,
            bit_errors: errors,
            bits,
        }
    }

    /// Binomial standard error at the empirical rate.
    pub fn std_error(&self) -> f64 {
        (self.ber * (1.0 - self.ber) / self.bits as f64).sqrt()
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// A downlink whose precoder may have been designed from an estimate.
#[derive(Debug, Clone, Copy)]
pub struct Downlink<'a> {
    /// True channel.
    pub h: &'a CMatrix,
    pub b_hat: &'a CMatrix,
    pub alpha_hat_sq: f64,
    pub gamma: &'a [f64],
    pub noise_power: f64,
}

/// Simulates `symbols` channel uses per user.
pub fn mc_ber(link: &Downlink<'_>, order: usize, symbols: usize, seed: u64) -> Result<Vec<BerEstimate>> {
    let Downlink {
        h,
        b_hat,
        alpha_hat_sq,
        gamma,
        noise_power,
    } = *link;
    let qam = SquareQam::new(order)?;
    let k = h.nrows();
    if b_hat.shape() != (h.ncols(), k) || gamma.len() != k {
        return Err(Error::Dimension("mc_ber inputs disagree in size".into()));
    }
    let alpha_hat = alpha_hat_sq.sqrt();
    let mut eff = h * b_hat * Complex64::from(alpha_hat);
    for (c, g) in gamma.iter().enumerate() {
        eff.column_mut(c).scale_mut(g.sqrt());
    }
    let nominal: Vec<f64> = gamma.iter().map(|g| alpha_hat * g.sqrt()).collect();
    let batches = symbols.div_ceil(BATCH);
    let errors = (0..batches)
        .into_par_iter()
        .map(|b| {
            let n = BATCH.min(symbols - b * BATCH);
            let mut rng = stream(seed, &[b as u64]);
            let mut errs = vec![0u64; k];
            let mut idx = vec![(0usize, 0usize); k];
            let mut s = vec![Complex64::default(); k];
            for _ in 0..n {
                for u in 0..k {
                    idx[u] = (rng.random_range(0..qam.levels), rng.random_range(0..qam.levels));
                    s[u] = qam.symbol(idx[u].0, idx[u].1);
                }
                for u in 0..k {
                    let mut y = complex_normal(&mut rng, noise_power);
                    for (c, su) in s.iter().enumerate() {
                        y += eff[(u, c)] * su;
                    }
                    errs[u] += qam.bit_errors(idx[u].0, idx[u].1, y / nominal[u]) as u64;
                }
            }
            errs
        })
        .reduce(
            || vec![0u64; k],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let bits = symbols as u64 * qam.bits_per_symbol() as u64;
    Ok(errors.into_iter().map(|e| BerEstimate::new(e, bits)).collect())
}
