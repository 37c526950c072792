//! Simulation library for RIS-assisted zero-forcing multiuser MISO downlinks.
//!
//! The pipeline runs in the order of the modules below:
//!
//! - [`scenario`]: deployment geometry, radio constants, presets and config files.
//! - [`channel`]: deterministic synthesis of the direct and cascaded channels.
//! - [`precoder`]: zero-forcing precoder, power normalization and spectral diagnostics.
//! - [`optimizer`]: closed-form phase gradient and Polak–Ribière conjugate gradient.
//! - [`estimation`]: uplink least-squares channel estimation and its error model.
//! - [`performance`]: interference statistics, BER bounds, Monte Carlo BER and rates.
//! - [`experiments`]: coverage sweeps, outage tables and the multi-user study.
//! - [`cli`]: the batch command layer shared by the `riszf` binary.

pub mod channel;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod linalg;
pub mod optimizer;
pub mod performance;
pub mod precoder;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Dense complex matrix used throughout the crate.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;

/// Propagation speed used for wavelengths and phases. The deployment tables
/// quote λ = 0.01 m at 30 GHz, which pins this to 3·10⁸ m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Converts a dB (or dBi) quantity to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Converts a linear ratio to dB.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
