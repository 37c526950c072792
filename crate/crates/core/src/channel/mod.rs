//! Deterministic channel synthesis.
//!
//! Every entry is `sqrt(gain) · exp(−j 2π d / λ)` for the element-to-element
//! distance `d`. The direct link uses [`pathloss`]; the RIS legs use the
//! rectangular-plate element gains
//!
//! ```text
//! g_br = (G_t / 4π) (a b / d²) cos²ψ_i
//! g_ru = (G_u / 4π) (a b / d²) sinc²(Y) sinc²(W)
//! W = (π a / λ) cos θ_s,   Y = (π a / λ) (sin ψ_i + sin θ_s sin ψ_s)
//! ```
//!
//! with unnormalized `sinc(x) = sin x / x`. Angles are resolved per RIS
//! element in the panel frame (see [`crate::scenario`]): `ψ` is the azimuth
//! from the panel normal in the plane spanned by the normal and the panel's
//! horizontal axis, and `θ_s` is the angle between the scattered direction
//! and the panel's vertical axis, so broadside scattering has `θ_s = π/2`.
//! `ψ_i` points from the element toward the BS array centre. The `sin ψ_i`
//! term of `Y` and the use of `a` in both `W` and `Y` follow the published
//! gain formulas as printed.
//!
//! Obstacle shadowing is applied to each of the three link types.

mod dump;
pub mod pathloss;

pub use dump::{parse_dump, write_dump};

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::scenario::{element_positions, shadow_loss, Frame, PathlossModel, ScenarioConfig, ShadowedPathloss};
use crate::{db_to_linear, CMatrix, CVector, Error, Result};

/// Channel pieces needed to evaluate `H(φ) = H_bu + unvec(H₁₂ e^{jφ})`.
///
/// Implemented by the true [`ChannelSet`] and by estimated channels, so the
/// optimizer runs unchanged on either.
pub trait Cascade {
    /// Direct channel, `K × M`.
    fn direct(&self) -> &CMatrix;
    /// Rank-one vectorization matrix, `(K·M) × N_r`.
    fn h12(&self) -> &CMatrix;

    fn users(&self) -> usize {
        self.direct().nrows()
    }

    fn antennas(&self) -> usize {
        self.direct().ncols()
    }

    fn elements(&self) -> usize {
        self.h12().ncols()
    }

    /// Compound channel from the vectorized form.
    fn compound(&self, varphi: &[Complex64]) -> CMatrix {
        let (k, m) = (self.users(), self.antennas());
        let mut h = self.direct().clone();
        if !varphi.is_empty() {
            let v = self.h12() * CVector::from_column_slice(varphi);
            for (dst, src) in h.iter_mut().zip(v.iter()) {
                *dst += src;
            }
        }
        debug_assert_eq!(h.shape(), (k, m));
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Direct BS→UE channel, `K × M`.
    pub h_bu: CMatrix,
    /// BS→RIS channel, `N_r × M`.
    pub h_br: CMatrix,
    /// RIS→UE channel, `K × N_r`.
    pub h_ru: CMatrix,
    /// Column `i` is `vec(h_ru,i h_br,iᵀ)`.
    pub h12: CMatrix,
}

impl Cascade for ChannelSet {
    fn direct(&self) -> &CMatrix {
        &self.h_bu
    }

    fn h12(&self) -> &CMatrix {
        &self.h12
    }
}

impl ChannelSet {
    /// Assembles a channel set from its three blocks and precomputes `H₁₂`.
    pub fn from_parts(h_bu: CMatrix, h_br: CMatrix, h_ru: CMatrix) -> Result<Self> {
        let (k, m) = h_bu.shape();
        if h_br.ncols() != m || h_ru.nrows() != k || h_ru.ncols() != h_br.nrows() {
            return Err(Error::Dimension(format!(
                "h_bu {:?}, h_br {:?}, h_ru {:?}",
                h_bu.shape(),
                h_br.shape(),
                h_ru.shape()
            )));
        }
        let h12 = build_h12(&h_br, &h_ru);
        Ok(ChannelSet { h_bu, h_br, h_ru, h12 })
    }

    /// Synthesizes all blocks for users at `ue_positions`.
    pub fn synthesize(config: &ScenarioConfig, ue_positions: &[[f64; 3]]) -> Result<Self> {
        let h_bu = direct_channel(config, ue_positions)?;
        let (h_br, h_ru) = ris_leg_channels(config, ue_positions)?;
        Self::from_parts(h_bu, h_br, h_ru)
    }

    /// I.i.d. circularly-symmetric Gaussian blocks: direct entries with
    /// variance `direct_var`, RIS legs with unit variance. Used by the
    /// oracle suites, not by the geometric model.
    pub fn random_iid(seed: u64, users: usize, antennas: usize, elements: usize, direct_var: f64) -> Self {
        let mut rng = crate::rng::stream(seed, &[]);
        let mut draw = |r, c, var| CMatrix::from_fn(r, c, |_, _| crate::rng::complex_normal(&mut rng, var));
        let h_bu = draw(users, antennas, direct_var);
        let h_br = draw(elements, antennas, 1.0);
        let h_ru = draw(users, elements, 1.0);
        Self::from_parts(h_bu, h_br, h_ru).expect("consistent shapes")
    }

    /// Copy of this set without the RIS (`N_r = 0`).
    pub fn without_ris(&self) -> Self {
        let (k, m) = self.h_bu.shape();
        ChannelSet {
            h_bu: self.h_bu.clone(),
            h_br: CMatrix::zeros(0, m),
            h_ru: CMatrix::zeros(k, 0),
            h12: CMatrix::zeros(k * m, 0),
        }
    }
}

/// `H₁₂` with column `i = vec(h_ru,i h_br,iᵀ)` in column-major order.
pub fn build_h12(h_br: &CMatrix, h_ru: &CMatrix) -> CMatrix {
    let (k, nr) = h_ru.shape();
    let m = h_br.ncols();
    CMatrix::from_fn(k * m, nr, |row, i| {
        let (kk, l) = (row % k, row / k);
        h_ru[(kk, i)] * h_br[(i, l)]
    })
}

/// `H_bu + H_ru diag(ϕ) H_br`.
pub fn assemble_compound(chs: &ChannelSet, varphi: &[Complex64]) -> CMatrix {
    let mut scaled = chs.h_ru.clone();
    for (mut col, &p) in scaled.column_iter_mut().zip(varphi) {
        col *= p;
    }
    &chs.h_bu + scaled * &chs.h_br
}

fn phase(d: f64, lambda: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * d / lambda)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (Vector3::from(a) - Vector3::from(b)).norm()
}

/// Direct-link pathloss in dB between a BS antenna and a user.
pub fn direct_pathloss_db(config: &ScenarioConfig, antenna: [f64; 3], ue: [f64; 3]) -> Result<f64> {
    let d3d = distance(antenna, ue);
    let d2d = (antenna[0] - ue[0]).hypot(antenna[1] - ue[1]);
    let shadow = shadow_loss(config, antenna, ue);
    let fc = config.carrier_frequency_hz;
    let (h_bs, h_ut) = (antenna[2], ue[2]);
    let pl = match config.pathloss {
        PathlossModel::FreeSpace => pathloss::free_space_db(d3d, fc),
        PathlossModel::Umi => {
            if d2d < pathloss::UMI_MIN_DISTANCE_M {
                return Err(Error::ModelRange {
                    distance_m: d2d,
                    min_m: pathloss::UMI_MIN_DISTANCE_M,
                });
            }
            if shadow > 0.0 && config.shadowed_pathloss == ShadowedPathloss::Nlos {
                pathloss::umi_nlos_db(d2d, d3d, fc, h_bs, h_ut)
            } else {
                pathloss::umi_los_db(d2d, d3d, fc, h_bs, h_ut)
            }
        }
    };
    Ok(pl + shadow)
}

/// `K × M` direct channel.
pub fn direct_channel(config: &ScenarioConfig, ue_positions: &[[f64; 3]]) -> Result<CMatrix> {
    let geom = element_positions(config)?;
    let lambda = config.wavelength_m();
    let gains = config.gain_tx() * config.gain_ue();
    let mut h = CMatrix::zeros(ue_positions.len(), config.bs_antennas);
    for (k, &ue) in ue_positions.iter().enumerate() {
        for (l, &ant) in geom.element_positions_bs.iter().enumerate() {
            let beta = gains * db_to_linear(-direct_pathloss_db(config, ant, ue)?);
            h[(k, l)] = beta.sqrt() * phase(distance(ant, ue), lambda);
        }
    }
    Ok(h)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Panel-frame angles of a direction `w` seen from a RIS element.
struct PanelAngles {
    /// `(w·n)² / ((w·n)² + (w·u)²)`
    cos2_azimuth: f64,
    /// `(w·u) / sqrt((w·n)² + (w·u)²)`
    sin_azimuth: f64,
    /// `(w·v) / |w|`
    cos_polar: f64,
    /// `(w·u) / |w|`, equal to `sin θ sin ψ`
    sin_polar_sin_azimuth: f64,
}

fn panel_angles(frame: &Frame, w: Vector3<f64>, what: &str) -> Result<PanelAngles> {
    let (wn, wu, wv) = (w.dot(&frame.normal), w.dot(&frame.horizontal), w.dot(&frame.vertical));
    let norm = w.norm();
    if wn.abs() <= 1e-12 * norm || norm == 0.0 {
        return Err(Error::Geometry(format!("{what} lies on the RIS plane")));
    }
    let horiz = wn.hypot(wu);
    Ok(PanelAngles {
        cos2_azimuth: (wn / horiz).powi(2),
        sin_azimuth: wu / horiz,
        cos_polar: wv / norm,
        sin_polar_sin_azimuth: wu / norm,
    })
}

/// Element-level power gain of the BS→RIS leg.
pub fn gain_br(gain_tx: f64, a: f64, b: f64, d: f64, cos2_psi_i: f64) -> f64 {
    gain_tx / (4.0 * std::f64::consts::PI) * (a * b / (d * d)) * cos2_psi_i
}

/// Element-level power gain of the RIS→UE leg.
#[allow(clippy::too_many_arguments)]
pub fn gain_ru(
    gain_ue: f64,
    a: f64,
    b: f64,
    d: f64,
    lambda: f64,
    sin_psi_i: f64,
    cos_theta_s: f64,
    sin_theta_s_sin_psi_s: f64,
) -> f64 {
    let k = std::f64::consts::PI * a / lambda;
    let w = k * cos_theta_s;
    let y = k * (sin_psi_i + sin_theta_s_sin_psi_s);
    gain_ue / (4.0 * std::f64::consts::PI) * (a * b / (d * d)) * sinc(y).powi(2) * sinc(w).powi(2)
}

/// `(H_br, H_ru)` with shapes `N_r × M` and `K × N_r`.
pub fn ris_leg_channels(config: &ScenarioConfig, ue_positions: &[[f64; 3]]) -> Result<(CMatrix, CMatrix)> {
    let geom = element_positions(config)?;
    let lambda = config.wavelength_m();
    let frame = Frame::from_tilt(config.ris_tilt_rad);
    let [a, b] = config.ris_element_size_m;
    let (gt, gu) = (config.gain_tx(), config.gain_ue());
    let bs_center = Vector3::from(config.bs_position_m);
    let nr = geom.element_positions_ris.len();

    let mut h_br = CMatrix::zeros(nr, config.bs_antennas);
    let mut h_ru = CMatrix::zeros(ue_positions.len(), nr);
    for (i, &elem) in geom.element_positions_ris.iter().enumerate() {
        let e = Vector3::from(elem);
        for (l, &ant) in geom.element_positions_bs.iter().enumerate() {
            let w = Vector3::from(ant) - e;
            let ang = panel_angles(&frame, w, "BS antenna")?;
            let d = w.norm();
            let g = gain_br(gt, a, b, d, ang.cos2_azimuth) * db_to_linear(-shadow_loss(config, ant, elem));
            h_br[(i, l)] = g.sqrt() * phase(d, lambda);
        }
        let incident = panel_angles(&frame, bs_center - e, "BS")?;
        for (k, &ue) in ue_positions.iter().enumerate() {
            let s = Vector3::from(ue) - e;
            let ang = panel_angles(&frame, s, "user")?;
            let d = s.norm();
            let g = gain_ru(
                gu,
                a,
                b,
                d,
                lambda,
                incident.sin_azimuth,
                ang.cos_polar,
                ang.sin_polar_sin_azimuth,
            ) * db_to_linear(-shadow_loss(config, elem, ue));
            h_ru[(k, i)] = g.sqrt() * phase(d, lambda);
        }
    }
    Ok((h_br, h_ru))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::scenario::{resolve_preset, Preset};
    use crate::SPEED_OF_LIGHT;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_config() -> ScenarioConfig {
        let mut cfg = resolve_preset(Preset::Near);
        cfg.ris_elements = 10;
        cfg
    }

    #[test]
    fn phase_wraps() {
        let lambda = SPEED_OF_LIGHT / 30e9;
        let z = phase(lambda, lambda);
        assert!((z - c(1.0, 0.0)).norm() < 1e-12);
        let z = phase(lambda / 2.0, lambda);
        assert!((z - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn h12_hand_example() {
        let h_ru = CMatrix::from_column_slice(2, 1, &[c(1., 0.), c(0., 1.)]);
        let h_br = CMatrix::from_row_slice(1, 2, &[c(1., 0.), c(-1., 0.)]);
        let h12 = build_h12(&h_br, &h_ru);
        let expect = [c(1., 0.), c(0., 1.), c(-1., 0.), c(0., -1.)];
        assert_eq!(h12.as_slice(), &expect);
    }

    #[test]
    fn zero_ris_leg() {
        let h_bu = CMatrix::from_fn(2, 3, |r, cc| c(r as f64, cc as f64));
        let h_br = CMatrix::from_fn(4, 3, |r, cc| c(1.0 + r as f64, cc as f64));
        let chs = ChannelSet::from_parts(h_bu.clone(), h_br, CMatrix::zeros(2, 4)).unwrap();
        assert!(chs.h12.iter().all(|z| *z == c(0., 0.)));
        let phi = [c(0., 1.); 4];
        assert_eq!(assemble_compound(&chs, &phi), h_bu);
        assert_eq!(chs.compound(&phi), h_bu);
    }

    #[test]
    fn dimension_mismatch() {
        let r = ChannelSet::from_parts(CMatrix::zeros(2, 3), CMatrix::zeros(4, 2), CMatrix::zeros(2, 4));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn direct_magnitudes_match_pathloss() {
        let cfg = small_config();
        let ues = [[60.0, 60.0, 1.5], [20.0, 40.0, 1.5]];
        let h = direct_channel(&cfg, &ues).unwrap();
        let geom = element_positions(&cfg).unwrap();
        for k in 0..2 {
            for l in 0..4 {
                let pl = direct_pathloss_db(&cfg, geom.element_positions_bs[l], ues[k]).unwrap();
                let beta = cfg.gain_tx() * cfg.gain_ue() * db_to_linear(-pl);
                assert!((h[(k, l)].norm_sqr() / beta - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn umi_range_error() {
        let cfg = small_config();
        let r = direct_channel(&cfg, &[[60.0, 118.0, 1.5]]);
        assert!(matches!(r, Err(Error::ModelRange { .. })));
        let mut fs = cfg.clone();
        fs.pathloss = PathlossModel::FreeSpace;
        assert!(direct_channel(&fs, &[[60.0, 118.0, 1.5]]).is_ok());
    }

    #[test]
    fn user_on_ris_plane_is_rejected() {
        let cfg = small_config();
        let r = ris_leg_channels(&cfg, &[[0.0, 30.0, 1.5]]);
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn broadside_pattern_maxima() {
        // psi_i = 0 and theta_s = pi/2: both pattern factors equal one
        let g = gain_br(2.0, 0.005, 0.005, 10.0, 1.0);
        assert!((g - 2.0 / (4.0 * std::f64::consts::PI) * 0.005 * 0.005 / 100.0).abs() < 1e-20);
        let r = gain_ru(2.0, 0.005, 0.005, 10.0, 0.01, 0.0, 0.0, 0.0);
        assert!((r - g).abs() < 1e-20);
    }

    #[test]
    fn inverse_square_law() {
        let g1 = gain_br(2.0, 0.005, 0.005, 10.0, 0.7);
        let g2 = gain_br(2.0, 0.005, 0.005, 20.0, 0.7);
        assert!((crate::linear_to_db(g1 / g2) - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn vectorized_and_diagonal_forms_agree() {
        let cfg = small_config();
        let chs = ChannelSet::synthesize(&cfg, &[[60.0, 60.0, 1.5], [20.0, 40.0, 1.5]]).unwrap();
        let phi: Vec<Complex64> = (0..10).map(|i| Complex64::from_polar(1.0, 0.37 * i as f64)).collect();
        let a = assemble_compound(&chs, &phi);
        let b = chs.compound(&phi);
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(max_abs_diff(&a, &b) <= 1e-13 * scale);
    }

    #[test]
    fn dump_round_trip() {
        let cfg = small_config();
        let chs = ChannelSet::synthesize(&cfg, &[[60.0, 60.0, 1.5], [20.0, 40.0, 1.5]]).unwrap();
        let text = write_dump(&chs, cfg.carrier_frequency_hz);
        let (back, fc) = parse_dump(&text).unwrap();
        assert_eq!(back, chs);
        assert_eq!(fc, 30e9);
    }

    #[test]
    fn dump_rejects_malformed() {
        assert!(parse_dump("").is_err());
        assert!(parse_dump("riszf-channel-dump 1\n1 1 0 3e10\nh_bu\n1\n").is_err());
        assert!(parse_dump("riszf-channel-dump 1\n99999999 99999999 9 3e10\n").is_err());
        let ok = "riszf-channel-dump 1\n1 1 0 3e10\nh_bu\n1 0\nh_br\nh_ru\n\n";
        assert!(parse_dump(ok).is_ok());
    }
}
