//! Large-scale pathloss for the direct link: 3GPP TR 38.901 UMi street
//! canyon (LOS and NLOS, shadow fading disabled) and free space.

use crate::SPEED_OF_LIGHT;

/// Smallest 2-D distance for which the UMi formulas are defined.
pub const UMI_MIN_DISTANCE_M: f64 = 10.0;
const EFFECTIVE_ENV_HEIGHT_M: f64 = 1.0;

/// Breakpoint distance `d'_BP = 4 h'_BS h'_UT f_c / c`.
pub fn umi_breakpoint_m(fc_hz: f64, h_bs: f64, h_ut: f64) -> f64 {
    4.0 * (h_bs - EFFECTIVE_ENV_HEIGHT_M) * (h_ut - EFFECTIVE_ENV_HEIGHT_M) * fc_hz / SPEED_OF_LIGHT
}

/// UMi LOS pathloss in dB.
pub fn umi_los_db(d2d: f64, d3d: f64, fc_hz: f64, h_bs: f64, h_ut: f64) -> f64 {
    let fc_ghz = fc_hz / 1e9;
    let bp = umi_breakpoint_m(fc_hz, h_bs, h_ut);
    if d2d <= bp {
        32.4 + 21.0 * d3d.log10() + 20.0 * fc_ghz.log10()
    } else {
        32.4 + 40.0 * d3d.log10() + 20.0 * fc_ghz.log10() - 9.5 * (bp * bp + (h_bs - h_ut).powi(2)).log10()
    }
}

/// UMi NLOS pathloss in dB, `max(PL_LOS, PL'_NLOS)`.
pub fn umi_nlos_db(d2d: f64, d3d: f64, fc_hz: f64, h_bs: f64, h_ut: f64) -> f64 {
    let fc_ghz = fc_hz / 1e9;
    let nlos = 35.3 * d3d.log10() + 22.4 + 21.3 * fc_ghz.log10() - 0.3 * (h_ut - 1.5);
    nlos.max(umi_los_db(d2d, d3d, fc_hz, h_bs, h_ut))
}

/// Friis free-space loss in dB.
pub fn free_space_db(d3d: f64, fc_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * d3d * fc_hz / SPEED_OF_LIGHT).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakpoint_at_30ghz() {
        // 4 * 9 * 0.5 * 30e9 / 3e8
        assert!((umi_breakpoint_m(30e9, 10.0, 1.5) - 1800.0).abs() < 1e-9);
    }

    #[test]
    fn los_at_100m() {
        let d3d = (100f64.powi(2) + 8.5f64.powi(2)).sqrt();
        let expect = 32.4 + 21.0 * d3d.log10() + 20.0 * 30f64.log10();
        assert_eq!(umi_los_db(100.0, d3d, 30e9, 10.0, 1.5), expect);
    }

    #[test]
    fn los_beyond_breakpoint_is_continuous() {
        let bp = umi_breakpoint_m(30e9, 10.0, 1.5);
        let d3 = |d: f64| (d * d + 8.5 * 8.5).sqrt();
        let below = umi_los_db(bp, d3(bp), 30e9, 10.0, 1.5);
        let above = umi_los_db(bp + 1e-6, d3(bp + 1e-6), 30e9, 10.0, 1.5);
        assert!((below - above).abs() < 0.1, "{below} {above}");
    }

    #[test]
    fn nlos_dominates_los_and_is_monotone() {
        let mut last = 0.0;
        for i in 0..200 {
            let d = 10.0 + i as f64 * 25.0;
            let d3 = (d * d + 8.5 * 8.5).sqrt();
            let n = umi_nlos_db(d, d3, 30e9, 10.0, 1.5);
            assert!(n >= umi_los_db(d, d3, 30e9, 10.0, 1.5));
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn free_space_doubling_adds_6db() {
        let a = free_space_db(10.0, 30e9);
        let b = free_space_db(20.0, 30e9);
        assert!((b - a - 20.0 * 2f64.log10()).abs() < 1e-12);
    }
}
