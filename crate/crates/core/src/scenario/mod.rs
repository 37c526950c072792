//! Physical deployment: base station, RIS panel, users, obstacles, radio
//! constants and the named presets of the reference study.
//!
//! Orientation convention for `bs_tilt_rad` and `ris_tilt_rad`: the pair is
//! `(azimuth, elevation)` where the azimuth is measured counter-clockwise from
//! the +y axis and the elevation is a zenith angle, so `π/2` is horizontal.
//! The boresight (panel normal) is
//! `n = (−sin az · sin el, cos az · sin el, cos el)`, the horizontal array axis
//! is `u = (cos az, sin az, 0)` and the panel's vertical axis is `v = u × n`.

mod file;
mod geometry;

pub use file::{apply_override, parse_config, parse_config_with_overrides, to_toml};
pub use geometry::{element_positions, segments_intersect, shadow_loss, Frame, GeometryReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{db_to_linear, dbm_to_watts, Error, Result, SPEED_OF_LIGHT};

/// Named deployments. `Custom` starts from the shared base parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "NEAR")]
    Near,
    #[serde(rename = "OUT")]
    Out,
    #[serde(rename = "FAR")]
    Far,
    #[serde(rename = "NEAR_NS")]
    NearNs,
    #[serde(rename = "CUSTOM")]
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Near, Preset::Out, Preset::Far, Preset::NearNs, Preset::Custom];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Near => "NEAR",
            Preset::Out => "OUT",
            Preset::Far => "FAR",
            Preset::NearNs => "NEAR_NS",
            Preset::Custom => "CUSTOM",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

/// Large-scale model for the direct BS→UE link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathlossModel {
    /// 3GPP TR 38.901 UMi street canyon.
    Umi,
    /// Friis free-space loss, valid at any distance.
    FreeSpace,
}

/// Which UMi branch is used for an obstructed direct link before the
/// obstacle penalty is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowedPathloss {
    Nlos,
    Los,
}

/// A vertical screen of unbounded height between two ground points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub start_m: [f64; 2],
    pub end_m: [f64; 2],
    #[serde(default = "default_attenuation")]
    pub attenuation_db: f64,
}

fn default_attenuation() -> f64 {
    10.0
}

impl Obstacle {
    /// A screen of `width` metres along the x-axis centred on `center`.
    pub fn along_x(center: [f64; 2], width: f64, attenuation_db: f64) -> Self {
        Obstacle {
            start_m: [center[0] - width / 2.0, center[1]],
            end_m: [center[0] + width / 2.0, center[1]],
            attenuation_db,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.start_m == self.end_m {
            return Err(Error::Config("obstacle endpoints must differ".into()));
        }
        if !self.attenuation_db.is_finite() || self.attenuation_db < 0.0 {
            return Err(Error::Config("obstacle attenuation must be >= 0 dB".into()));
        }
        if self.start_m.iter().chain(&self.end_m).any(|v| !v.is_finite()) {
            return Err(Error::Config("obstacle endpoints must be finite".into()));
        }
        Ok(())
    }
}

/// Coverage grid for the moving user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub resolution_m: f64,
    pub height_m: f64,
}

impl GridSpec {
    fn axis(range: [f64; 2], step: f64) -> Vec<f64> {
        let n = ((range[1] - range[0]) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| range[0] + i as f64 * step).collect()
    }

    /// Grid points in row-major order (y outer, x inner).
    pub fn points(&self) -> Vec<[f64; 3]> {
        let xs = Self::axis(self.x_range_m, self.resolution_m);
        let ys = Self::axis(self.y_range_m, self.resolution_m);
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| [x, y, self.height_m]))
            .collect()
    }
}

/// The single source of truth for an experiment. Powers are stored in the
/// units named by the field; accessors return linear values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dl_dbm: f64,
    pub noise_power_dbm: f64,
    pub ul_pilot_power_dbm: f64,
    pub bs_position_m: [f64; 3],
    pub bs_tilt_rad: [f64; 2],
    pub bs_antennas: usize,
    pub bs_antenna_spacing_wavelengths: f64,
    pub ris_position_m: [f64; 3],
    pub ris_tilt_rad: [f64; 2],
    pub ris_elements: usize,
    pub ris_rows: usize,
    pub ris_element_size_m: [f64; 2],
    pub antenna_gain_tx_dbi: f64,
    pub antenna_gain_ue_dbi: f64,
    pub obstacles: Vec<Obstacle>,
    /// Fixed users. Sweeps prepend the moving user to this list.
    pub ue_positions_m: Vec<[f64; 3]>,
    /// Position of the moving user for single-placement commands.
    pub probe_ue_m: [f64; 3],
    pub grid: GridSpec,
    pub pathloss: PathlossModel,
    pub shadowed_pathloss: ShadowedPathloss,
}

pub const NEAR_UE2: [f64; 3] = [20.0, 40.0, 1.5];
pub const NEAR_NS_UE2: [f64; 3] = [20.0, 35.0, 1.5];
pub const FAR_UE2: [f64; 3] = [90.0, 40.0, 1.5];
pub const OUT_UE2: [f64; 3] = [40.0, 40.0, 1.5];

fn base_config() -> ScenarioConfig {
    let fc = 30e9;
    let lambda = SPEED_OF_LIGHT / fc;
    ScenarioConfig {
        preset: Preset::Custom,
        carrier_frequency_hz: fc,
        bandwidth_hz: 50e6,
        tx_power_dl_dbm: 24.0,
        noise_power_dbm: -94.0,
        ul_pilot_power_dbm: 15.0,
        bs_position_m: [60.0, 120.0, 10.0],
        bs_tilt_rad: [std::f64::consts::PI, std::f64::consts::FRAC_PI_2],
        bs_antennas: 4,
        bs_antenna_spacing_wavelengths: 0.5,
        ris_position_m: [0.0, 60.0, 6.0],
        ris_tilt_rad: [-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2],
        ris_elements: 1000,
        ris_rows: 5,
        ris_element_size_m: [0.5 * lambda, 0.5 * lambda],
        antenna_gain_tx_dbi: 3.0,
        antenna_gain_ue_dbi: 3.0,
        obstacles: vec![
            Obstacle::along_x([40.0, 80.0], 10.0, 10.0),
            Obstacle::along_x([80.0, 70.0], 10.0, 10.0),
        ],
        ue_positions_m: vec![NEAR_NS_UE2],
        probe_ue_m: [60.0, 60.0, 1.5],
        grid: GridSpec {
            x_range_m: [0.0, 120.0],
            y_range_m: [0.0, 120.0],
            resolution_m: 2.0,
            height_m: 1.5,
        },
        pathloss: PathlossModel::Umi,
        shadowed_pathloss: ShadowedPathloss::Nlos,
    }
}

/// Fully populated configuration for a named preset.
pub fn resolve_preset(preset: Preset) -> ScenarioConfig {
    let mut cfg = base_config();
    cfg.preset = preset;
    match preset {
        Preset::Near => cfg.ue_positions_m = vec![NEAR_UE2],
        Preset::Out => cfg.ue_positions_m = vec![OUT_UE2],
        Preset::Far => cfg.ue_positions_m = vec![FAR_UE2],
        Preset::NearNs => {
            cfg.ue_positions_m = vec![NEAR_NS_UE2];
            cfg.obstacles.clear();
        }
        Preset::Custom => {}
    }
    cfg
}

/// [`resolve_preset`] by name.
pub fn resolve_preset_name(name: &str) -> Result<ScenarioConfig> {
    Ok(resolve_preset(name.parse()?))
}

impl ScenarioConfig {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dl_dbm)
    }

    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    pub fn ul_pilot_power_w(&self) -> f64 {
        dbm_to_watts(self.ul_pilot_power_dbm)
    }

    pub fn gain_tx(&self) -> f64 {
        db_to_linear(self.antenna_gain_tx_dbi)
    }

    pub fn gain_ue(&self) -> f64 {
        db_to_linear(self.antenna_gain_ue_dbi)
    }

    /// Number of RIS columns.
    pub fn ris_columns(&self) -> usize {
        self.ris_elements.checked_div(self.ris_rows).unwrap_or(0)
    }

    /// Copy with `n` RIS elements, keeping the panel shape as close as
    /// possible: rows become the largest divisor of `n` not above the
    /// configured row count.
    pub fn with_ris_elements(&self, n: usize) -> ScenarioConfig {
        let mut c = self.clone();
        c.ris_elements = n;
        if n > 0 {
            c.ris_rows = (1..=self.ris_rows.max(1))
                .rev()
                .find(|r| n.is_multiple_of(*r))
                .unwrap_or(1);
        }
        c
    }

    /// Users served at a single placement: the probe user then the fixed ones.
    pub fn placement_users(&self) -> Vec<[f64; 3]> {
        std::iter::once(self.probe_ue_m)
            .chain(self.ue_positions_m.iter().copied())
            .collect()
    }

    /// Checks every invariant; `users` is the total number of served users.
    pub fn validate_for(&self, users: usize) -> Result<()> {
        let finite = [
            self.carrier_frequency_hz,
            self.bandwidth_hz,
            self.tx_power_dl_dbm,
            self.noise_power_dbm,
            self.ul_pilot_power_dbm,
            self.antenna_gain_tx_dbi,
            self.antenna_gain_ue_dbi,
            self.bs_antenna_spacing_wavelengths,
            self.grid.resolution_m,
            self.grid.height_m,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("radio parameters must be finite".into()));
        }
        let points = self
            .bs_position_m
            .iter()
            .chain(&self.ris_position_m)
            .chain(&self.probe_ue_m)
            .chain(self.ue_positions_m.iter().flatten())
            .chain(&self.bs_tilt_rad)
            .chain(&self.ris_tilt_rad)
            .chain(&self.ris_element_size_m)
            .chain(&self.grid.x_range_m)
            .chain(&self.grid.y_range_m);
        if points.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("coordinates must be finite".into()));
        }
        if self.carrier_frequency_hz <= 0.0 {
            return Err(Error::Config("carrier frequency must be positive".into()));
        }
        if self.grid.resolution_m <= 0.0 {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        if self.grid.x_range_m[1] < self.grid.x_range_m[0] || self.grid.y_range_m[1] < self.grid.y_range_m[0] {
            return Err(Error::Config("grid ranges must be increasing".into()));
        }
        if self.bs_antenna_spacing_wavelengths <= 0.0 {
            return Err(Error::Config("antenna spacing must be positive".into()));
        }
        if self.ris_element_size_m.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("RIS element size must be positive".into()));
        }
        if users == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if self.bs_antennas < users {
            return Err(Error::Config(format!(
                "{} BS antennas cannot serve {users} users",
                self.bs_antennas
            )));
        }
        if self.ris_rows == 0 || !self.ris_elements.is_multiple_of(self.ris_rows) {
            return Err(Error::Config(format!(
                "RIS elements ({}) must be a multiple of the row count ({})",
                self.ris_elements, self.ris_rows
            )));
        }
        for o in &self.obstacles {
            o.validate()?;
        }
        Ok(())
    }

    /// Validates with the fixed users plus one moving user.
    pub fn validate(&self) -> Result<()> {
        self.validate_for(self.ue_positions_m.len() + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_place_second_user() {
        let near = resolve_preset(Preset::Near);
        assert_eq!(near.ue_positions_m, vec![[20.0, 40.0, 1.5]]);
        assert_eq!(near.obstacles.len(), 2);
        assert_eq!(near.obstacles[0].start_m, [35.0, 80.0]);
        assert_eq!(near.obstacles[0].end_m, [45.0, 80.0]);
        assert_eq!(near.obstacles[1].start_m, [75.0, 70.0]);

        let ns = resolve_preset(Preset::NearNs);
        assert!(ns.obstacles.is_empty());
        assert_eq!(ns.ue_positions_m, vec![[20.0, 35.0, 1.5]]);

        assert_eq!(resolve_preset(Preset::Far).ue_positions_m, vec![[90.0, 40.0, 1.5]]);
        assert_eq!(resolve_preset(Preset::Out).ue_positions_m, vec![[40.0, 40.0, 1.5]]);
    }

    #[test]
    fn preset_table_values() {
        let c = resolve_preset(Preset::Near);
        assert_eq!(c.bs_position_m, [60.0, 120.0, 10.0]);
        assert_eq!(c.ris_position_m, [0.0, 60.0, 6.0]);
        assert_eq!(c.carrier_frequency_hz, 30e9);
        assert_eq!(c.tx_power_dl_dbm, 24.0);
        assert_eq!(c.noise_power_dbm, -94.0);
        assert_eq!(c.bandwidth_hz, 50e6);
        assert_eq!(c.antenna_gain_tx_dbi, 3.0);
        assert_eq!(c.antenna_gain_ue_dbi, 3.0);
        assert_eq!(c.ris_rows, 5);
        assert!((c.wavelength_m() - 0.01).abs() < 1e-15);
        assert!(c.obstacles.iter().all(|o| o.attenuation_db == 10.0));
        c.validate().unwrap();
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            assert_eq!(resolve_preset(p).preset, p);
        }
        assert_eq!("near-ns".parse::<Preset>().unwrap(), Preset::NearNs);
        assert!(matches!("MID".parse::<Preset>(), Err(Error::Config(_))));
        assert!(resolve_preset_name("nowhere").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = resolve_preset(Preset::Near);
        c.ris_elements = 12;
        assert!(c.validate().is_err());
        let mut c = resolve_preset(Preset::Near);
        c.bs_antennas = 1;
        assert!(c.validate().is_err());
        let mut c = resolve_preset(Preset::Near);
        c.carrier_frequency_hz = 0.0;
        assert!(c.validate().is_err());
        let mut c = resolve_preset(Preset::Near);
        c.grid.resolution_m = 0.0;
        assert!(c.validate().is_err());
        let mut c = resolve_preset(Preset::Near);
        c.obstacles[0].attenuation_db = -1.0;
        assert!(c.validate().is_err());
        let mut c = resolve_preset(Preset::Near);
        c.noise_power_dbm = f64::NAN;
        assert!(c.validate().is_err());
    }

    #[test]
    fn element_count_adjusts_rows() {
        let base = resolve_preset(Preset::Near);
        assert_eq!(base.with_ris_elements(1000).ris_rows, 5);
        assert_eq!(base.with_ris_elements(128).ris_rows, 4);
        assert_eq!(base.with_ris_elements(7).ris_rows, 1);
        assert_eq!(base.with_ris_elements(0).ris_elements, 0);
        for n in [0, 7, 64, 128, 1000] {
            base.with_ris_elements(n).validate().unwrap();
        }
    }

    #[test]
    fn grid_points_cover_ranges() {
        let g = GridSpec {
            x_range_m: [0.0, 120.0],
            y_range_m: [0.0, 120.0],
            resolution_m: 6.0,
            height_m: 1.5,
        };
        let pts = g.points();
        assert_eq!(pts.len(), 21 * 21);
        assert_eq!(pts[0], [0.0, 0.0, 1.5]);
        assert_eq!(pts[pts.len() - 1], [120.0, 120.0, 1.5]);
        let full = GridSpec { resolution_m: 2.0, ..g };
        assert_eq!(full.points().len(), 61 * 61);
    }
}
