//! Scenario config files: a flat TOML document whose keys mirror
//! [`ScenarioConfig`] with units in the names. A preset name may be given
//! alone; every explicit key overrides the preset default.
//!
//! ```toml
//! preset = "NEAR"
//! ris_elements = 128
//! grid_resolution_m = 6.0
//! obstacles = [{ start_m = [35.0, 80.0], end_m = [45.0, 80.0], attenuation_db = 10.0 }]
//! ```

use serde::{Deserialize, Serialize};

use super::{resolve_preset, GridSpec, Obstacle, PathlossModel, Preset, ScenarioConfig, ShadowedPathloss};
use crate::{Error, Result};

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<Preset>,
    carrier_frequency_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    tx_power_dl_dbm: Option<f64>,
    noise_power_dbm: Option<f64>,
    ul_pilot_power_dbm: Option<f64>,
    bs_position_m: Option<[f64; 3]>,
    bs_tilt_rad: Option<[f64; 2]>,
    bs_antennas: Option<usize>,
    bs_antenna_spacing_wavelengths: Option<f64>,
    ris_position_m: Option<[f64; 3]>,
    ris_tilt_rad: Option<[f64; 2]>,
    ris_elements: Option<usize>,
    ris_rows: Option<usize>,
    ris_element_size_m: Option<[f64; 2]>,
    antenna_gain_tx_dbi: Option<f64>,
    antenna_gain_ue_dbi: Option<f64>,
    ue_positions_m: Option<Vec<[f64; 3]>>,
    probe_ue_m: Option<[f64; 3]>,
    grid_x_range_m: Option<[f64; 2]>,
    grid_y_range_m: Option<[f64; 2]>,
    grid_resolution_m: Option<f64>,
    grid_height_m: Option<f64>,
    pathloss: Option<PathlossModel>,
    shadowed_pathloss: Option<ShadowedPathloss>,
    // arrays of tables go last so the serialized document stays valid TOML
    obstacles: Option<Vec<Obstacle>>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $( if let Some(v) = $src.$field { $dst.$field = v; } )+
    };
}

impl ConfigFile {
    fn resolve(self) -> ScenarioConfig {
        let mut cfg = resolve_preset(self.preset.unwrap_or(Preset::Custom));
        overlay!(
            cfg,
            self,
            carrier_frequency_hz,
            bandwidth_hz,
            tx_power_dl_dbm,
            noise_power_dbm,
            ul_pilot_power_dbm,
            bs_position_m,
            bs_tilt_rad,
            bs_antennas,
            bs_antenna_spacing_wavelengths,
            ris_position_m,
            ris_tilt_rad,
            ris_elements,
            ris_rows,
            ris_element_size_m,
            antenna_gain_tx_dbi,
            antenna_gain_ue_dbi,
            obstacles,
            ue_positions_m,
            probe_ue_m,
            pathloss,
            shadowed_pathloss,
        );
        if let Some(v) = self.grid_x_range_m {
            cfg.grid.x_range_m = v;
        }
        if let Some(v) = self.grid_y_range_m {
            cfg.grid.y_range_m = v;
        }
        if let Some(v) = self.grid_resolution_m {
            cfg.grid.resolution_m = v;
        }
        if let Some(v) = self.grid_height_m {
            cfg.grid.height_m = v;
        }
        cfg
    }

    fn from_config(c: &ScenarioConfig) -> Self {
        let GridSpec {
            x_range_m,
            y_range_m,
            resolution_m,
            height_m,
        } = c.grid.clone();
        ConfigFile {
            preset: Some(c.preset),
            carrier_frequency_hz: Some(c.carrier_frequency_hz),
            bandwidth_hz: Some(c.bandwidth_hz),
            tx_power_dl_dbm: Some(c.tx_power_dl_dbm),
            noise_power_dbm: Some(c.noise_power_dbm),
            ul_pilot_power_dbm: Some(c.ul_pilot_power_dbm),
            bs_position_m: Some(c.bs_position_m),
            bs_tilt_rad: Some(c.bs_tilt_rad),
            bs_antennas: Some(c.bs_antennas),
            bs_antenna_spacing_wavelengths: Some(c.bs_antenna_spacing_wavelengths),
            ris_position_m: Some(c.ris_position_m),
            ris_tilt_rad: Some(c.ris_tilt_rad),
            ris_elements: Some(c.ris_elements),
            ris_rows: Some(c.ris_rows),
            ris_element_size_m: Some(c.ris_element_size_m),
            antenna_gain_tx_dbi: Some(c.antenna_gain_tx_dbi),
            antenna_gain_ue_dbi: Some(c.antenna_gain_ue_dbi),
            ue_positions_m: Some(c.ue_positions_m.clone()),
            probe_ue_m: Some(c.probe_ue_m),
            grid_x_range_m: Some(x_range_m),
            grid_y_range_m: Some(y_range_m),
            grid_resolution_m: Some(resolution_m),
            grid_height_m: Some(height_m),
            pathloss: Some(c.pathloss),
            shadowed_pathloss: Some(c.shadowed_pathloss),
            obstacles: Some(c.obstacles.clone()),
        }
    }
}

/// Applies one `key=value` override to a parsed document. The value is read
/// as a TOML value when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let valid_key = !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !valid_key {
        return Err(Error::Config(format!("invalid override key {key:?}")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    };
    table.insert(key.to_string(), value);
    Ok(())
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    parse_config_with_overrides::<&str>(text, &[])
}

/// Parses a config document, applies `key=value` overrides in order, resolves
/// the preset and validates the result.
pub fn parse_config_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<ScenarioConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    for o in overrides {
        apply_override(&mut table, o.as_ref())?;
    }
    // accept the documented aliases for preset names
    if let Some(toml::Value::String(name)) = table.get("preset") {
        let preset: Preset = name.parse()?;
        table.insert("preset".into(), toml::Value::String(preset.name().into()));
    }
    let file: ConfigFile = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    let cfg = file.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes every field explicitly; [`parse_config`] of the output
/// reproduces `config` exactly.
pub fn to_toml(config: &ScenarioConfig) -> String {
    toml::to_string(&ConfigFile::from_config(config)).expect("config serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::resolve_preset;

    #[test]
    fn preset_alone() {
        let c = parse_config("preset = \"FAR\"").unwrap();
        assert_eq!(c, resolve_preset(Preset::Far));
        let c = parse_config("preset = \"near-ns\"").unwrap();
        assert_eq!(c.preset, Preset::NearNs);
    }

    #[test]
    fn explicit_fields_override_preset() {
        let c = parse_config("preset = \"NEAR\"\nris_elements = 130\ngrid_resolution_m = 6.0\ntx_power_dl_dbm = 20")
            .unwrap();
        assert_eq!(c.ris_elements, 130);
        assert_eq!(c.grid.resolution_m, 6.0);
        assert_eq!(c.tx_power_dl_dbm, 20.0);
        assert_eq!(c.ue_positions_m, vec![[20.0, 40.0, 1.5]]);
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = parse_config_with_overrides(
            "preset = \"NEAR\"",
            &["ris_elements=64", "ris_elements = 35", "preset=OUT", "obstacles=[]"],
        )
        .unwrap();
        assert_eq!(c.ris_elements, 35);
        assert_eq!(c.preset, Preset::Out);
        assert!(c.obstacles.is_empty());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_config("preset = \"MOON\""), Err(Error::Config(_))));
        assert!(matches!(parse_config("unknown_key = 1"), Err(Error::Config(_))));
        assert!(matches!(parse_config("ris_elements = 7"), Err(Error::Config(_))));
        assert!(matches!(parse_config("= ="), Err(Error::Config(_))));
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "bad key=1").is_err());
    }

    #[test]
    fn serialized_config_reparses_identically() {
        for p in Preset::ALL {
            let c = resolve_preset(p);
            let text = to_toml(&c);
            assert_eq!(parse_config(&text).unwrap(), c, "{text}");
        }
    }
}
