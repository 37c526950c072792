use nalgebra::Vector3;
use serde::Serialize;

use super::ScenarioConfig;
use crate::{Error, Result};

/// Orthonormal frame of an array: boresight `normal`, horizontal axis
/// `horizontal` and vertical axis `vertical = horizontal × normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub normal: Vector3<f64>,
    pub horizontal: Vector3<f64>,
    pub vertical: Vector3<f64>,
}

impl Frame {
    pub fn from_tilt(tilt: [f64; 2]) -> Self {
        let [az, el] = tilt;
        let normal = Vector3::new(-az.sin() * el.sin(), az.cos() * el.sin(), el.cos());
        let horizontal = Vector3::new(az.cos(), az.sin(), 0.0);
        let vertical = horizontal.cross(&normal);
        Frame {
            normal,
            horizontal,
            vertical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryReport {
    pub element_positions_bs: Vec<[f64; 3]>,
    /// RIS elements, row-major: index `row * columns + column`, row 0 lowest.
    pub element_positions_ris: Vec<[f64; 3]>,
    pub aperture_bs_m: f64,
    pub aperture_ris_m: f64,
    pub fraunhofer_bs_m: f64,
    pub fraunhofer_ris_m: f64,
}

fn fraunhofer(aperture: f64, lambda: f64) -> f64 {
    2.0 * aperture * aperture / lambda
}

/// Element coordinates of both arrays and their Fraunhofer distances.
///
/// The BS is a uniform linear array along the frame's horizontal axis; the
/// RIS is a `ris_rows × columns` grid with horizontal pitch `a` and vertical
/// pitch `b`. Both are centred on their configured positions. The aperture
/// is the largest distance between two element centres.
pub fn element_positions(config: &ScenarioConfig) -> Result<GeometryReport> {
    if config.ris_rows == 0 || !config.ris_elements.is_multiple_of(config.ris_rows) {
        return Err(Error::Config(format!(
            "RIS elements ({}) must be a multiple of the row count ({})",
            config.ris_elements, config.ris_rows
        )));
    }
    let lambda = config.wavelength_m();

    let bs_frame = Frame::from_tilt(config.bs_tilt_rad);
    let bs = Vector3::from(config.bs_position_m);
    let m = config.bs_antennas;
    let spacing = config.bs_antenna_spacing_wavelengths * lambda;
    let element_positions_bs = (0..m)
        .map(|l| {
            let offset = (l as f64 - (m as f64 - 1.0) / 2.0) * spacing;
            (bs + bs_frame.horizontal * offset).into()
        })
        .collect();
    let aperture_bs_m = m.saturating_sub(1) as f64 * spacing;

    let ris_frame = Frame::from_tilt(config.ris_tilt_rad);
    let ris = Vector3::from(config.ris_position_m);
    let rows = config.ris_rows;
    let cols = config.ris_columns();
    let [a, b] = config.ris_element_size_m;
    let mut element_positions_ris = Vec::with_capacity(config.ris_elements);
    for r in 0..rows {
        for c in 0..cols {
            let h = (c as f64 - (cols as f64 - 1.0) / 2.0) * a;
            let v = (r as f64 - (rows as f64 - 1.0) / 2.0) * b;
            element_positions_ris.push((ris + ris_frame.horizontal * h + ris_frame.vertical * v).into());
        }
    }
    let width = cols.saturating_sub(1) as f64 * a;
    let height = if cols == 0 {
        0.0
    } else {
        rows.saturating_sub(1) as f64 * b
    };
    let aperture_ris_m = width.hypot(height);

    Ok(GeometryReport {
        element_positions_bs,
        element_positions_ris,
        aperture_bs_m,
        aperture_ris_m,
        fraunhofer_bs_m: fraunhofer(aperture_bs_m, lambda),
        fraunhofer_ris_m: fraunhofer(aperture_ris_m, lambda),
    })
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test (touching counts as crossing).
pub fn segments_intersect(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, b, p))
        || (d2 == 0.0 && on_segment(a, b, q))
        || (d3 == 0.0 && on_segment(p, q, a))
        || (d4 == 0.0 && on_segment(p, q, b))
}

/// Accumulated obstacle attenuation in dB on the ground projection of `p → q`.
///
/// The endpoints are put in a canonical order first so the result is exactly
/// symmetric in its arguments.
pub fn shadow_loss(config: &ScenarioConfig, p: [f64; 3], q: [f64; 3]) -> f64 {
    let (p, q) = if (p[0], p[1]) <= (q[0], q[1]) { (p, q) } else { (q, p) };
    let (p2, q2) = ([p[0], p[1]], [q[0], q[1]]);
    config
        .obstacles
        .iter()
        .filter(|o| segments_intersect(p2, q2, o.start_m, o.end_m))
        .map(|o| o.attenuation_db)
        .sum()
}
