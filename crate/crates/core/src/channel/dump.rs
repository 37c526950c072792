//! Plain-text channel dump for cross-implementation diffing.
//!
//! ```text
//! riszf-channel-dump 1
//! <K> <M> <N_r> <f_c in Hz>
//! h_bu
//! <K rows of M "re im" pairs>
//! h_br
//! <N_r rows of M pairs>
//! h_ru
//! <K rows of N_r pairs>
//! ```
//!
//! Values are written with shortest round-trip formatting, rows in order.

use std::fmt::Write;

use num_complex::Complex64;

use super::{Cascade, ChannelSet};
use crate::{CMatrix, Error, Result};

const MAGIC: &str = "riszf-channel-dump 1";

fn write_matrix(out: &mut String, name: &str, m: &CMatrix) {
    out.push_str(name);
    out.push('\n');
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| {
                let z = m[(r, c)];
                format!("{:e} {:e}", z.re, z.im)
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

/// Renders `chs` and the carrier frequency as a dump document.
pub fn write_dump(chs: &ChannelSet, fc_hz: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "{} {} {} {:e}", chs.users(), chs.antennas(), chs.elements(), fc_hz);
    write_matrix(&mut out, "h_bu", &chs.h_bu);
    write_matrix(&mut out, "h_br", &chs.h_br);
    write_matrix(&mut out, "h_ru", &chs.h_ru);
    out
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn read_matrix<'a>(lines: &mut impl Iterator<Item = &'a str>, name: &str, rows: usize, cols: usize) -> Result<CMatrix> {
    match lines.next() {
        Some(l) if l.trim() == name => {}
        other => return Err(parse_err(format!("expected section {name}, found {other:?}"))),
    }
    let mut m = CMatrix::zeros(rows, cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(format!("{name}: missing row {r}")))?;
        let vals = line
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{name}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 2 * cols {
            return Err(parse_err(format!(
                "{name}: row {r} has {} values, expected {}",
                vals.len(),
                2 * cols
            )));
        }
        for c in 0..cols {
            let z = Complex64::new(vals[2 * c], vals[2 * c + 1]);
            if !z.is_finite() {
                return Err(parse_err(format!("{name}: non-finite entry")));
            }
            m[(r, c)] = z;
        }
    }
    Ok(m)
}

/// Upper bound on matrix entries accepted from a dump header.
const MAX_ENTRIES: usize = 1 << 26;

/// Parses a dump back into a channel set and the carrier frequency.
pub fn parse_dump(text: &str) -> Result<(ChannelSet, f64)> {
    // rows of zero-column matrices are blank, so only trailing blanks are skipped
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(parse_err("missing dump header"));
    }
    let header = lines.next().ok_or_else(|| parse_err("missing dimensions"))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err("dimension line needs K M N_r f_c"));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|e| parse_err(format!("dimension: {e}")));
    let (k, m, nr) = (dim(fields[0])?, dim(fields[1])?, dim(fields[2])?);
    let fc: f64 = fields[3].parse().map_err(|e| parse_err(format!("carrier: {e}")))?;
    if !(fc.is_finite() && fc > 0.0) {
        return Err(parse_err("carrier frequency must be positive"));
    }
    let entries = [
        k.checked_mul(m),
        nr.checked_mul(m),
        k.checked_mul(nr),
        k.checked_mul(m).and_then(|x| x.checked_mul(nr)),
    ];
    if entries.iter().any(|e| e.is_none_or(|e| e > MAX_ENTRIES)) {
        return Err(parse_err("dimensions too large"));
    }
    let h_bu = read_matrix(&mut lines, "h_bu", k, m)?;
    let h_br = read_matrix(&mut lines, "h_br", nr, m)?;
    let h_ru = read_matrix(&mut lines, "h_ru", k, nr)?;
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(parse_err("trailing content after h_ru"));
    }
    Ok((ChannelSet::from_parts(h_bu, h_br, h_ru)?, fc))
}
