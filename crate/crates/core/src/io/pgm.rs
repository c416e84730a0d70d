//! Plain grayscale (P2) quick-look images.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// P2 text for a field: values map linearly from `range` (default: the
/// valid min and max) onto grey levels 1 to 255; nodata is black.
pub fn format_pgm(field: &ScalarField, range: Option<(f64, f64)>) -> String {
    let (lo, hi) = range.unwrap_or_else(|| {
        field.valid().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let s = &field.spec;
    let mut out = format!("P2\n{} {}\n255\n", s.ncols, s.nrows);
    for r in 0..s.nrows {
        for c in 0..s.ncols {
            let i = s.index(r, c);
            let g = if field.is_nodata(i) || !field.values[i].is_finite() {
                0
            } else {
                (1.0 + 254.0 * ((field.values[i] - lo) / span).clamp(0.0, 1.0)).round() as u32
            };
            if c > 0 {
                out.push(' ');
            }
            write!(out, "{g}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_pgm(field: &ScalarField, range: Option<(f64, f64)>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_pgm(field, range)).map_err(|e| Error::io(path, e))
}
