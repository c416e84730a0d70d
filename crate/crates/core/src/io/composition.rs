//! Composition rasters: one grid per part plus a sidecar naming file, or a
//! single CSV with one row per pixel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ascii::{format_g17, read_ascii_grid, write_ascii_grid};
use crate::error::{Error, Result};
use crate::grid::{CompositionField, GridSpec, ScalarField, DEFAULT_NODATA};

/// Sidecar naming the part grids, in part order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSidecar {
    pub parts: Vec<String>,
    /// Part name to grid file, relative to the sidecar.
    pub files: BTreeMap<String, PathBuf>,
}

impl CompositionSidecar {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: CompositionSidecar = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for p in &s.parts {
            if !s.files.contains_key(p) {
                return Err(Error::Config(format!("{}: no file for part `{p}`", path.display())));
            }
        }
        Ok(s)
    }
}

/// Reads named part grids, checks they align and closes every pixel.
/// Zero parts are replaced with `zero_replacement` when given, otherwise
/// they are an error naming the pixel.
pub fn read_composition_grids(parts: &[(String, PathBuf)], zero_replacement: Option<f64>) -> Result<CompositionField> {
    if parts.len() < 2 {
        return Err(Error::Empty("a composition needs at least two part grids"));
    }
    let mut layers = Vec::with_capacity(parts.len());
    let mut spec: Option<GridSpec> = None;
    for (name, path) in parts {
        let f = read_ascii_grid(path)?;
        match spec {
            None => spec = Some(f.spec),
            Some(s) => s.check_aligned(&f.spec, &format!("part `{name}` ({})", path.display()))?,
        }
        let mut v = f.values;
        // every layer shares the first layer's sentinel
        if let Some(s) = spec {
            if f.spec.nodata != s.nodata {
                v.iter_mut().filter(|x| f.spec.is_nodata(**x)).for_each(|x| *x = s.nodata);
            }
        }
        layers.push(v);
    }
    let spec = spec.expect("at least one part");
    let names = parts.iter().map(|(n, _)| n.clone()).collect();
    CompositionField::from_raw(spec, names, layers, zero_replacement)
}

/// Reads a composition through its sidecar.
pub fn read_composition(sidecar: impl AsRef<Path>, zero_replacement: Option<f64>) -> Result<CompositionField> {
    let sidecar = sidecar.as_ref();
    let s = CompositionSidecar::read(sidecar)?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let parts: Vec<(String, PathBuf)> = s.parts.iter().map(|p| (p.clone(), dir.join(&s.files[p]))).collect();
    read_composition_grids(&parts, zero_replacement)
}

/// Writes `<stem>_<part>.asc` per part and the sidecar `<stem>.toml` into
/// `dir`. Returns the sidecar path.
pub fn write_composition(field: &CompositionField, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut files = BTreeMap::new();
    for (k, name) in field.names().iter().enumerate() {
        let file = PathBuf::from(format!("{stem}_{name}.asc"));
        let layer = ScalarField::new(*field.spec(), field.as_multi().layers[k].clone())?;
        write_ascii_grid(&layer, dir.join(&file))?;
        files.insert(name.clone(), file);
    }
    let sidecar = CompositionSidecar { parts: field.names().to_vec(), files };
    let path = dir.join(format!("{stem}.toml"));
    let text = toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `x,y,<parts...>` rows (cell centres), skipping nodata pixels.
pub fn write_composition_csv(field: &CompositionField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend(field.names().iter().cloned());
    w.write_record(&header)?;
    let spec = field.spec();
    for i in 0..spec.len() {
        let Some(x) = field.pixel(i) else { continue };
        let (r, c) = spec.row_col(i);
        let (cx, cy) = spec.center(r, c);
        let mut row = vec![format_g17(cx), format_g17(cy)];
        row.extend(x.parts().iter().map(|v| format_g17(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `x,y,<parts...>` rows of cell centres on a regular grid. The grid
/// is the bounding box of the centres at the smallest spacing; pixels with
/// no row are nodata.
pub fn read_composition_csv(path: impl AsRef<Path>, zero_replacement: Option<f64>) -> Result<CompositionField> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 4 || !header[0].eq_ignore_ascii_case("x") || !header[1].eq_ignore_ascii_case("y") {
        return Err(Error::Parse { path: path.into(), line: 1, message: "expected header `x,y,<part>,<part>,...`".into() });
    }
    let names: Vec<String> = header[2..].to_vec();
    let mut rows: Vec<(f64, f64, Vec<f64>)> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let vals: Vec<f64> = rec
            .iter()
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse { path: path.into(), line, message: format!("`{t}` is not a number") }))
            .collect::<Result<_>>()?;
        if vals.len() != header.len() {
            return Err(Error::Parse { path: path.into(), line, message: format!("expected {} fields, found {}", header.len(), vals.len()) });
        }
        rows.push((vals[0], vals[1], vals[2..].to_vec()));
    }
    if rows.is_empty() {
        return Err(Error::Empty("composition table has no rows"));
    }
    let spacing = |coords: Vec<f64>| -> (f64, f64, usize) {
        let mut u = coords;
        u.sort_by(f64::total_cmp);
        u.dedup();
        let step = u.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let lo = u[0];
        let n = if step.is_finite() { ((u[u.len() - 1] - lo) / step).round() as usize + 1 } else { 1 };
        (lo, step, n)
    };
    let (x0, dx, ncols) = spacing(rows.iter().map(|r| r.0).collect());
    let (y0, dy, nrows) = spacing(rows.iter().map(|r| r.1).collect());
    let (dx, dy) = match (dx.is_finite(), dy.is_finite()) {
        (true, true) => (dx, dy),
        (true, false) => (dx, dx),
        (false, true) => (dy, dy),
        (false, false) => (1.0, 1.0),
    };
    let spec = GridSpec { ncols, nrows, cell_width: dx, cell_height: dy, origin_x: x0 - dx / 2.0, origin_y: y0 - dy / 2.0, nodata: DEFAULT_NODATA }
        .validated()?;
    let mut layers = vec![vec![spec.nodata; spec.len()]; names.len()];
    for (k, (x, y, v)) in rows.iter().enumerate() {
        let fc = (x - x0) / dx;
        let fr = (y - y0) / dy;
        if (fc - fc.round()).abs() > 1e-6 || (fr - fr.round()).abs() > 1e-6 {
            return Err(Error::Parse { path: path.into(), line: k + 2, message: format!("({x}, {y}) is off the {dx} x {dy} grid") });
        }
        let i = spec.index(nrows - 1 - fr.round() as usize, fc.round() as usize);
        for (l, val) in layers.iter_mut().zip(v) {
            l[i] = *val;
        }
    }
    CompositionField::from_raw(spec, names, layers, zero_replacement)
}
