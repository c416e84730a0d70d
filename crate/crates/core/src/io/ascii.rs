//! ESRI ASCII grids.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, DEFAULT_NODATA};

/// `printf("%.17g")`: 17 significant digits, trailing zeros dropped.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mant), exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (16 - exp) as usize, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Parses grid text; `path` only labels errors.
pub fn parse_ascii_grid(text: &str, path: &Path) -> Result<ScalarField> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centred = (false, false);
    let mut cellsize = None;
    let mut dx = None;
    let mut dy = None;
    let mut nodata = DEFAULT_NODATA;

    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(i, line)) = lines.peek() {
        let mut tok = line.split_whitespace();
        let Some(key) = tok.next() else {
            lines.next();
            continue;
        };
        let lower = key.to_ascii_lowercase();
        if !lower.starts_with(|c: char| c.is_ascii_alphabetic()) || lower == "nan" || lower.starts_with("inf") {
            break;
        }
        let value = tok.next().ok_or_else(|| parse_err(path, i + 1, format!("header key `{key}` has no value")))?;
        if tok.next().is_some() {
            return Err(parse_err(path, i + 1, format!("header line `{line}` has extra fields")));
        }
        let num = |v: &str| v.parse::<f64>().map_err(|_| parse_err(path, i + 1, format!("`{v}` is not a number")));
        let count = |v: &str| v.parse::<usize>().map_err(|_| parse_err(path, i + 1, format!("`{v}` is not a count")));
        match lower.as_str() {
            "ncols" => ncols = Some(count(value)?),
            "nrows" => nrows = Some(count(value)?),
            "xllcorner" => xll = Some(num(value)?),
            "yllcorner" => yll = Some(num(value)?),
            "xllcenter" => {
                xll = Some(num(value)?);
                centred.0 = true;
            }
            "yllcenter" => {
                yll = Some(num(value)?);
                centred.1 = true;
            }
            "cellsize" => cellsize = Some(num(value)?),
            "dx" => dx = Some(num(value)?),
            "dy" => dy = Some(num(value)?),
            "nodata_value" => nodata = num(value)?,
            _ => return Err(parse_err(path, i + 1, format!("unknown header key `{key}`"))),
        }
        lines.next();
    }
    let header_end = lines.peek().map_or(text.lines().count(), |(i, _)| *i);
    let missing = |k: &str| parse_err(path, header_end.max(1), format!("header lacks `{k}`"));
    let ncols = ncols.ok_or_else(|| missing("NCOLS"))?;
    let nrows = nrows.ok_or_else(|| missing("NROWS"))?;
    let w = dx.or(cellsize).ok_or_else(|| missing("CELLSIZE"))?;
    let h = dy.or(cellsize).ok_or_else(|| missing("CELLSIZE"))?;
    let mut x0 = xll.ok_or_else(|| missing("XLLCORNER"))?;
    let mut y0 = yll.ok_or_else(|| missing("YLLCORNER"))?;
    if centred.0 {
        x0 -= w / 2.0;
    }
    if centred.1 {
        y0 -= h / 2.0;
    }
    let spec = GridSpec { ncols, nrows, cell_width: w, cell_height: h, origin_x: x0, origin_y: y0, nodata }
        .validated()
        .map_err(|e| parse_err(path, header_end.max(1), e.to_string()))?;

    let mut values = Vec::with_capacity(spec.len());
    let mut rows = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows == nrows {
            return Err(parse_err(path, i + 1, format!("more than {nrows} data rows")));
        }
        let before = values.len();
        for t in line.split_whitespace() {
            values.push(t.parse::<f64>().map_err(|_| parse_err(path, i + 1, format!("`{t}` is not a number")))?);
        }
        let got = values.len() - before;
        if got != ncols {
            return Err(parse_err(path, i + 1, format!("expected {ncols} values, found {got}")));
        }
        rows += 1;
    }
    if rows != nrows {
        return Err(parse_err(path, text.lines().count().max(1), format!("expected {nrows} data rows, found {rows}")));
    }
    ScalarField::new(spec, values)
}

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text, path)
}

pub fn format_ascii_grid(field: &ScalarField) -> String {
    let s = &field.spec;
    let mut out = String::with_capacity(s.len() * 20 + 200);
    writeln!(out, "NCOLS {}", s.ncols).unwrap();
    writeln!(out, "NROWS {}", s.nrows).unwrap();
    writeln!(out, "XLLCORNER {}", format_g17(s.origin_x)).unwrap();
    writeln!(out, "YLLCORNER {}", format_g17(s.origin_y)).unwrap();
    if s.cell_width == s.cell_height {
        writeln!(out, "CELLSIZE {}", format_g17(s.cell_width)).unwrap();
    } else {
        writeln!(out, "DX {}", format_g17(s.cell_width)).unwrap();
        writeln!(out, "DY {}", format_g17(s.cell_height)).unwrap();
    }
    writeln!(out, "NODATA_VALUE {}", format_g17(s.nodata)).unwrap();
    for r in 0..s.nrows {
        let row = &field.values[r * s.ncols..(r + 1) * s.ncols];
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format_g17(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_ascii_grid(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_ascii_grid(field)).map_err(|e| Error::io(path, e))
}
