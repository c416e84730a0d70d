use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// Grid displacements (in metres) that fall into one lag class, with the
/// number of valid pixel pairs found at each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LagBin {
    pub offsets: Vec<(f64, f64, u64)>,
}

/// Method-of-moments semivariogram estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    /// Mean pair distance per lag class.
    pub lags: Vec<f64>,
    pub gamma: Vec<f64>,
    pub counts: Vec<u64>,
    /// Displacements behind each class; empty when the estimate did not
    /// come from a grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bins: Vec<LagBin>,
}

impl EmpiricalVariogram {
    /// Builds an estimate from plain lag/value/count columns.
    pub fn from_columns(lags: Vec<f64>, gamma: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if lags.len() != gamma.len() || lags.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: lags.len(),
                found: gamma.len().min(counts.len()),
            });
        }
        Ok(EmpiricalVariogram { lags, gamma, counts, bins: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    /// Same lag structure with new semivariance values.
    pub fn with_values(&self, gamma: Vec<f64>) -> Self {
        EmpiricalVariogram { gamma, ..self.clone() }
    }
}

/// Default binning: lag width = `lag_cell` (the coarse cell size), maximum
/// distance = half the grid diagonal.
pub fn default_lag_settings(spec: &GridSpec) -> (f64, f64) {
    let w = spec.cell_width.max(spec.cell_height);
    let dx = spec.ncols as f64 * spec.cell_width;
    let dy = spec.nrows as f64 * spec.cell_height;
    (w, 0.5 * (dx * dx + dy * dy).sqrt())
}

/// Omnidirectional estimate `gamma(h) = 1/(2 N(h)) sum (e_i - e_j)^2` over
/// pixel pairs. Class `i` collects distances in `((i - 1/2) w, (i + 1/2) w]`.
pub fn empirical_variogram(field: &ScalarField, lag_width: f64, max_dist: f64) -> Result<EmpiricalVariogram> {
    if !(lag_width > 0.0 && max_dist > 0.0) {
        return Err(Error::InvalidParameter("lag width and maximum distance must be positive".into()));
    }
    let spec = field.spec;
    let valid = field.valid().count();
    if valid < 2 {
        return Err(Error::Empty("variogram needs at least two valid pixels"));
    }
    let max_dr = ((max_dist / spec.cell_height).floor() as usize).min(spec.nrows - 1);
    let max_dc = ((max_dist / spec.cell_width).floor() as usize).min(spec.ncols - 1);
    // half plane of displacements: dr > 0, or dr == 0 and dc > 0
    let mut offsets = Vec::new();
    for dr in 0..=max_dr as i64 {
        for dc in -(max_dc as i64)..=max_dc as i64 {
            if dr == 0 && dc <= 0 {
                continue;
            }
            let dx = dc as f64 * spec.cell_width;
            let dy = dr as f64 * spec.cell_height;
            let d = (dx * dx + dy * dy).sqrt();
            if d <= max_dist {
                offsets.push((dr, dc, d));
            }
        }
    }
    let nodata: Vec<bool> = (0..spec.len()).map(|i| field.is_nodata(i)).collect();
    let stat = |&(dr, dc, d): &(i64, i64, f64)| {
        let (mut sum, mut n) = (0.0, 0u64);
        let c_lo = (-dc).max(0) as usize;
        let c_hi = (spec.ncols as i64 - dc.max(0)) as usize;
        for r in 0..spec.nrows - dr as usize {
            let r2 = r + dr as usize;
            for c in c_lo..c_hi {
                let i = r * spec.ncols + c;
                let j = r2 * spec.ncols + (c as i64 + dc) as usize;
                if nodata[i] || nodata[j] {
                    continue;
                }
                let diff = field.values[i] - field.values[j];
                sum += diff * diff;
                n += 1;
            }
        }
        (dr, dc, d, sum, n)
    };
    #[cfg(feature = "parallel")]
    let stats: Vec<_> = offsets.par_iter().map(stat).collect();
    #[cfg(not(feature = "parallel"))]
    let stats: Vec<_> = offsets.iter().map(stat).collect();

    let nbins = (max_dist / lag_width + 0.5).floor() as usize + 1;
    let mut sums = vec![0.0; nbins];
    let mut dsum = vec![0.0; nbins];
    let mut counts = vec![0u64; nbins];
    let mut bins = vec![LagBin::default(); nbins];
    for (dr, dc, d, sum, n) in stats {
        if n == 0 {
            continue;
        }
        let b = ((d / lag_width - 0.5).ceil().max(0.0) as usize).min(nbins - 1);
        sums[b] += sum;
        dsum[b] += d * n as f64;
        counts[b] += n;
        bins[b].offsets.push((dc as f64 * spec.cell_width, dr as f64 * spec.cell_height, n));
    }
    let mut out = EmpiricalVariogram { lags: vec![], gamma: vec![], counts: vec![], bins: vec![] };
    for b in 0..nbins {
        if counts[b] == 0 {
            continue;
        }
        out.lags.push(dsum[b] / counts[b] as f64);
        out.gamma.push(0.5 * sums[b] / counts[b] as f64);
        out.counts.push(counts[b]);
        out.bins.push(std::mem::take(&mut bins[b]));
    }
    Ok(out)
}
