//! Iterative deconvolution of an areal (block-support) variogram into a
//! point-support model.
//!
//! A candidate point model is regularized to the block support and compared
//! with the fitted block model at the coarse lags. The point values are then
//! rescaled lag by lag by `1 + (gamma_V - gamma_reg) / (s2_V * sqrt(i))` and
//! refitted. A candidate that does not lower the discrepancy is discarded
//! and the rescaling is halved.

use serde::{Deserialize, Serialize};

use super::{fit, regularize, EmpiricalVariogram, Family, VariogramModel};
use crate::error::Result;
use crate::grid::CoarseFineMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeconvolutionSettings {
    pub max_iter: usize,
    /// Relative improvement below which an iteration counts as stalled.
    pub tolerance: f64,
    /// Consecutive stalled iterations that end the search.
    pub patience: usize,
}

impl Default for DeconvolutionSettings {
    fn default() -> Self {
        DeconvolutionSettings { max_iter: 35, tolerance: 1e-3, patience: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deconvolution {
    pub model: VariogramModel,
    pub coarse_fit: VariogramModel,
    /// Count-weighted mean relative difference between the regularized
    /// point model and the block model at the coarse lags.
    pub discrepancy: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit first.
    pub converged: bool,
    pub settings: DeconvolutionSettings,
}

/// Fits the block model to `coarse_emp` and deconvolves it.
pub fn deconvolve(
    coarse_emp: &EmpiricalVariogram,
    map: &CoarseFineMap,
    family: Family,
    settings: DeconvolutionSettings,
) -> Result<Deconvolution> {
    let coarse = fit(coarse_emp, family)?;
    run(coarse_emp, coarse, map, settings)
}

/// Deconvolves a block model given without an empirical variogram; the
/// comparison lags are multiples of the block size.
pub fn deconvolve_model(
    coarse: &VariogramModel,
    map: &CoarseFineMap,
    settings: DeconvolutionSettings,
) -> Result<Deconvolution> {
    let step = map.coarse.cell_width;
    let n = ((1.5 * coarse.range / step).ceil() as usize).clamp(5, 60);
    let lags: Vec<f64> = (1..=n).map(|k| k as f64 * step).collect();
    let gamma = lags.iter().map(|h| coarse.gamma(*h)).collect();
    let emp = EmpiricalVariogram::from_columns(lags, gamma, vec![1; n])?;
    run(&emp, *coarse, map, settings)
}

fn run(
    emp: &EmpiricalVariogram,
    coarse: VariogramModel,
    map: &CoarseFineMap,
    settings: DeconvolutionSettings,
) -> Result<Deconvolution> {
    if map.p() == 1 {
        return Ok(Deconvolution {
            model: coarse,
            coarse_fit: coarse,
            discrepancy: 0.0,
            iterations: 0,
            converged: true,
            settings,
        });
    }
    let bmin = map.coarse.cell_width.min(map.coarse.cell_height);
    let max_lag = emp
        .bins
        .iter()
        .flat_map(|b| b.offsets.iter().map(|o| o.0.abs().max(o.1.abs())))
        .chain(emp.lags.iter().copied())
        .fold(0.0, f64::max);
    let radius = (max_lag / bmin).ceil() as usize + 1;

    let target: Vec<f64> = emp.lags.iter().map(|h| coarse.gamma(*h)).collect();
    let counts: Vec<f64> = emp.counts.iter().map(|c| *c as f64).collect();
    let s2 = coarse.sill();
    let regularized = |m: &VariogramModel| regularize(m, map, radius).at_lags(emp);
    let discrepancy = |reg: &[f64]| {
        let (mut s, mut n) = (0.0, 0.0);
        for i in 0..reg.len() {
            if target[i] > 0.0 {
                s += counts[i] * (reg[i] - target[i]).abs() / target[i];
                n += counts[i];
            }
        }
        if n > 0.0 {
            s / n
        } else {
            0.0
        }
    };

    let reg0 = regularize(&coarse, map, radius);
    let inflate = if reg0.sill() > 0.0 { s2 / reg0.sill() } else { 1.0 };
    let mut best = coarse.scaled(inflate);
    let mut best_reg = regularized(&best);
    let mut best_d = discrepancy(&best_reg);
    let rescale = |reg: &[f64], iter: usize| -> Vec<f64> {
        reg.iter()
            .zip(&target)
            .map(|(r, t)| 1.0 + (t - r) / (s2 * (iter as f64).sqrt()))
            .collect()
    };
    let mut weights = rescale(&best_reg, 1);
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=settings.max_iter {
        iterations = iter;
        if best_d == 0.0 {
            converged = true;
            break;
        }
        let values: Vec<f64> = emp
            .lags
            .iter()
            .zip(&weights)
            .map(|(h, w)| (best.gamma(*h) * w).max(0.0))
            .collect();
        let improvement = match fit(&emp.with_values(values), coarse.family) {
            Ok(candidate) => {
                let reg = regularized(&candidate);
                let d = discrepancy(&reg);
                if d < best_d {
                    let rel = (best_d - d) / best_d;
                    best = candidate;
                    best_reg = reg;
                    best_d = d;
                    weights = rescale(&best_reg, iter + 1);
                    rel
                } else {
                    0.0
                }
            }
            Err(_) => 0.0,
        };
        if improvement == 0.0 {
            for w in weights.iter_mut() {
                *w = 1.0 + (*w - 1.0) / 2.0;
            }
        }
        if improvement < settings.tolerance {
            stalled += 1;
            if stalled >= settings.patience {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }
    if !converged {
        log::warn!(
            "deconvolution stopped at the iteration cap ({}) with discrepancy {:.4}",
            settings.max_iter,
            best_d
        );
    }
    Ok(Deconvolution {
        model: best,
        coarse_fit: coarse,
        discrepancy: best_d,
        iterations,
        converged,
        settings,
    })
}
