//! Stochastic engines: unconditional Gaussian random fields, the synthetic
//! compositional generator and block sequential Gaussian simulation.

mod grf;
mod synthetic;

#[cfg(test)]
mod tests;

pub use grf::{simulate_grf, GrfMethod, GrfSimulator, DENSE_NODE_CAP, SEQUENTIAL_NEIGHBOURS};
pub use synthetic::{generate_synthetic_psfs, texture_names, SyntheticGenerator, SyntheticTruth, SILL_BOUNDS, SYNTHETIC_RANGE};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CoarseFineMap, CompositionField, GridSpec, MultiField};
use crate::kriging::{cache_radius, Neighbourhood};
use crate::rng::RngStream;
use crate::simplex::SimplexBasis;
use crate::trend::{predict_trend, upscale_covariates, Covariates, TrendModel};
use crate::variogram::{BlockCovarianceCache, VariogramModel};
use grf::{cell_distance, Spiral};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsgsConfig {
    /// Coarse blocks conditioning each draw.
    pub blocks: usize,
    /// Previously simulated fine pixels conditioning each draw.
    pub previous: usize,
    /// Multiplies the kriging variance of every draw. At `0` the draw is the
    /// kriged mean from the blocks alone and the realization equals the
    /// regression-kriging prediction.
    pub variance_scale: f64,
    pub pivot_tolerance: f64,
}

impl Default for BsgsConfig {
    fn default() -> Self {
        BsgsConfig { blocks: 25, previous: 16, variance_scale: 1.0, pivot_tolerance: 1e-13 }
    }
}

/// What every realization of an ensemble was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleProvenance {
    pub seed: u64,
    /// Random stream of each realization.
    pub streams: Vec<u64>,
    pub models: Vec<VariogramModel>,
    pub trend: TrendModel,
    pub config: BsgsConfig,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationEnsemble {
    pub realizations: Vec<CompositionField>,
    pub provenance: EnsembleProvenance,
}

impl SimulationEnsemble {
    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn spec(&self) -> Option<&GridSpec> {
        self.realizations.first().map(|r| r.spec())
    }

    /// Pixelwise mean of the ILR coordinates over all realizations.
    pub fn ilr_mean(&self, basis: &SimplexBasis) -> Result<MultiField> {
        let first = self.realizations.first().ok_or(Error::Empty("ensemble has no realizations"))?;
        let mut acc = first.to_ilr(basis)?;
        for r in &self.realizations[1..] {
            let c = r.to_ilr(basis)?;
            for (a, b) in acc.layers.iter_mut().zip(&c.layers) {
                for i in 0..a.len() {
                    if !acc.spec.is_nodata(a[i]) {
                        a[i] += b[i];
                    }
                }
            }
        }
        let n = self.realizations.len() as f64;
        for a in acc.layers.iter_mut() {
            for v in a.iter_mut() {
                if !acc.spec.is_nodata(*v) {
                    *v /= n;
                }
            }
        }
        Ok(acc)
    }
}

/// Everything a single-coordinate path needs, shared by all realizations.
struct Conditioner<'a> {
    map: &'a CoarseFineMap,
    model: VariogramModel,
    cache: BlockCovarianceCache,
    available: &'a [bool],
    spiral: Spiral,
    config: BsgsConfig,
}

impl Conditioner<'_> {
    /// Kriged mean and variance at `fine` from the given blocks and
    /// simulated pixels, or `None` if the joint system is singular.
    fn solve(&self, fine: usize, blocks: &[usize], points: &[usize], residuals: &[f64], sim: &[f64]) -> Option<(f64, f64)> {
        let (nb, np) = (blocks.len(), points.len());
        let m = nb + np;
        let sill = self.model.sill();
        let mut a = DMatrix::zeros(m + 1, m + 1);
        for i in 0..nb {
            for j in i..nb {
                let v = self.cache.block_block(self.map, blocks[i], blocks[j]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            for (j, &p) in points.iter().enumerate() {
                let v = self.cache.point_block(self.map, p, blocks[i]);
                a[(i, nb + j)] = v;
                a[(nb + j, i)] = v;
            }
        }
        for i in 0..np {
            a[(nb + i, nb + i)] = sill;
            for j in 0..i {
                let v = self.model.cov(cell_distance(&self.map.fine, points[i], points[j]));
                a[(nb + i, nb + j)] = v;
                a[(nb + j, nb + i)] = v;
            }
        }
        for i in 0..m {
            a[(i, m)] = 1.0;
            a[(m, i)] = 1.0;
        }
        let rhs = DVector::from_fn(m + 1, |i, _| {
            if i < nb {
                self.cache.point_block(self.map, fine, blocks[i])
            } else if i < m {
                self.model.cov(cell_distance(&self.map.fine, fine, points[i - nb]))
            } else {
                1.0
            }
        });
        let lu = a.lu();
        let u = lu.u();
        let pmax = (0..=m).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
        let pmin = (0..=m).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(pmin > self.config.pivot_tolerance * pmax) {
            return None;
        }
        let sol = lu.solve(&rhs)?;
        let mut mean = 0.0;
        for (i, &k) in blocks.iter().enumerate() {
            mean += sol[i] * residuals[k];
        }
        for (j, &p) in points.iter().enumerate() {
            mean += sol[nb + j] * sim[p];
        }
        let ws: f64 = (0..m).map(|i| sol[i] * rhs[i]).sum();
        Some((mean, sill - ws - sol[m]))
    }

    /// One residual realization along a fresh random path over `pixels`.
    fn realize(&self, pixels: &[usize], residuals: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let spec = &self.map.fine;
        let mut sim = vec![spec.nodata; spec.len()];
        let mut done = vec![false; spec.len()];
        let mut path = pixels.to_vec();
        path.shuffle(rng);
        let use_points = self.config.variance_scale > 0.0;
        for &i in &path {
            let mut blocks = self.map.nearest_blocks_among(i, self.config.blocks, Some(self.available))?;
            blocks.sort_unstable();
            let mut points = if use_points {
                let (r, c) = spec.row_col(i);
                self.spiral.nearest(spec, r, c, self.config.previous, |j| done[j])
            } else {
                Vec::new()
            };
            let (mean, var) = loop {
                if let Some(mv) = self.solve(i, &blocks, &points, residuals, &sim) {
                    break mv;
                }
                if !points.is_empty() {
                    points.truncate(points.len() / 2);
                } else if blocks.len() > 1 {
                    let keep = self.map.nearest_blocks_among(i, blocks.len() / 2, Some(self.available))?;
                    blocks = keep;
                    blocks.sort_unstable();
                } else {
                    return Err(Error::SimulationFailed { pixel: i, reason: "local kriging system is singular".into() });
                }
            };
            let z: f64 = rng.sample(StandardNormal);
            sim[i] = mean + (self.config.variance_scale * var.max(0.0)).sqrt() * z;
            done[i] = true;
        }
        Ok(sim)
    }
}

/// Block sequential Gaussian simulation of a compositional field.
///
/// Per realization and ILR coordinate, the coarse residuals (ILR data minus
/// the trend on upscaled covariates) condition a sequential simulation of
/// the fine residual along a random path. Each draw uses the nearest
/// `config.blocks` blocks and up to `config.previous` already simulated
/// pixels in one ordinary kriging system. The fine trend is added back and
/// the result mapped to the simplex. Realization `r` uses stream `r` of
/// `seed`; realizations run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn bsgs(
    coarse: &CompositionField,
    basis: &SimplexBasis,
    trend: &TrendModel,
    fine_covariates: &Covariates,
    models: &[VariogramModel],
    map: &CoarseFineMap,
    n_real: usize,
    seed: u64,
    config: &BsgsConfig,
) -> Result<SimulationEnsemble> {
    map.coarse.check_aligned(coarse.spec(), "coarse field")?;
    let d = basis.dim();
    if models.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: models.len() });
    }
    if trend.components.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: trend.components.len() });
    }
    if config.blocks == 0 || !(config.variance_scale >= 0.0) {
        return Err(Error::InvalidParameter("bsgs needs at least one block and a non-negative variance scale".into()));
    }
    let coords = coarse.to_ilr(basis)?;
    let coarse_trend = predict_trend(trend, &upscale_covariates(fine_covariates, map)?, &map.coarse)?;
    let fine_trend = predict_trend(trend, fine_covariates, &map.fine)?;
    let nodata = map.coarse.nodata;
    let residuals: Vec<Vec<f64>> = (0..d)
        .map(|c| {
            (0..map.coarse.len())
                .map(|k| {
                    if coords.is_nodata(k) || coarse_trend.is_nodata(k) {
                        nodata
                    } else {
                        coords.layers[c][k] - coarse_trend.layers[c][k]
                    }
                })
                .collect()
        })
        .collect();
    let available: Vec<bool> = (0..map.coarse.len()).map(|k| !coords.is_nodata(k) && !coarse_trend.is_nodata(k)).collect();
    if !available.iter().any(|a| *a) {
        return Err(Error::Empty("no coarse block holds data"));
    }
    let pixels: Vec<usize> = (0..map.fine.len())
        .filter(|&i| available[map.block_of(i).expect("in grid")] && !fine_trend.is_nodata(i))
        .collect();

    let radius = cache_radius(map, Neighbourhood::Local(config.blocks));
    let conditioners: Vec<Conditioner> = models
        .iter()
        .map(|m| Conditioner {
            map,
            model: *m,
            cache: BlockCovarianceCache::new(m, map, radius),
            available: &available,
            spiral: Spiral::new(&map.fine, m.range.max(map.coarse.cell_width.max(map.coarse.cell_height))),
            config: *config,
        })
        .collect();

    let one = |r: usize| -> Result<CompositionField> {
        let mut rng = RngStream::new(seed, r as u64);
        let mut layers = Vec::with_capacity(d);
        for (c, cond) in conditioners.iter().enumerate() {
            let sim = cond.realize(&pixels, &residuals[c], &mut rng)?;
            let mut layer = vec![map.fine.nodata; map.fine.len()];
            for &i in &pixels {
                layer[i] = fine_trend.layers[c][i] + sim[i];
            }
            layers.push(layer);
        }
        let names = (1..=d).map(|c| format!("ilr{c}")).collect();
        let field = CompositionField::from_ilr(&MultiField::new(map.fine, names, layers)?, basis)?;
        CompositionField::new(*field.spec(), coarse.names().to_vec(), field.into_multi().layers)
    };
    #[cfg(feature = "parallel")]
    let realizations = (0..n_real).into_par_iter().map(one).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let realizations = (0..n_real).map(one).collect::<Result<Vec<_>>>()?;

    Ok(SimulationEnsemble {
        realizations,
        provenance: EnsembleProvenance {
            seed,
            streams: (0..n_real as u64).collect(),
            models: models.to_vec(),
            trend: trend.clone(),
            config: *config,
            path: "uniform random permutation of fine pixels per realization and coordinate".into(),
        },
    })
}
