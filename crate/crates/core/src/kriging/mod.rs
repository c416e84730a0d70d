//! Area-to-point kriging of block residuals onto the fine grid.

mod cokriging;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CoarseFineMap, MultiField, ScalarField};
use crate::variogram::{BlockCovarianceCache, VariogramModel};

pub use cokriging::{cokrige_residual_field, CokrigingPrediction, Lmc, LmcStructure, MatrixWeights};

/// Which coarse blocks inform each fine pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighbourhood {
    /// The `n` nearest blocks (the pixel's own block always among them).
    Local(usize),
    /// Every valid block.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrigingConfig {
    pub neighbourhood: Neighbourhood,
    /// Smallest acceptable pivot relative to the largest.
    pub pivot_tolerance: f64,
    /// Keep per-pixel weights in the output.
    pub keep_weights: bool,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        KrigingConfig {
            neighbourhood: Neighbourhood::Local(25),
            pivot_tolerance: 1e-13,
            keep_weights: false,
        }
    }
}

impl KrigingConfig {
    pub fn global() -> Self {
        KrigingConfig { neighbourhood: Neighbourhood::Global, ..Default::default() }
    }

    pub fn with_weights(mut self) -> Self {
        self.keep_weights = true;
        self
    }
}

/// Bordered system `[[S, 1], [1^T, 0]] [w; mu] = [s; 1]` for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingSystem {
    pub blocks: Vec<usize>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub weights: Vec<f64>,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtpkSolution {
    pub prediction: f64,
    pub blocks: Vec<usize>,
    pub weights: Vec<f64>,
    pub variance: f64,
}

/// Block-block covariance `(1/P^2) sum_ij C(x_i, x_j)` by direct summation.
pub fn block_block_cov(model: &VariogramModel, k1: usize, k2: usize, map: &CoarseFineMap) -> Result<f64> {
    let (k1, k2) = (k1.min(k2), k1.max(k2));
    let a = map.fine_pixels_of(k1)?;
    let b = map.fine_pixels_of(k2)?;
    let mut s = 0.0;
    for &i in &a {
        for &j in &b {
            s += model.cov(fine_distance(map, i, j));
        }
    }
    Ok(s / (a.len() * b.len()) as f64)
}

/// Point-block covariance `(1/P) sum_i C(x_i, x_k)` by direct summation.
pub fn point_block_cov(model: &VariogramModel, fine: usize, block: usize, map: &CoarseFineMap) -> Result<f64> {
    if fine >= map.fine.len() {
        return Err(Error::OutOfRange(format!("fine pixel {fine}")));
    }
    let b = map.fine_pixels_of(block)?;
    Ok(b.iter().map(|&j| model.cov(fine_distance(map, fine, j))).sum::<f64>() / b.len() as f64)
}

fn fine_distance(map: &CoarseFineMap, i: usize, j: usize) -> f64 {
    let (r1, c1) = map.fine.row_col(i);
    let (r2, c2) = map.fine.row_col(j);
    let dx = (c1 as f64 - c2 as f64) * map.fine.cell_width;
    let dy = (r1 as f64 - r2 as f64) * map.fine.cell_height;
    (dx * dx + dy * dy).sqrt()
}

/// Tabulation radius (in blocks) that covers a neighbourhood.
pub(crate) fn cache_radius(map: &CoarseFineMap, neighbourhood: Neighbourhood) -> usize {
    let full = map.coarse.ncols.max(map.coarse.nrows);
    match neighbourhood {
        Neighbourhood::Global => full,
        Neighbourhood::Local(n) => ((n as f64).sqrt().ceil() as usize + 2).min(full),
    }
}

/// Solver for one scalar residual component over a fixed map.
pub struct Atpk<'a> {
    map: &'a CoarseFineMap,
    cache: BlockCovarianceCache,
    sill: f64,
    available: Vec<bool>,
    config: KrigingConfig,
}

impl<'a> Atpk<'a> {
    /// `available[K]` marks blocks holding data.
    pub fn new(model: &VariogramModel, map: &'a CoarseFineMap, available: Vec<bool>, config: KrigingConfig) -> Result<Self> {
        if available.len() != map.coarse.len() {
            return Err(Error::DimensionMismatch { expected: map.coarse.len(), found: available.len() });
        }
        if !available.iter().any(|a| *a) {
            return Err(Error::Empty("no coarse block holds data"));
        }
        if let Neighbourhood::Local(0) = config.neighbourhood {
            return Err(Error::InvalidParameter("neighbourhood size must be at least 1".into()));
        }
        let cache = BlockCovarianceCache::new(model, map, cache_radius(map, config.neighbourhood));
        Ok(Atpk { map, cache, sill: model.sill(), available, config })
    }

    pub fn from_field(model: &VariogramModel, map: &'a CoarseFineMap, residuals: &ScalarField, config: KrigingConfig) -> Result<Self> {
        map.coarse.check_aligned(&residuals.spec, "coarse residuals")?;
        let available = (0..residuals.spec.len()).map(|k| !residuals.is_nodata(k)).collect();
        Atpk::new(model, map, available, config)
    }

    pub fn cache(&self) -> &BlockCovarianceCache {
        &self.cache
    }

    /// Neighbour blocks of a fine pixel, sorted by block index.
    pub fn neighbours(&self, fine: usize) -> Result<Vec<usize>> {
        let mut blocks = match self.config.neighbourhood {
            Neighbourhood::Global => (0..self.available.len()).filter(|&k| self.available[k]).collect(),
            Neighbourhood::Local(n) => self.map.nearest_blocks_among(fine, n, Some(&self.available))?,
        };
        blocks.sort_unstable();
        Ok(blocks)
    }

    fn lhs(&self, blocks: &[usize]) -> DMatrix<f64> {
        let n = blocks.len();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in i..n {
                let v = self.cache.block_block(self.map, blocks[i], blocks[j]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        a
    }

    fn rhs(&self, fine: usize, blocks: &[usize]) -> DVector<f64> {
        let n = blocks.len();
        DVector::from_fn(n + 1, |i, _| if i < n { self.cache.point_block(self.map, fine, blocks[i]) } else { 1.0 })
    }

    fn factor(&self, blocks: &[usize]) -> Result<LU<f64, Dyn, Dyn>> {
        let a = self.lhs(blocks);
        let lu = a.clone().lu();
        let u = lu.u();
        let n = u.nrows();
        let pmax = (0..n).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
        let pmin = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(pmin > self.config.pivot_tolerance * pmax) {
            return Err(singular_error(&a, blocks));
        }
        Ok(lu)
    }

    /// Assembles and solves the system for one fine pixel.
    pub fn system(&self, fine: usize) -> Result<KrigingSystem> {
        let blocks = self.neighbours(fine)?;
        let lu = self.factor(&blocks)?;
        let rhs = self.rhs(fine, &blocks);
        let sol = lu.solve(&rhs).ok_or_else(|| singular_error(&self.lhs(&blocks), &blocks))?;
        let n = blocks.len();
        Ok(KrigingSystem {
            matrix: self.lhs(&blocks),
            weights: sol.rows(0, n).iter().copied().collect(),
            mu: sol[n],
            rhs,
            blocks,
        })
    }

    fn finish(&self, blocks: Vec<usize>, rhs: &DVector<f64>, sol: &DVector<f64>, residuals: &[f64]) -> AtpkSolution {
        let n = blocks.len();
        let weights: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let prediction = weights.iter().zip(&blocks).map(|(w, &k)| w * residuals[k]).sum();
        let ws: f64 = weights.iter().zip(rhs.iter()).map(|(w, s)| w * s).sum();
        AtpkSolution { prediction, blocks, weights, variance: self.sill - ws - sol[n] }
    }

    /// Prediction at one fine pixel from block residuals (indexed by block).
    pub fn predict(&self, fine: usize, residuals: &[f64]) -> Result<AtpkSolution> {
        self.predict_with(fine, self.neighbours(fine)?, residuals)
    }

    /// Prediction from an explicit neighbour list, kept in the given order.
    pub fn predict_with(&self, fine: usize, blocks: Vec<usize>, residuals: &[f64]) -> Result<AtpkSolution> {
        if blocks.is_empty() {
            return Err(Error::Empty("kriging needs at least one neighbour block"));
        }
        let lu = self.factor(&blocks)?;
        let rhs = self.rhs(fine, &blocks);
        let sol = lu.solve(&rhs).ok_or_else(|| singular_error(&self.lhs(&blocks), &blocks))?;
        Ok(self.finish(blocks, &rhs, &sol, residuals))
    }

    /// Solves every fine pixel of one block, sharing factorizations among
    /// pixels with the same neighbour set. Pixels of unavailable blocks get
    /// `None`.
    pub(crate) fn predict_block(&self, block: usize, residuals: &[f64]) -> Result<Vec<(usize, Option<AtpkSolution>)>> {
        let pixels = self.map.fine_pixels_of(block)?;
        if !self.available[block] {
            return Ok(pixels.into_iter().map(|i| (i, None)).collect());
        }
        let mut factors: HashMap<Vec<usize>, LU<f64, Dyn, Dyn>> = HashMap::new();
        let mut out = Vec::with_capacity(pixels.len());
        for i in pixels {
            let blocks = self.neighbours(i)?;
            if !factors.contains_key(&blocks) {
                let lu = self.factor(&blocks).map_err(|e| pixel_error(self.map, i, e))?;
                factors.insert(blocks.clone(), lu);
            }
            let rhs = self.rhs(i, &blocks);
            let sol = factors[&blocks]
                .solve(&rhs)
                .ok_or_else(|| pixel_error(self.map, i, singular_error(&self.lhs(&blocks), &blocks)))?;
            out.push((i, Some(self.finish(blocks, &rhs, &sol, residuals))));
        }
        Ok(out)
    }

    /// Predictions and variances over the whole fine grid.
    pub fn predict_field(&self, residuals: &[f64]) -> Result<FieldSolution> {
        let nblocks = self.map.coarse.len();
        let run = |k: usize| self.predict_block(k, residuals);
        #[cfg(feature = "parallel")]
        let per_block: Vec<_> = (0..nblocks).into_par_iter().map(run).collect::<Result<_>>()?;
        #[cfg(not(feature = "parallel"))]
        let per_block: Vec<_> = (0..nblocks).map(run).collect::<Result<_>>()?;
        let nodata = self.map.fine.nodata;
        let len = self.map.fine.len();
        let mut sol = FieldSolution {
            prediction: vec![nodata; len],
            variance: vec![nodata; len],
            weights: if self.config.keep_weights { Some(vec![None; len]) } else { None },
        };
        for (i, s) in per_block.into_iter().flatten() {
            if let Some(s) = s {
                sol.prediction[i] = s.prediction;
                sol.variance[i] = s.variance;
                if let Some(w) = sol.weights.as_mut() {
                    w[i] = Some((s.blocks, s.weights));
                }
            }
        }
        Ok(sol)
    }
}

/// Raw per-pixel outputs for one component.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub prediction: Vec<f64>,
    pub variance: Vec<f64>,
    pub weights: Option<Vec<Option<(Vec<usize>, Vec<f64>)>>>,
}

fn pixel_error(map: &CoarseFineMap, pixel: usize, e: Error) -> Error {
    let (row, col) = map.fine.row_col(pixel);
    Error::InvalidPixel { pixel, row, col, source: Box::new(e) }
}

fn singular_error(a: &DMatrix<f64>, blocks: &[usize]) -> Error {
    let n = blocks.len();
    let mut dup = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let same = (0..n).all(|c| (a[(i, c)] - a[(j, c)]).abs() <= 1e-12 * a[(i, i)].abs().max(1e-300));
            if same {
                dup.push(format!("{}~{}", blocks[i], blocks[j]));
            }
        }
    }
    if dup.is_empty() {
        Error::SingularSystem(format!("kriging system over blocks {blocks:?} is numerically singular"))
    } else {
        Error::SingularSystem(format!("indistinguishable blocks {}", dup.join(", ")))
    }
}

/// Single-pixel area-to-point kriging of a coarse residual field.
pub fn solve_atpk(
    target: usize,
    residuals: &ScalarField,
    model: &VariogramModel,
    map: &CoarseFineMap,
    config: KrigingConfig,
) -> Result<AtpkSolution> {
    Atpk::from_field(model, map, residuals, config)?.predict(target, &residuals.values)
}

/// Kriged fine residuals, one layer per component.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPrediction {
    pub field: MultiField,
    pub variance: MultiField,
    /// Per component, per fine pixel: neighbour blocks and weights.
    pub weights: Option<Vec<Vec<Option<(Vec<usize>, Vec<f64>)>>>>,
}

/// Componentwise area-to-point kriging with one model per component and
/// no cross-covariance between components.
pub fn predict_residual_field(
    residuals: &MultiField,
    models: &[VariogramModel],
    map: &CoarseFineMap,
    config: KrigingConfig,
) -> Result<ResidualPrediction> {
    map.coarse.check_aligned(&residuals.spec, "coarse residuals")?;
    if models.len() != residuals.components() {
        return Err(Error::DimensionMismatch { expected: residuals.components(), found: models.len() });
    }
    let available: Vec<bool> = (0..residuals.spec.len()).map(|k| !residuals.is_nodata(k)).collect();
    let mut layers = Vec::new();
    let mut variances = Vec::new();
    let mut weights = config.keep_weights.then(Vec::new);
    for (layer, model) in residuals.layers.iter().zip(models) {
        let sol = Atpk::new(model, map, available.clone(), config)?.predict_field(layer)?;
        layers.push(sol.prediction);
        variances.push(sol.variance);
        if let (Some(all), Some(w)) = (weights.as_mut(), sol.weights) {
            all.push(w);
        }
    }
    let spec = map.fine;
    Ok(ResidualPrediction {
        field: MultiField::new(spec, residuals.names.clone(), layers)?,
        variance: MultiField::new(spec, residuals.names.clone(), variances)?,
        weights,
    })
}

#[cfg(test)]
mod tests;
