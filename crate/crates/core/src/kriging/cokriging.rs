//! Area-to-point cokriging with matrix weights under a linear model of
//! coregionalization.

use std::collections::HashMap;

use nalgebra::{DMatrix, Dyn, LU};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{cache_radius, pixel_error, KrigingConfig, Neighbourhood};
use crate::error::{Error, Result};
use crate::grid::{CoarseFineMap, MultiField};
use crate::variogram::{BlockCovarianceCache, VariogramModel};

/// One nested structure: `coreg * cov_model(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmcStructure {
    pub model: VariogramModel,
    pub coreg: DMatrix<f64>,
}

/// Cross-covariance `C_ij(h) = sum_s coreg_s[i, j] * C_s(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lmc {
    pub structures: Vec<LmcStructure>,
}

impl Lmc {
    pub fn new(structures: Vec<LmcStructure>) -> Result<Self> {
        let d = structures.first().map(|s| s.coreg.nrows()).ok_or(Error::Empty("coregionalization model"))?;
        for s in &structures {
            if s.coreg.nrows() != d || s.coreg.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, found: s.coreg.nrows() });
            }
            if (&s.coreg - s.coreg.transpose()).amax() > 1e-12 * s.coreg.amax().max(1.0) {
                return Err(Error::InvalidParameter("coregionalization matrix must be symmetric".into()));
            }
            let eig = s.coreg.clone().symmetric_eigen();
            if eig.eigenvalues.iter().any(|l| *l < -1e-12 * s.coreg.amax().max(1.0)) {
                return Err(Error::NotPositiveDefinite);
            }
        }
        Ok(Lmc { structures })
    }

    /// Uncorrelated components, each with its own model.
    pub fn diagonal(models: &[VariogramModel]) -> Self {
        let d = models.len();
        Lmc {
            structures: models
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let mut coreg = DMatrix::zeros(d, d);
                    coreg[(i, i)] = 1.0;
                    LmcStructure { model: *m, coreg }
                })
                .collect(),
        }
    }

    pub fn components(&self) -> usize {
        self.structures[0].coreg.nrows()
    }

    /// `C_ii(0)`.
    pub fn sill(&self, i: usize) -> f64 {
        self.structures.iter().map(|s| s.coreg[(i, i)] * s.model.sill()).sum()
    }
}

/// Per-pixel matrix weights: `Lambda_K[i, j]` weighs component `j` of
/// block `blocks[K]` in the prediction of component `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixWeights {
    pub blocks: Vec<usize>,
    pub lambda: Vec<DMatrix<f64>>,
}

impl MatrixWeights {
    /// Diagonal weights from per-component scalar solutions that share the
    /// same neighbour blocks.
    pub fn from_diagonal(blocks: Vec<usize>, per_component: &[Vec<f64>]) -> Self {
        let d = per_component.len();
        let lambda = (0..blocks.len())
            .map(|k| DMatrix::from_fn(d, d, |i, j| if i == j { per_component[i][k] } else { 0.0 }))
            .collect();
        MatrixWeights { blocks, lambda }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CokrigingPrediction {
    pub field: MultiField,
    pub variance: MultiField,
    pub weights: Option<Vec<Option<MatrixWeights>>>,
}

struct Cokriger<'a> {
    map: &'a CoarseFineMap,
    lmc: &'a Lmc,
    caches: Vec<BlockCovarianceCache>,
    available: Vec<bool>,
    config: KrigingConfig,
}

impl Cokriger<'_> {
    fn neighbours(&self, fine: usize) -> Result<Vec<usize>> {
        let mut blocks = match self.config.neighbourhood {
            Neighbourhood::Global => (0..self.available.len()).filter(|&k| self.available[k]).collect(),
            Neighbourhood::Local(n) => self.map.nearest_blocks_among(fine, n, Some(&self.available))?,
        };
        blocks.sort_unstable();
        Ok(blocks)
    }

    fn cross_bb(&self, i: usize, j: usize, k1: usize, k2: usize) -> f64 {
        self.lmc
            .structures
            .iter()
            .zip(&self.caches)
            .map(|(s, c)| if s.coreg[(i, j)] == 0.0 { 0.0 } else { s.coreg[(i, j)] * c.block_block(self.map, k1, k2) })
            .sum()
    }

    fn cross_pb(&self, i: usize, j: usize, fine: usize, k: usize) -> f64 {
        self.lmc
            .structures
            .iter()
            .zip(&self.caches)
            .map(|(s, c)| if s.coreg[(i, j)] == 0.0 { 0.0 } else { s.coreg[(i, j)] * c.point_block(self.map, fine, k) })
            .sum()
    }

    fn lhs(&self, blocks: &[usize]) -> DMatrix<f64> {
        let d = self.lmc.components();
        let n = blocks.len();
        let size = n * d + d;
        let mut a = DMatrix::zeros(size, size);
        for k1 in 0..n {
            for j1 in 0..d {
                let r = k1 * d + j1;
                for k2 in 0..n {
                    for j2 in 0..d {
                        a[(r, k2 * d + j2)] = self.cross_bb(j1, j2, blocks[k1], blocks[k2]);
                    }
                }
                a[(r, n * d + j1)] = 1.0;
                a[(n * d + j1, r)] = 1.0;
            }
        }
        a
    }

    fn rhs(&self, fine: usize, blocks: &[usize]) -> DMatrix<f64> {
        let d = self.lmc.components();
        let n = blocks.len();
        DMatrix::from_fn(n * d + d, d, |r, i| {
            if r < n * d {
                self.cross_pb(r % d, i, fine, blocks[r / d])
            } else if r - n * d == i {
                1.0
            } else {
                0.0
            }
        })
    }

    fn factor(&self, blocks: &[usize]) -> Result<LU<f64, Dyn, Dyn>> {
        let lu = self.lhs(blocks).lu();
        let u = lu.u();
        let n = u.nrows();
        let pmax = (0..n).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
        let pmin = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(pmin > self.config.pivot_tolerance * pmax) {
            return Err(Error::SingularSystem(format!("cokriging system over blocks {blocks:?} is numerically singular")));
        }
        Ok(lu)
    }

    #[allow(clippy::type_complexity)]
    fn block(&self, block: usize, residuals: &MultiField) -> Result<Vec<(usize, Option<(Vec<f64>, Vec<f64>, MatrixWeights)>)>> {
        let pixels = self.map.fine_pixels_of(block)?;
        if !self.available[block] {
            return Ok(pixels.into_iter().map(|i| (i, None)).collect());
        }
        let d = self.lmc.components();
        let mut factors: HashMap<Vec<usize>, LU<f64, Dyn, Dyn>> = HashMap::new();
        let mut out = Vec::with_capacity(pixels.len());
        for i in pixels {
            let blocks = self.neighbours(i)?;
            if !factors.contains_key(&blocks) {
                let lu = self.factor(&blocks).map_err(|e| pixel_error(self.map, i, e))?;
                factors.insert(blocks.clone(), lu);
            }
            let n = blocks.len();
            let rhs = self.rhs(i, &blocks);
            let sol = factors[&blocks]
                .solve(&rhs)
                .ok_or_else(|| pixel_error(self.map, i, Error::SingularSystem("cokriging system".into())))?;
            let lambda: Vec<DMatrix<f64>> = (0..n)
                .map(|k| DMatrix::from_fn(d, d, |ci, cj| sol[(k * d + cj, ci)]))
                .collect();
            let mut pred = vec![0.0; d];
            let mut var = vec![0.0; d];
            for ci in 0..d {
                let mut p = 0.0;
                let mut ws = 0.0;
                for k in 0..n {
                    for cj in 0..d {
                        let w = sol[(k * d + cj, ci)];
                        p += w * residuals.layers[cj][blocks[k]];
                        ws += w * rhs[(k * d + cj, ci)];
                    }
                }
                pred[ci] = p;
                var[ci] = self.lmc.sill(ci) - ws - sol[(n * d + ci, ci)];
            }
            out.push((i, Some((pred, var, MatrixWeights { blocks, lambda }))));
        }
        Ok(out)
    }
}

/// Cokriging of all residual components jointly. The weights satisfy
/// `sum_K Lambda_K = I`.
pub fn cokrige_residual_field(
    residuals: &MultiField,
    lmc: &Lmc,
    map: &CoarseFineMap,
    config: KrigingConfig,
) -> Result<CokrigingPrediction> {
    map.coarse.check_aligned(&residuals.spec, "coarse residuals")?;
    let d = residuals.components();
    if lmc.components() != d {
        return Err(Error::DimensionMismatch { expected: d, found: lmc.components() });
    }
    let available: Vec<bool> = (0..residuals.spec.len()).map(|k| !residuals.is_nodata(k)).collect();
    if !available.iter().any(|a| *a) {
        return Err(Error::Empty("no coarse block holds data"));
    }
    let radius = cache_radius(map, config.neighbourhood);
    let ck = Cokriger {
        map,
        lmc,
        caches: lmc.structures.iter().map(|s| BlockCovarianceCache::new(&s.model, map, radius)).collect(),
        available,
        config,
    };
    let run = |k: usize| ck.block(k, residuals);
    #[cfg(feature = "parallel")]
    let per_block: Vec<_> = (0..map.coarse.len()).into_par_iter().map(run).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_block: Vec<_> = (0..map.coarse.len()).map(run).collect::<Result<_>>()?;

    let spec = map.fine;
    let mut layers = vec![vec![spec.nodata; spec.len()]; d];
    let mut vars = vec![vec![spec.nodata; spec.len()]; d];
    let mut weights = config.keep_weights.then(|| vec![None; spec.len()]);
    for (i, s) in per_block.into_iter().flatten() {
        if let Some((p, v, w)) = s {
            for c in 0..d {
                layers[c][i] = p[c];
                vars[c][i] = v[c];
            }
            if let Some(all) = weights.as_mut() {
                all[i] = Some(w);
            }
        }
    }
    Ok(CokrigingPrediction {
        field: MultiField::new(spec, residuals.names.clone(), layers)?,
        variance: MultiField::new(spec, residuals.names.clone(), vars)?,
        weights,
    })
}
