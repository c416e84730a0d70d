//! Unconditional stationary Gaussian random fields on a grid.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::{Mat, Par};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::variogram::VariogramModel;

/// Largest grid simulated through one dense covariance factorization.
pub const DENSE_NODE_CAP: usize = 20_000;

/// Conditioning nodes per step of the sequential fallback.
pub const SEQUENTIAL_NEIGHBOURS: usize = 24;

/// Largest search radius of the sequential fallback, in cells.
const MAX_SEARCH_CELLS: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrfMethod {
    /// Zero sill: every draw is the zero field.
    Zero,
    Dense,
    Sequential,
}

/// Cell offsets sorted by distance, for nearest-neighbour search on a grid.
#[derive(Debug, Clone)]
pub(crate) struct Spiral {
    offsets: Vec<(i64, i64, f64)>,
}

impl Spiral {
    /// Offsets `(drow, dcol, metres)` within `radius` metres, nearest first,
    /// excluding the origin.
    pub(crate) fn new(spec: &GridSpec, radius: f64) -> Self {
        let rc = (radius / spec.cell_width).ceil().min(spec.ncols as f64) as i64;
        let rr = (radius / spec.cell_height).ceil().min(spec.nrows as f64) as i64;
        let mut offsets = Vec::new();
        for dr in -rr..=rr {
            for dc in -rc..=rc {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let dx = dc as f64 * spec.cell_width;
                let dy = dr as f64 * spec.cell_height;
                let d = (dx * dx + dy * dy).sqrt();
                if d <= radius {
                    offsets.push((dr, dc, d));
                }
            }
        }
        offsets.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        Spiral { offsets }
    }

    /// Up to `count` nearest cells around `(row, col)` accepted by `keep`.
    pub(crate) fn nearest(&self, spec: &GridSpec, row: usize, col: usize, count: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        for &(dr, dc, _) in &self.offsets {
            let r = row as i64 + dr;
            let c = col as i64 + dc;
            if r < 0 || c < 0 || r >= spec.nrows as i64 || c >= spec.ncols as i64 {
                continue;
            }
            let k = spec.index(r as usize, c as usize);
            if keep(k) {
                out.push(k);
                if out.len() == count {
                    break;
                }
            }
        }
        out
    }
}

pub(crate) fn cell_distance(spec: &GridSpec, i: usize, j: usize) -> f64 {
    let (r1, c1) = spec.row_col(i);
    let (r2, c2) = spec.row_col(j);
    let dx = (c1 as f64 - c2 as f64) * spec.cell_width;
    let dy = (r1 as f64 - r2 as f64) * spec.cell_height;
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone)]
struct SequentialPlan {
    spiral: Spiral,
    top_stride: usize,
}

/// A simulator prepared once for a `(model, grid)` pair; each call to
/// [`GrfSimulator::sample`] draws an independent realization.
///
/// Grids up to [`DENSE_NODE_CAP`] nodes use the lower Cholesky factor of the
/// full covariance matrix. Larger grids are simulated node by node along a
/// multigrid random path, each node drawn from its simple-kriging
/// distribution given the nearest already simulated nodes.
#[derive(Debug, Clone)]
pub struct GrfSimulator {
    model: VariogramModel,
    spec: GridSpec,
    method: GrfMethod,
    factor: Option<Mat<f64>>,
    plan: Option<SequentialPlan>,
}

impl GrfSimulator {
    pub fn new(model: &VariogramModel, spec: &GridSpec) -> Result<Self> {
        Self::with_cap(model, spec, DENSE_NODE_CAP)
    }

    /// As [`GrfSimulator::new`] with a custom dense-factorization cap.
    pub fn with_cap(model: &VariogramModel, spec: &GridSpec, cap: usize) -> Result<Self> {
        let spec = spec.validated()?;
        let mut sim = GrfSimulator { model: *model, spec, method: GrfMethod::Zero, factor: None, plan: None };
        if model.sill() == 0.0 {
            return Ok(sim);
        }
        if spec.len() <= cap {
            sim.method = GrfMethod::Dense;
            sim.factor = Some(dense_factor(model, &spec)?);
        } else {
            sim.method = GrfMethod::Sequential;
            let radius = model
                .range
                .max(spec.cell_width.max(spec.cell_height))
                .min(MAX_SEARCH_CELLS * spec.cell_width.max(spec.cell_height));
            let radius_cells = radius / spec.cell_width.max(spec.cell_height);
            let limit = (radius_cells / 2.0).min(spec.ncols.max(spec.nrows) as f64 / 4.0).max(1.0);
            let mut top_stride = 1;
            while ((top_stride * 2) as f64) <= limit {
                top_stride *= 2;
            }
            sim.plan = Some(SequentialPlan { spiral: Spiral::new(&spec, radius), top_stride });
        }
        Ok(sim)
    }

    pub fn method(&self) -> GrfMethod {
        self.method
    }

    pub fn model(&self) -> &VariogramModel {
        &self.model
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ScalarField> {
        let n = self.spec.len();
        let values = match self.method {
            GrfMethod::Zero => vec![0.0; n],
            GrfMethod::Dense => {
                let l = self.factor.as_ref().expect("dense factor");
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let mut x = vec![0.0; n];
                for (j, &zj) in z.iter().enumerate() {
                    let col = l.col_as_slice(j);
                    for i in j..n {
                        x[i] += col[i] * zj;
                    }
                }
                x
            }
            GrfMethod::Sequential => self.sequential(rng)?,
        };
        ScalarField::new(self.spec, values)
    }

    fn sequential<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let plan = self.plan.as_ref().expect("sequential plan");
        let spec = &self.spec;
        let n = spec.len();
        let sill = self.model.sill();
        let mut values = vec![0.0; n];
        let mut done = vec![false; n];
        let mut stride = plan.top_stride;
        loop {
            let mut level: Vec<usize> = (0..n)
                .filter(|&k| {
                    let (r, c) = spec.row_col(k);
                    r % stride == 0 && c % stride == 0 && !done[k]
                })
                .collect();
            level.shuffle(rng);
            for k in level {
                let (r, c) = spec.row_col(k);
                let mut near = plan.spiral.nearest(spec, r, c, SEQUENTIAL_NEIGHBOURS, |j| done[j]);
                let (mean, var) = loop {
                    match simple_kriging(&self.model, spec, k, &near, &values) {
                        Some(mv) => break mv,
                        None if near.is_empty() => {
                            return Err(Error::SimulationFailed { pixel: k, reason: "unconditional draw failed".into() })
                        }
                        None => near.truncate(near.len() / 2),
                    }
                };
                let z: f64 = rng.sample(StandardNormal);
                values[k] = mean + var.clamp(0.0, sill).sqrt() * z;
                done[k] = true;
            }
            if stride == 1 {
                break;
            }
            stride /= 2;
        }
        Ok(values)
    }
}

/// Simple kriging with zero mean: `(mean, variance)` at `target`, or `None`
/// if the system is not positive definite.
fn simple_kriging(model: &VariogramModel, spec: &GridSpec, target: usize, near: &[usize], values: &[f64]) -> Option<(f64, f64)> {
    let sill = model.sill();
    if near.is_empty() {
        return Some((0.0, sill));
    }
    let m = near.len();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = sill * (1.0 + 1e-10);
        for j in 0..i {
            let v = model.cov(cell_distance(spec, near[i], near[j]));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let b = DVector::from_fn(m, |i, _| model.cov(cell_distance(spec, target, near[i])));
    let w = a.cholesky()?.solve(&b);
    let mean = near.iter().zip(w.iter()).map(|(&j, wi)| wi * values[j]).sum();
    Some((mean, sill - w.dot(&b)))
}

/// Lower Cholesky factor of the grid covariance matrix, with `1e-10 * sill`
/// added to the diagonal. Only the lower triangle of the result is valid.
fn dense_factor(model: &VariogramModel, spec: &GridSpec) -> Result<Mat<f64>> {
    let n = spec.len();
    let jitter = 1e-10 * model.sill();
    let mut a = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let (rj, cj) = spec.row_col(j);
        let col = a.col_as_slice_mut(j);
        for (i, v) in col.iter_mut().enumerate().skip(j) {
            let (ri, ci) = spec.row_col(i);
            let dx = (ci as f64 - cj as f64) * spec.cell_width;
            let dy = (ri as f64 - rj as f64) * spec.cell_height;
            *v = model.cov((dx * dx + dy * dy).sqrt());
        }
        col[j] += jitter;
    }
    let par = Par::Seq;
    let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, par, Default::default()));
    cholesky_in_place(a.as_mut(), Default::default(), par, MemStack::new(&mut mem), Default::default())
        .map_err(|_| Error::NotPositiveDefinite)?;
    Ok(a)
}

/// One realization of a zero-mean Gaussian field with the model covariance.
pub fn simulate_grf<R: Rng + ?Sized>(model: &VariogramModel, spec: &GridSpec, rng: &mut R) -> Result<ScalarField> {
    GrfSimulator::new(model, spec)?.sample(rng)
}
