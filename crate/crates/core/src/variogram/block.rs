use std::fmt;
use std::sync::Arc;

use super::VariogramModel;
use crate::grid::CoarseFineMap;

type CovFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Block-averaged covariances over the discretization given by the fine
/// pixel centres of each block.
///
/// Values are tabulated for block offsets up to `radius` blocks in each
/// direction; anything further out is computed on demand. The cache is
/// immutable once built, so concurrent reads need no locking.
#[derive(Clone)]
pub struct BlockCovarianceCache {
    cov: CovFn,
    fx: usize,
    fy: usize,
    w: f64,
    h: f64,
    radius: usize,
    /// Point-block values indexed by the fine-cell offset from the point to
    /// the block's first pixel, `u` in `[-(R+1)fx+1, R fx]`.
    pb: Vec<f64>,
    pb_cols: usize,
    /// Block-block values indexed by absolute block offset.
    bb: Vec<f64>,
}

impl fmt::Debug for BlockCovarianceCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockCovarianceCache")
            .field("fx", &self.fx)
            .field("fy", &self.fy)
            .field("radius", &self.radius)
            .finish()
    }
}

impl BlockCovarianceCache {
    pub fn new(model: &VariogramModel, map: &CoarseFineMap, radius: usize) -> Self {
        let m = *model;
        Self::from_fn(move |d| m.cov(d), map, radius)
    }

    /// Cache for an arbitrary isotropic covariance function.
    pub fn from_fn(cov: impl Fn(f64) -> f64 + Send + Sync + 'static, map: &CoarseFineMap, radius: usize) -> Self {
        let (fx, fy) = (map.fx, map.fy);
        let (w, h) = (map.fine.cell_width, map.fine.cell_height);
        let ux = (radius + 1) * fx;
        let uy = (radius + 1) * fy;
        // point covariance at absolute fine offsets
        let t: Vec<f64> = (0..=uy)
            .flat_map(|dv| (0..=ux).map(move |du| (du, dv)))
            .map(|(du, dv)| cov(((du as f64 * w).powi(2) + (dv as f64 * h).powi(2)).sqrt()))
            .collect();
        let t_at = |du: i64, dv: i64| t[dv.unsigned_abs() as usize * (ux + 1) + du.unsigned_abs() as usize];

        let u_lo = -(((radius + 1) * fx) as i64) + 1;
        let v_lo = -(((radius + 1) * fy) as i64) + 1;
        let pb_cols = (2 * radius + 1) * fx;
        let pb_rows = (2 * radius + 1) * fy;
        // separable box sums: first along x, then along y
        let mut sx = vec![0.0; pb_cols * (uy + 1)];
        for dv in 0..=uy {
            for iu in 0..pb_cols {
                let u = u_lo + iu as i64;
                sx[dv * pb_cols + iu] = (0..fx as i64).map(|j| t_at(u + j, dv as i64)).sum();
            }
        }
        let p = (fx * fy) as f64;
        let mut pb = vec![0.0; pb_cols * pb_rows];
        for iv in 0..pb_rows {
            let v = v_lo + iv as i64;
            for iu in 0..pb_cols {
                let s: f64 = (0..fy as i64).map(|i| sx[(v + i).unsigned_abs() as usize * pb_cols + iu]).sum();
                pb[iv * pb_cols + iu] = s / p;
            }
        }
        let mut cache = BlockCovarianceCache {
            cov: Arc::new(cov),
            fx,
            fy,
            w,
            h,
            radius,
            pb,
            pb_cols,
            bb: Vec::new(),
        };
        let mut bb = vec![0.0; (radius + 1) * (radius + 1)];
        for dr in 0..=radius {
            for dc in 0..=radius {
                let mut s = 0.0;
                for lr in 0..fy as i64 {
                    for lc in 0..fx as i64 {
                        s += cache.point_block_offset(dc as i64 * fx as i64 - lc, dr as i64 * fy as i64 - lr);
                    }
                }
                bb[dr * (radius + 1) + dc] = s / p;
            }
        }
        cache.bb = bb;
        cache
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Point covariance.
    pub fn point(&self, d: f64) -> f64 {
        (self.cov)(d)
    }

    /// Covariance between a fine pixel and a block whose first (top-left)
    /// pixel lies `(u, v)` fine cells away in (column, row) direction.
    pub fn point_block_offset(&self, u: i64, v: i64) -> f64 {
        let u_lo = -(((self.radius + 1) * self.fx) as i64) + 1;
        let v_lo = -(((self.radius + 1) * self.fy) as i64) + 1;
        let iu = u - u_lo;
        let iv = v - v_lo;
        let rows = self.pb.len() / self.pb_cols;
        if iu >= 0 && iv >= 0 && (iu as usize) < self.pb_cols && (iv as usize) < rows {
            return self.pb[iv as usize * self.pb_cols + iu as usize];
        }
        let mut s = 0.0;
        for i in 0..self.fy as i64 {
            for j in 0..self.fx as i64 {
                let dx = (u + j) as f64 * self.w;
                let dy = (v + i) as f64 * self.h;
                s += (self.cov)((dx * dx + dy * dy).sqrt());
            }
        }
        s / (self.fx * self.fy) as f64
    }

    /// Covariance between two blocks `(dc, dr)` blocks apart.
    pub fn block_block_offset(&self, dc: i64, dr: i64) -> f64 {
        let (ac, ar) = (dc.unsigned_abs() as usize, dr.unsigned_abs() as usize);
        if ac <= self.radius && ar <= self.radius {
            return self.bb[ar * (self.radius + 1) + ac];
        }
        self.block_block_metric(dc as f64 * (self.fx as f64 * self.w), dr as f64 * (self.fy as f64 * self.h))
    }

    /// Block-block covariance for an arbitrary displacement in metres,
    /// using the triangular weighting of intra-block offsets.
    pub fn block_block_metric(&self, dx: f64, dy: f64) -> f64 {
        let (dx, dy) = (dx.abs(), dy.abs());
        let (fx, fy) = (self.fx as i64, self.fy as i64);
        let mut s = 0.0;
        for b in -(fy - 1)..fy {
            let wy = (fy - b.abs()) as f64;
            for a in -(fx - 1)..fx {
                let wx = (fx - a.abs()) as f64;
                let ex = dx + a as f64 * self.w;
                let ey = dy + b as f64 * self.h;
                s += wx * wy * (self.cov)((ex * ex + ey * ey).sqrt());
            }
        }
        let p = (self.fx * self.fy) as f64;
        s / (p * p)
    }

    /// Covariance between fine pixel `fine` and block `block` under `map`.
    pub fn point_block(&self, map: &CoarseFineMap, fine: usize, block: usize) -> f64 {
        let (r, c) = map.fine.row_col(fine);
        let (br, bc) = map.coarse.row_col(block);
        self.point_block_offset(
            (bc * self.fx) as i64 - c as i64,
            (br * self.fy) as i64 - r as i64,
        )
    }

    pub fn block_block(&self, map: &CoarseFineMap, k1: usize, k2: usize) -> f64 {
        let (r1, c1) = map.coarse.row_col(k1);
        let (r2, c2) = map.coarse.row_col(k2);
        self.block_block_offset(c2 as i64 - c1 as i64, r2 as i64 - r1 as i64)
    }
}
