use super::block::BlockCovarianceCache;
use super::{EmpiricalVariogram, VariogramModel};
use crate::grid::CoarseFineMap;

/// Block-support semivariogram of a point model:
/// `gamma_V(d) = Cbar(0) - Cbar(d)`.
#[derive(Debug, Clone)]
pub struct RegularizedVariogram {
    cache: BlockCovarianceCache,
    block_w: f64,
    block_h: f64,
    within: f64,
}

/// Regularizes `point` to the block support of `map`. Displacements up to
/// `radius` blocks are tabulated.
pub fn regularize(point: &VariogramModel, map: &CoarseFineMap, radius: usize) -> RegularizedVariogram {
    let cache = BlockCovarianceCache::new(point, map, radius);
    let within = cache.block_block_offset(0, 0);
    RegularizedVariogram {
        cache,
        block_w: map.coarse.cell_width,
        block_h: map.coarse.cell_height,
        within,
    }
}

impl RegularizedVariogram {
    /// Block sill: the variance of block averages.
    pub fn sill(&self) -> f64 {
        self.within
    }

    /// Semivariance between two blocks displaced by `(dx, dy)` metres.
    pub fn gamma_offset(&self, dx: f64, dy: f64) -> f64 {
        if dx == 0.0 && dy == 0.0 {
            return 0.0;
        }
        let (cx, cy) = (dx / self.block_w, dy / self.block_h);
        let c = if cx.fract() == 0.0 && cy.fract() == 0.0 {
            self.cache.block_block_offset(cx as i64, cy as i64)
        } else {
            self.cache.block_block_metric(dx, dy)
        };
        self.within - c
    }

    /// Semivariance at distance `h` along the x axis.
    pub fn gamma(&self, h: f64) -> f64 {
        self.gamma_offset(h, 0.0)
    }

    /// Values at the lag classes of `emp`, averaging over each class's grid
    /// displacements weighted by pair counts when they are known.
    pub fn at_lags(&self, emp: &EmpiricalVariogram) -> Vec<f64> {
        (0..emp.len())
            .map(|i| match emp.bins.get(i) {
                Some(bin) if !bin.offsets.is_empty() => {
                    let (mut s, mut n) = (0.0, 0.0);
                    for &(dx, dy, c) in &bin.offsets {
                        s += c as f64 * self.gamma_offset(dx, dy);
                        n += c as f64;
                    }
                    s / n
                }
                _ => self.gamma(emp.lags[i]),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_support_reproduces_point_model() {
        let map = CoarseFineMap::square(GridSpec::new(10, 10, 25.0).unwrap(), 1).unwrap();
        let m = VariogramModel::spherical(0.1, 0.9, 120.0);
        let reg = regularize(&m, &map, 6);
        assert_abs_diff_eq!(reg.sill(), m.sill(), epsilon = 1e-15);
        for h in [25.0, 50.0, 100.0, 175.0, 1000.0, 33.3] {
            assert_abs_diff_eq!(reg.gamma(h), m.gamma(h), epsilon = 1e-14);
        }
    }

    #[test]
    fn pure_nugget_block_sill_vanishes() {
        let map = CoarseFineMap::square(GridSpec::new(20, 20, 1.0).unwrap(), 10).unwrap();
        let m = VariogramModel::spherical(1.0, 0.0, 5.0);
        let reg = regularize(&m, &map, 1);
        assert!(reg.sill() < 0.02);
        assert_abs_diff_eq!(reg.gamma(10.0), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn block_sill_never_exceeds_point_sill() {
        let map = CoarseFineMap::new(GridSpec::new(24, 24, 20.0).unwrap(), 4, 3).unwrap();
        for (n, ps, a) in [(0.0, 1.0, 200.0), (0.3, 0.2, 60.0), (0.0, 5.0, 2000.0), (1.0, 1.0, 10.0)] {
            let m = VariogramModel::spherical(n, ps, a);
            let reg = regularize(&m, &map, 3);
            assert!(reg.sill() <= m.sill());
            for k in 1..40 {
                let g = reg.gamma(k as f64 * 80.0);
                assert!(g <= m.sill() + 1e-12 && g >= -1e-12);
            }
        }
    }
}
