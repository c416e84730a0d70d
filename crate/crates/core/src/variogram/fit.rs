//! Weighted least-squares variogram fitting.
//!
//! For a fixed range the model is linear in `(nugget, psill)`, so those two
//! are solved exactly (with non-negativity) and only the range is searched:
//! a log-spaced grid followed by golden-section refinement around the best
//! grid point. Weights are `N(h) / h^2`.

use super::{EmpiricalVariogram, Family, VariogramModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub model: VariogramModel,
    /// Weighted sum of squared residuals.
    pub objective: f64,
}

const GRID_POINTS: usize = 80;

pub fn fit(emp: &EmpiricalVariogram, family: Family) -> Result<VariogramModel> {
    fit_report(emp, family).map(|r| r.model)
}

pub fn fit_report(emp: &EmpiricalVariogram, family: Family) -> Result<FitReport> {
    let pts: Vec<(f64, f64, f64)> = emp
        .lags
        .iter()
        .zip(&emp.gamma)
        .zip(&emp.counts)
        .filter(|((h, g), n)| **n > 0 && **h > 0.0 && g.is_finite())
        .map(|((h, g), n)| (*h, *g, *n as f64 / (h * h)))
        .collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateVariogram(format!(
            "need at least 3 informative lags, found {}",
            pts.len()
        )));
    }
    let gmax = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    if !(gmax > 0.0) {
        return Err(Error::DegenerateVariogram("all semivariances are zero".into()));
    }
    // normalize weights to keep the objective scale-free
    let wsum: f64 = pts.iter().map(|p| p.2).sum();
    let pts: Vec<(f64, f64, f64)> = pts.iter().map(|&(h, g, w)| (h, g, w / wsum)).collect();

    let hmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hmax = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let (lo, hi) = ((0.25 * hmin).ln(), (3.0 * hmax).ln());

    let eval = |log_range: f64| solve_linear(&pts, family, log_range.exp());
    let grid: Vec<(f64, FitReport)> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .map(|x| (x, eval(x)))
        .collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.objective.total_cmp(&b.1 .1.objective))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let (mut a, mut b) = (grid[best].0 - step, grid[best].0 + step);
    a = a.max(lo);
    b = b.min(hi);

    // golden-section search on the bracketing interval
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = eval(x1);
    let mut f2 = eval(x2);
    for _ in 0..100 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if f1.objective <= f2.objective {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = eval(x2);
        }
    }
    let refined = if f1.objective <= f2.objective { f1 } else { f2 };
    Ok(if refined.objective <= grid[best].1.objective {
        refined
    } else {
        grid[best].1
    })
}

/// Non-negative weighted least squares for `gamma = nugget + psill * shape(h)`.
fn solve_linear(pts: &[(f64, f64, f64)], family: Family, range: f64) -> FitReport {
    let unit = VariogramModel { family, nugget: 0.0, psill: 1.0, range };
    let (mut sw, mut ss, mut sss, mut sg, mut ssg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(h, g, w) in pts {
        let s = unit.shape(h);
        sw += w;
        ss += w * s;
        sss += w * s * s;
        sg += w * g;
        ssg += w * s * g;
    }
    let det = sw * sss - ss * ss;
    let mut candidates = Vec::with_capacity(3);
    // full solution when the columns are not collinear
    if det > 1e-14 * sw * sss {
        let nugget = (sss * sg - ss * ssg) / det;
        let psill = (sw * ssg - ss * sg) / det;
        if nugget >= 0.0 && psill >= 0.0 {
            candidates.push((nugget, psill));
        }
    }
    // psill only
    if sss > 0.0 {
        candidates.push((0.0, (ssg / sss).max(0.0)));
    }
    // nugget only
    candidates.push(((sg / sw).max(0.0), 0.0));
    let objective = |n: f64, p: f64| -> f64 {
        pts.iter()
            .map(|&(h, g, w)| {
                let r = g - (n + p * unit.shape(h));
                w * r * r
            })
            .sum()
    };
    let (nugget, psill, obj) = candidates
        .into_iter()
        .map(|(n, p)| (n, p, objective(n, p)))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("at least one candidate");
    FitReport {
        model: VariogramModel { family, nugget, psill, range },
        objective: obj,
    }
}
