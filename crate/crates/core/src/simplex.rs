//! Aitchison geometry on the open simplex.
//!
//! Compositions are strictly positive part vectors closed to unit sum. The
//! vector-space operations (perturbation, powering), the Aitchison inner
//! product and the isometric log-ratio (ILR) coordinates all live here.
//! Log-ratio arithmetic goes through the centred log-ratio (clr) vector,
//! which is kept internal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sums within this distance of one are accepted as closed.
pub const UNIT_SUM_TOL: f64 = 1e-9;
/// Sums within this distance of one are re-closed silently.
pub const RECLOSE_TOL: f64 = 1e-6;

/// A point of the open simplex: `p >= 2` strictly positive parts summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    parts: Vec<f64>,
}

impl Composition {
    /// Validates an (almost) closed vector. Sums off by less than
    /// [`RECLOSE_TOL`] are re-closed; anything further is rejected.
    pub fn new(parts: Vec<f64>) -> Result<Self> {
        check_positive(&parts)?;
        let sum: f64 = parts.iter().sum();
        let err = (sum - 1.0).abs();
        if err <= UNIT_SUM_TOL {
            Ok(Composition { parts })
        } else if err <= RECLOSE_TOL {
            Ok(Composition {
                parts: parts.iter().map(|v| v / sum).collect(),
            })
        } else {
            Err(Error::NotClosed { sum })
        }
    }

    /// The neutral element `(1/p, ..., 1/p)`.
    pub fn neutral(p: usize) -> Self {
        Composition {
            parts: vec![1.0 / p as f64; p],
        }
    }

    pub fn parts(&self) -> &[f64] {
        &self.parts
    }

    pub fn into_parts(self) -> Vec<f64> {
        self.parts
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    /// Centred log-ratio vector: `ln x_i - mean_j ln x_j`.
    pub fn clr(&self) -> Vec<f64> {
        let logs: Vec<f64> = self.parts.iter().map(|v| v.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        logs.into_iter().map(|l| l - mean).collect()
    }

    /// Inverse of [`Composition::clr`]; any additive constant is absorbed by the closure.
    pub fn from_log(logs: &[f64]) -> Self {
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = raw.iter().sum();
        Composition {
            parts: raw.into_iter().map(|v| v / sum).collect(),
        }
    }

    pub fn perturb(&self, other: &Composition) -> Result<Composition> {
        perturb(self, other)
    }

    pub fn power(&self, alpha: f64) -> Composition {
        power(alpha, self)
    }

    /// `self ⊖ other`, perturbation by the reciprocal.
    pub fn difference(&self, other: &Composition) -> Result<Composition> {
        same_dim(self.len(), other.len())?;
        Ok(Composition::from_log(
            &self
                .parts
                .iter()
                .zip(&other.parts)
                .map(|(a, b)| a.ln() - b.ln())
                .collect::<Vec<_>>(),
        ))
    }
}

fn check_positive(parts: &[f64]) -> Result<()> {
    if parts.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: parts.len(),
        });
    }
    for (index, &value) in parts.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositivePart { index, value });
        }
    }
    Ok(())
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        })
    } else {
        Ok(())
    }
}

/// Rescales a positive vector to unit sum.
pub fn closure(raw: &[f64]) -> Result<Composition> {
    check_positive(raw)?;
    let sum: f64 = raw.iter().sum();
    Ok(Composition {
        parts: raw.iter().map(|v| v / sum).collect(),
    })
}

/// Perturbation `x ⊕ y`.
pub fn perturb(x: &Composition, y: &Composition) -> Result<Composition> {
    same_dim(x.len(), y.len())?;
    let logs: Vec<f64> = x
        .parts
        .iter()
        .zip(&y.parts)
        .map(|(a, b)| a.ln() + b.ln())
        .collect();
    Ok(Composition::from_log(&logs))
}

/// Powering `alpha ⊙ x`.
pub fn power(alpha: f64, x: &Composition) -> Composition {
    let logs: Vec<f64> = x.parts.iter().map(|v| alpha * v.ln()).collect();
    Composition::from_log(&logs)
}

pub fn aitchison_inner(x: &Composition, y: &Composition) -> Result<f64> {
    same_dim(x.len(), y.len())?;
    Ok(x.clr().iter().zip(y.clr()).map(|(a, b)| a * b).sum())
}

pub fn aitchison_norm(x: &Composition) -> f64 {
    x.clr().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn aitchison_dist(x: &Composition, y: &Composition) -> Result<f64> {
    same_dim(x.len(), y.len())?;
    let (cx, cy) = (x.clr(), y.clr());
    Ok(cx
        .iter()
        .zip(&cy)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Matrix-by-composition product `A ⊡ x`.
///
/// The row products `prod_j x_j^{A_ij}` are evaluated on the clr
/// representative of `x`, so the result does not depend on the scale of `x`
/// and `A ⊡ (x ⊕ y) = (A ⊡ x) ⊕ (A ⊡ y)` holds for every `A`.
pub fn boxdot(a: &DMatrix<f64>, x: &Composition) -> Result<Composition> {
    let p = x.len();
    if a.nrows() != p || a.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: if a.nrows() != p { a.nrows() } else { a.ncols() },
        });
    }
    let clr = DVector::from_vec(x.clr());
    let logs = a * clr;
    Ok(Composition::from_log(logs.as_slice()))
}

/// Aitchison center: closure of the part-wise geometric means.
pub fn center(xs: &[Composition]) -> Result<Composition> {
    let first = xs.first().ok_or(Error::Empty("center of an empty set"))?;
    let p = first.len();
    let mut acc = vec![0.0; p];
    for x in xs {
        same_dim(p, x.len())?;
        for (a, v) in acc.iter_mut().zip(&x.parts) {
            *a += v.ln();
        }
    }
    let n = xs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Composition::from_log(&acc))
}

/// Multiplicative replacement of zero parts by `delta`, followed by closure.
///
/// Non-zero parts are shrunk so that the replaced vector keeps the original
/// ratios between non-zero parts.
pub fn replace_zeros(raw: &[f64], delta: f64) -> Result<Composition> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "detection limit must lie in (0, 1), got {delta}"
        )));
    }
    for (index, &value) in raw.iter().enumerate() {
        if value < 0.0 || !value.is_finite() {
            return Err(Error::NonPositivePart { index, value });
        }
    }
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::NonPositivePart {
            index: 0,
            value: 0.0,
        });
    }
    let zeros = raw.iter().filter(|v| **v == 0.0).count() as f64;
    let shrink = 1.0 - zeros * delta;
    if shrink <= 0.0 {
        return Err(Error::InvalidParameter(
            "too many zero parts for the detection limit".into(),
        ));
    }
    let replaced: Vec<f64> = raw
        .iter()
        .map(|v| if *v == 0.0 { delta } else { v / sum * shrink })
        .collect();
    closure(&replaced)
}

/// Coordinates of a composition in an orthonormal simplex basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlrCoords(pub Vec<f64>);

impl IlrCoords {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sequential binary partition, stored as a sign code: row `i` marks parts
/// with `+1` / `-1` on the two sides of split `i` and `0` for uninvolved parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub signs: Vec<Vec<i8>>,
}

impl Partition {
    /// Splits `{0..=i} | {i+1}` for `i = 0..p-1`. For three parts this is
    /// `{1}|{2}` followed by `{1,2}|{3}`.
    pub fn default_for(p: usize) -> Self {
        let signs = (0..p.saturating_sub(1))
            .map(|i| {
                (0..p)
                    .map(|j| match j.cmp(&(i + 1)) {
                        std::cmp::Ordering::Less => 1,
                        std::cmp::Ordering::Equal => -1,
                        std::cmp::Ordering::Greater => 0,
                    })
                    .collect()
            })
            .collect();
        Partition { signs }
    }

    /// Parses rows such as `"+-0;++-"` (separators `;` or newlines).
    pub fn parse(text: &str) -> Result<Self> {
        let signs = text
            .split([';', '\n'])
            .map(str::trim)
            .filter(|row| !row.is_empty())
            .map(|row| {
                row.chars()
                    .filter(|c| !c.is_whitespace() && *c != ',')
                    .map(|c| match c {
                        '+' | '1' => Ok(1),
                        '-' => Ok(-1),
                        '0' => Ok(0),
                        other => Err(Error::InvalidPartition(format!(
                            "unexpected symbol `{other}`"
                        ))),
                    })
                    .collect::<Result<Vec<i8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Partition { signs })
    }

    pub fn parts(&self) -> usize {
        self.signs.first().map_or(0, Vec::len)
    }

    /// Checks that the rows describe a full binary tree over the parts.
    pub fn validate(&self) -> Result<()> {
        let p = self.parts();
        if p < 2 {
            return Err(Error::InvalidPartition("need at least two parts".into()));
        }
        if self.signs.len() != p - 1 {
            return Err(Error::InvalidPartition(format!(
                "{} parts need {} splits, found {}",
                p,
                p - 1,
                self.signs.len()
            )));
        }
        for (i, row) in self.signs.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidPartition(format!("row {i} has {} entries", row.len())));
            }
        }
        // rows may come in any order; check the hierarchy top-down
        let mut order: Vec<usize> = (0..self.signs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.signs[i].iter().filter(|s| **s != 0).count()));
        // groups still waiting to be split
        let mut open: Vec<Vec<usize>> = vec![(0..p).collect()];
        for i in order {
            let row = &self.signs[i];
            let plus: Vec<usize> = (0..p).filter(|&j| row[j] > 0).collect();
            let minus: Vec<usize> = (0..p).filter(|&j| row[j] < 0).collect();
            if plus.is_empty() || minus.is_empty() {
                return Err(Error::InvalidPartition(format!("row {i} has an empty side")));
            }
            let mut group: Vec<usize> = plus.iter().chain(&minus).copied().collect();
            group.sort_unstable();
            let pos = open.iter().position(|g| *g == group).ok_or_else(|| {
                Error::InvalidPartition(format!("row {i} does not split an unsplit group"))
            })?;
            open.swap_remove(pos);
            if plus.len() > 1 {
                open.push(plus);
            }
            if minus.len() > 1 {
                open.push(minus);
            }
        }
        if !open.is_empty() {
            return Err(Error::InvalidPartition("some groups are never split".into()));
        }
        Ok(())
    }
}

/// Orthonormal basis of the simplex held as a `(p-1) x p` contrast matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexBasis {
    contrast: DMatrix<f64>,
    part_names: Vec<String>,
}

const BASIS_TOL: f64 = 1e-12;

impl SimplexBasis {
    /// Wraps a contrast matrix after checking orthonormal, zero-sum rows.
    pub fn from_contrast(contrast: DMatrix<f64>, part_names: Vec<String>) -> Result<Self> {
        let p = contrast.ncols();
        if p < 2 || contrast.nrows() != p - 1 {
            return Err(Error::InvalidBasis(format!(
                "contrast matrix must be (p-1) x p, got {} x {}",
                contrast.nrows(),
                p
            )));
        }
        if part_names.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: part_names.len(),
            });
        }
        let gram = &contrast * contrast.transpose();
        let off = (gram - DMatrix::identity(p - 1, p - 1)).amax();
        // tolerance scales with size to absorb rounding in user-built rotations
        if off > BASIS_TOL * p as f64 * 10.0 {
            return Err(Error::InvalidBasis(format!("rows not orthonormal ({off:e})")));
        }
        for (i, row) in contrast.row_iter().enumerate() {
            if row.sum().abs() > BASIS_TOL * p as f64 * 10.0 {
                return Err(Error::InvalidBasis(format!("row {i} does not sum to zero")));
            }
        }
        Ok(SimplexBasis {
            contrast,
            part_names,
        })
    }

    pub fn default_for(p: usize) -> Self {
        build_sbp_basis(&Partition::default_for(p)).expect("default partition is valid")
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.parts() {
            return Err(Error::DimensionMismatch {
                expected: self.parts(),
                found: names.len(),
            });
        }
        self.part_names = names;
        Ok(self)
    }

    /// Rotates the basis by an orthogonal `(p-1) x (p-1)` matrix `q`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Result<Self> {
        if q.nrows() != self.dim() || q.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: q.nrows(),
            });
        }
        SimplexBasis::from_contrast(q * &self.contrast, self.part_names.clone())
    }

    pub fn contrast(&self) -> &DMatrix<f64> {
        &self.contrast
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    /// Number of parts `p`.
    pub fn parts(&self) -> usize {
        self.contrast.ncols()
    }

    /// Number of coordinates `p - 1`.
    pub fn dim(&self) -> usize {
        self.contrast.nrows()
    }

    /// The basis elements `psi_i` as compositions.
    pub fn elements(&self) -> Vec<Composition> {
        self.contrast
            .row_iter()
            .map(|row| Composition::from_log(&row.iter().copied().collect::<Vec<_>>()))
            .collect()
    }

    /// Coordinate-space image `V A V^T` of a `p x p` matrix acting by `⊡`.
    pub fn coordinate_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.contrast * a * self.contrast.transpose()
    }

    /// Lifts a coordinate-space matrix to `V^T M V`, its `⊡` counterpart.
    pub fn lift_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.contrast.transpose() * m * &self.contrast
    }

    pub fn ilr(&self, x: &Composition) -> Result<IlrCoords> {
        ilr(x, self)
    }

    pub fn ilr_inv(&self, y: &[f64]) -> Result<Composition> {
        ilr_inv_slice(y, self)
    }
}

/// Builds the orthonormal contrast matrix of a sequential binary partition.
pub fn build_sbp_basis(partition: &Partition) -> Result<SimplexBasis> {
    partition.validate()?;
    let p = partition.parts();
    let mut v = DMatrix::zeros(p - 1, p);
    for (i, row) in partition.signs.iter().enumerate() {
        let r = row.iter().filter(|s| **s > 0).count() as f64;
        let s = row.iter().filter(|s| **s < 0).count() as f64;
        let scale = (r * s / (r + s)).sqrt();
        for (j, sign) in row.iter().enumerate() {
            v[(i, j)] = match sign {
                1 => scale / r,
                -1 => -scale / s,
                _ => 0.0,
            };
        }
    }
    let names = (1..=p).map(|i| format!("part{i}")).collect();
    SimplexBasis::from_contrast(v, names)
}

pub fn ilr(x: &Composition, basis: &SimplexBasis) -> Result<IlrCoords> {
    same_dim(basis.parts(), x.len())?;
    let logs = DVector::from_iterator(x.len(), x.parts.iter().map(|v| v.ln()));
    Ok(IlrCoords((basis.contrast() * logs).as_slice().to_vec()))
}

pub fn ilr_inv(y: &IlrCoords, basis: &SimplexBasis) -> Result<Composition> {
    ilr_inv_slice(&y.0, basis)
}

fn ilr_inv_slice(y: &[f64], basis: &SimplexBasis) -> Result<Composition> {
    same_dim(basis.dim(), y.len())?;
    let logs = basis.contrast().transpose() * DVector::from_column_slice(y);
    Ok(Composition::from_log(logs.as_slice()))
}
