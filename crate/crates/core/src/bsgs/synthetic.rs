//! Synthetic three-part compositional fields for benchmarking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grf::GrfSimulator;
use crate::error::{Error, Result};
use crate::grid::{CompositionField, GridSpec, MultiField};
use crate::rng::RngStream;
use crate::simplex::{closure, Composition, SimplexBasis};
use crate::variogram::VariogramModel;

pub const SYNTHETIC_RANGE: f64 = 2000.0;
pub const SILL_BOUNDS: (f64, f64) = (0.025, 2.5);

pub fn texture_names() -> Vec<String> {
    vec!["clay".into(), "silt".into(), "sand".into()]
}

/// Parameters a synthetic field was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub center: Vec<f64>,
    pub sill: f64,
    pub range: f64,
    /// Per ILR coordinate, both identical.
    pub models: Vec<VariogramModel>,
}

/// Draws fields with a random centre and a random common sill. The
/// covariance factorization is shared by every draw on the same grid.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    basis: SimplexBasis,
    unit: GrfSimulator,
}

impl SyntheticGenerator {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let basis = SimplexBasis::default_for(3).with_names(texture_names())?;
        let unit = GrfSimulator::new(&VariogramModel::spherical(0.0, 1.0, SYNTHETIC_RANGE), spec)?;
        Ok(SyntheticGenerator { basis, unit })
    }

    pub fn basis(&self) -> &SimplexBasis {
        &self.basis
    }

    pub fn spec(&self) -> &GridSpec {
        self.unit.spec()
    }

    /// Centre and sill drawn from the rng, then the field.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(CompositionField, SyntheticTruth)> {
        let raw: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let center = closure(&raw)?;
        let sill = rng.random_range(SILL_BOUNDS.0..=SILL_BOUNDS.1);
        self.sample_with(&center, sill, rng)
    }

    /// A field around a given centre with a given sill.
    pub fn sample_with<R: Rng + ?Sized>(&self, center: &Composition, sill: f64, rng: &mut R) -> Result<(CompositionField, SyntheticTruth)> {
        if !(sill >= 0.0) || center.len() != 3 {
            return Err(Error::InvalidParameter("synthetic fields need three parts and a non-negative sill".into()));
        }
        let mu = self.basis.ilr(center)?;
        let sd = sill.sqrt();
        let spec = *self.unit.spec();
        let mut layers = Vec::with_capacity(2);
        for &m in &mu.0 {
            let g = self.unit.sample(rng)?;
            layers.push(g.values.iter().map(|v| m + sd * v).collect());
        }
        let coords = MultiField::new(spec, vec!["ilr1".into(), "ilr2".into()], layers)?;
        let field = CompositionField::from_ilr(&coords, &self.basis)?;
        let model = VariogramModel::spherical(0.0, sill, SYNTHETIC_RANGE);
        Ok((
            field,
            SyntheticTruth { center: center.parts().to_vec(), sill, range: SYNTHETIC_RANGE, models: vec![model; 2] },
        ))
    }
}

/// One synthetic clay/silt/sand field; realization `0` of `seed`.
pub fn generate_synthetic_psfs(spec: &GridSpec, seed: u64) -> Result<(CompositionField, SyntheticTruth)> {
    SyntheticGenerator::new(spec)?.sample(&mut RngStream::new(seed, 0))
}
