//! Isotropic variogram models, empirical estimation on grids, weighted
//! fitting, block regularization and deconvolution from areal data.

mod block;
mod deconvolution;
mod empirical;
mod fit;
mod regularize;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use block::BlockCovarianceCache;
pub use deconvolution::{deconvolve, deconvolve_model, Deconvolution, DeconvolutionSettings};
pub use empirical::{default_lag_settings, empirical_variogram, EmpiricalVariogram, LagBin};
pub use fit::{fit, fit_report, FitReport};
pub use regularize::{regularize, RegularizedVariogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Spherical,
    Exponential,
    Gaussian,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spherical" | "sph" => Ok(Family::Spherical),
            "exponential" | "exp" => Ok(Family::Exponential),
            "gaussian" | "gau" => Ok(Family::Gaussian),
            other => Err(Error::InvalidParameter(format!("unknown variogram family `{other}`"))),
        }
    }
}

/// `range` is the distance at which the spherical model reaches its sill;
/// for the exponential and gaussian families it is the practical range
/// (95% of the partial sill).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub family: Family,
    pub nugget: f64,
    pub psill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(family: Family, nugget: f64, psill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0 && psill >= 0.0) {
            return Err(Error::InvalidParameter("nugget and partial sill must be >= 0".into()));
        }
        if !(range > 0.0) {
            return Err(Error::InvalidParameter("range must be > 0".into()));
        }
        Ok(VariogramModel { family, nugget, psill, range })
    }

    pub fn spherical(nugget: f64, psill: f64, range: f64) -> Self {
        VariogramModel::new(Family::Spherical, nugget, psill, range).expect("valid spherical model")
    }

    /// `nugget + psill`.
    pub fn sill(&self) -> f64 {
        self.nugget + self.psill
    }

    /// Unit-sill structured part, zero at the origin.
    pub(crate) fn shape(&self, h: f64) -> f64 {
        let r = h / self.range;
        match self.family {
            Family::Spherical => {
                if r >= 1.0 {
                    1.0
                } else {
                    1.5 * r - 0.5 * r * r * r
                }
            }
            Family::Exponential => 1.0 - (-3.0 * r).exp(),
            Family::Gaussian => 1.0 - (-3.0 * r * r).exp(),
        }
    }

    /// Semivariance at distance `h` (`h >= 0`); zero at the origin.
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.nugget + self.psill * self.shape(h)
        }
    }

    /// Covariance `C(h) = sill - gamma(h)`; `C(0)` includes the nugget.
    pub fn cov(&self, h: f64) -> f64 {
        self.sill() - self.gamma(h)
    }

    pub fn try_gamma(&self, h: f64) -> Result<f64> {
        if h < 0.0 || h.is_nan() {
            return Err(Error::InvalidParameter(format!("negative lag {h}")));
        }
        Ok(self.gamma(h))
    }

    pub fn try_cov(&self, h: f64) -> Result<f64> {
        self.try_gamma(h).map(|g| self.sill() - g)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        VariogramModel {
            nugget: self.nugget * factor,
            psill: self.psill * factor,
            ..*self
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: VariogramModel = toml::from_str(text).map_err(|e| Error::Config(format!("variogram model: {e}")))?;
        VariogramModel::new(m.family, m.nugget, m.psill, m.range)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        VariogramModel::from_toml(&text)
    }
}
