//! Downscaling of compositional rasters by area-to-point regression
//! cokriging in the Aitchison simplex (ILR-ATPRCoK), with block sequential
//! Gaussian simulation and a validation harness.

pub mod bench;
pub mod bsgs;
pub mod downscale;
pub mod error;
pub mod grid;
pub mod io;
pub mod kriging;
pub mod rng;
pub mod simplex;
pub mod texture;
pub mod trend;
pub mod variogram;

pub use error::{Error, Result};
