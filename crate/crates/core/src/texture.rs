//! USDA soil-texture classes of clay/silt/sand compositions.

use std::fmt;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CompositionField, GridSpec, ScalarField};
use crate::simplex::Composition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureClass {
    Sand,
    LoamySand,
    SandyLoam,
    Loam,
    SiltLoam,
    Silt,
    SandyClayLoam,
    ClayLoam,
    SiltyClayLoam,
    SandyClay,
    SiltyClay,
    Clay,
}

impl TextureClass {
    /// All classes in the order they are tested; on a shared edge the
    /// earlier class wins.
    pub const ALL: [TextureClass; 12] = [
        TextureClass::Sand,
        TextureClass::LoamySand,
        TextureClass::SandyLoam,
        TextureClass::Loam,
        TextureClass::SiltLoam,
        TextureClass::Silt,
        TextureClass::SandyClayLoam,
        TextureClass::ClayLoam,
        TextureClass::SiltyClayLoam,
        TextureClass::SandyClay,
        TextureClass::SiltyClay,
        TextureClass::Clay,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TextureClass::Sand => "sand",
            TextureClass::LoamySand => "loamy sand",
            TextureClass::SandyLoam => "sandy loam",
            TextureClass::Loam => "loam",
            TextureClass::SiltLoam => "silt loam",
            TextureClass::Silt => "silt",
            TextureClass::SandyClayLoam => "sandy clay loam",
            TextureClass::ClayLoam => "clay loam",
            TextureClass::SiltyClayLoam => "silty clay loam",
            TextureClass::SandyClay => "sandy clay",
            TextureClass::SiltyClay => "silty clay",
            TextureClass::Clay => "clay",
        }
    }

    /// Integer code used in categorical rasters, 1 to 12.
    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|c| *c == self).expect("listed") as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get((code as usize).checked_sub(1)?).copied()
    }

    /// Membership test on percentages.
    fn contains(self, clay: f64, silt: f64, sand: f64) -> bool {
        match self {
            TextureClass::Sand => silt + 1.5 * clay < 15.0,
            TextureClass::LoamySand => silt + 1.5 * clay >= 15.0 && silt + 2.0 * clay < 30.0,
            TextureClass::SandyLoam => {
                (clay >= 7.0 && clay < 20.0 && sand > 52.0 && silt + 2.0 * clay >= 30.0)
                    || (clay < 7.0 && silt < 50.0 && silt + 2.0 * clay >= 30.0)
            }
            TextureClass::Loam => clay >= 7.0 && clay < 27.0 && silt >= 28.0 && silt < 50.0 && sand <= 52.0,
            TextureClass::SiltLoam => {
                (silt >= 50.0 && clay >= 12.0 && clay < 27.0) || (silt >= 50.0 && silt < 80.0 && clay < 12.0)
            }
            TextureClass::Silt => silt >= 80.0 && clay < 12.0,
            TextureClass::SandyClayLoam => clay >= 20.0 && clay < 35.0 && silt < 28.0 && sand > 45.0,
            TextureClass::ClayLoam => clay >= 27.0 && clay < 40.0 && sand > 20.0 && sand <= 45.0,
            TextureClass::SiltyClayLoam => clay >= 27.0 && clay < 40.0 && sand <= 20.0,
            TextureClass::SandyClay => clay >= 35.0 && sand > 45.0,
            TextureClass::SiltyClay => clay >= 40.0 && silt >= 40.0,
            TextureClass::Clay => clay >= 40.0 && sand <= 45.0 && silt < 40.0,
        }
    }
}

impl fmt::Display for TextureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TextureClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        Self::ALL
            .iter()
            .find(|c| c.label() == key)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("unknown texture class `{s}`")))
    }
}

/// Class of a `(clay, silt, sand)` composition.
pub fn classify_usda(psf: &Composition) -> Result<TextureClass> {
    if psf.len() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: psf.len() });
    }
    let p = psf.parts();
    let (clay, silt, sand) = (100.0 * p[0], 100.0 * p[1], 100.0 * p[2]);
    TextureClass::ALL
        .iter()
        .find(|c| c.contains(clay, silt, sand))
        .copied()
        .ok_or_else(|| Error::InvalidParameter(format!("no texture class for clay {clay}, silt {silt}, sand {sand}")))
}

/// Per-pixel classes of a field plus the class frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedField {
    pub spec: GridSpec,
    pub classes: Vec<Option<TextureClass>>,
    /// Pixel count per class, in [`TextureClass::ALL`] order.
    pub frequencies: Vec<(TextureClass, usize)>,
}

impl ClassifiedField {
    /// Integer-coded raster; nodata stays nodata.
    pub fn codes(&self) -> ScalarField {
        let values = self.classes.iter().map(|c| c.map_or(self.spec.nodata, |c| c.code() as f64)).collect();
        ScalarField::new(self.spec, values).expect("same length")
    }

    pub fn valid(&self) -> usize {
        self.frequencies.iter().map(|(_, n)| n).sum()
    }

    /// `code,label,pixels,fraction` lines with a header.
    pub fn legend(&self) -> String {
        let total = self.valid().max(1) as f64;
        let mut out = String::from("code,label,pixels,fraction\n");
        for (c, n) in &self.frequencies {
            out.push_str(&format!("{},{},{},{}\n", c.code(), c.label(), n, *n as f64 / total));
        }
        out
    }
}

pub fn classify_field(field: &CompositionField) -> Result<ClassifiedField> {
    if field.parts() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: field.parts() });
    }
    let one = |i: usize| field.pixel(i).map(|x| classify_usda(&x)).transpose();
    let n = field.spec().len();
    #[cfg(feature = "parallel")]
    let classes = (0..n).into_par_iter().map(one).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let classes = (0..n).map(one).collect::<Result<Vec<_>>>()?;
    let frequencies = TextureClass::ALL
        .iter()
        .map(|c| (*c, classes.iter().filter(|x| **x == Some(*c)).count()))
        .collect();
    Ok(ClassifiedField { spec: *field.spec(), classes, frequencies })
}
