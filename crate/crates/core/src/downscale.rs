//! Downscaling pipelines: scalar ATPRK, part-wise ATPRCoK on raw fractions,
//! and ATPRCoK in ILR coordinates with back-transformation to the simplex.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    upscale_aitchison, upscale_euclidean, CoarseFineMap, CompositionField, MultiField, ScalarField,
};
use crate::kriging::{
    cokrige_residual_field, predict_residual_field, KrigingConfig, Lmc, MatrixWeights,
};
use crate::simplex::{aitchison_dist, boxdot, center, Composition, SimplexBasis};
use crate::trend::{fit_ols, predict_trend, upscale_covariates, Covariates, TrendModel};
use crate::variogram::{
    deconvolve, default_lag_settings, empirical_variogram, Deconvolution, DeconvolutionSettings, Family,
    VariogramModel,
};

/// Where the fine-scale residual models come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSource {
    /// One model per component, used as given.
    Fixed { models: Vec<VariogramModel> },
    /// Fit the coarse residual variogram and deconvolve it per component.
    Deconvolve { family: Family, settings: DeconvolutionSettings },
    /// Joint cross-covariance model; kriging uses matrix weights.
    #[serde(skip)]
    Coregionalized(Lmc),
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Deconvolve { family: Family::Spherical, settings: DeconvolutionSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownscaleConfig {
    pub kriging: KrigingConfig,
    pub intercept: bool,
    pub models: ModelSource,
}

impl Default for DownscaleConfig {
    fn default() -> Self {
        DownscaleConfig { kriging: KrigingConfig::default(), intercept: true, models: ModelSource::default() }
    }
}

impl DownscaleConfig {
    pub fn with_models(mut self, models: Vec<VariogramModel>) -> Self {
        self.models = ModelSource::Fixed { models };
        self
    }

    pub fn with_kriging(mut self, kriging: KrigingConfig) -> Self {
        self.kriging = kriging;
        self
    }
}

/// Regression plus residual kriging on a multi-component coarse field.
#[derive(Debug, Clone, PartialEq)]
pub struct Atprk {
    pub prediction: MultiField,
    pub fine_trend: MultiField,
    pub residual: MultiField,
    /// Kriging variance per component.
    pub variance: MultiField,
    pub trend: TrendModel,
    pub coarse_trend: MultiField,
    pub coarse_residuals: MultiField,
    pub models: Vec<VariogramModel>,
    pub deconvolution: Vec<Deconvolution>,
    pub weights: Option<Vec<Option<MatrixWeights>>>,
}

fn fallback_model(map: &CoarseFineMap) -> VariogramModel {
    VariogramModel::spherical(0.0, 1.0, 3.0 * map.coarse.cell_width.max(map.coarse.cell_height))
}

/// Fits the trend on upscaled covariates, kriges the coarse residuals and
/// adds the fine trend back.
pub fn atprk(coarse: &MultiField, fine_covariates: &Covariates, map: &CoarseFineMap, config: &DownscaleConfig) -> Result<Atprk> {
    map.coarse.check_aligned(&coarse.spec, "coarse field")?;
    for f in &fine_covariates.fields {
        map.fine.check_aligned(&f.spec, "fine covariates")?;
    }
    let coarse_cov = upscale_covariates(fine_covariates, map)?;
    let fit = fit_ols(coarse, &coarse_cov, config.intercept)?;
    let coarse_trend = predict_trend(&fit.model, &coarse_cov, &map.coarse)?;
    let residuals = fit.residuals;
    let d = coarse.components();

    let mut deconvolution = Vec::new();
    let models: Vec<VariogramModel> = match &config.models {
        ModelSource::Fixed { models } => {
            if models.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: models.len() });
            }
            models.clone()
        }
        ModelSource::Deconvolve { family, settings } => {
            let (lag, max_dist) = default_lag_settings(&map.coarse);
            let mut out = Vec::with_capacity(d);
            for c in 0..d {
                let layer = residuals.layer(c);
                let emp = empirical_variogram(&layer, lag, max_dist)?;
                match deconvolve(&emp, map, *family, *settings) {
                    Ok(dec) => {
                        out.push(dec.model);
                        deconvolution.push(dec);
                    }
                    Err(Error::DegenerateVariogram(msg)) => {
                        log::warn!("component {}: {msg}; using a placeholder model", coarse.names[c]);
                        out.push(fallback_model(map));
                    }
                    Err(e) => return Err(e),
                }
            }
            out
        }
        ModelSource::Coregionalized(lmc) => lmc.structures.iter().map(|s| s.model).collect(),
    };

    let (residual, variance, weights) = match &config.models {
        ModelSource::Coregionalized(lmc) => {
            let p = cokrige_residual_field(&residuals, lmc, map, config.kriging)?;
            (p.field, p.variance, p.weights)
        }
        _ => {
            let p = predict_residual_field(&residuals, &models, map, config.kriging)?;
            let weights = p.weights.map(|per_comp| {
                (0..map.fine.len())
                    .map(|i| {
                        let first = per_comp[0][i].as_ref()?;
                        let per: Vec<Vec<f64>> = per_comp.iter().map(|w| w[i].as_ref().expect("same support").1.clone()).collect();
                        Some(MatrixWeights::from_diagonal(first.0.clone(), &per))
                    })
                    .collect()
            });
            (p.field, p.variance, weights)
        }
    };

    let fine_trend = predict_trend(&fit.model, fine_covariates, &map.fine)?;
    let spec = map.fine;
    let mut layers = vec![vec![spec.nodata; spec.len()]; d];
    for i in 0..spec.len() {
        if residual.is_nodata(i) || fine_trend.is_nodata(i) {
            continue;
        }
        for c in 0..d {
            layers[c][i] = fine_trend.layers[c][i] + residual.layers[c][i];
        }
    }
    Ok(Atprk {
        prediction: MultiField::new(spec, coarse.names.clone(), layers)?,
        fine_trend,
        residual,
        variance,
        trend: fit.model,
        coarse_trend,
        coarse_residuals: residuals,
        models,
        deconvolution,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Scalar(ScalarField),
    Parts(MultiField),
    Composition(CompositionField),
}

impl Prediction {
    /// Part values (or the single scalar layer) as a multi-layer field.
    pub fn values(&self) -> MultiField {
        match self {
            Prediction::Scalar(s) => MultiField::from_scalars(vec![s.clone()], vec!["value".into()]).expect("one layer"),
            Prediction::Parts(m) => m.clone(),
            Prediction::Composition(c) => c.as_multi().clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownscaleResult {
    pub prediction: Prediction,
    pub engine: Atprk,
    pub diagnostics: Diagnostics,
    pub config: DownscaleConfig,
}

/// Regression-kriging of a scalar coarse field.
pub fn atprk_scalar(coarse: &ScalarField, fine_covariates: &Covariates, map: &CoarseFineMap, config: &DownscaleConfig) -> Result<DownscaleResult> {
    let multi = MultiField::from_scalars(vec![coarse.clone()], vec!["value".into()])?;
    let engine = atprk(&multi, fine_covariates, map, config)?;
    let pred = engine.prediction.layer(0);
    let diagnostics = Diagnostics::empty(&map.fine);
    Ok(DownscaleResult { prediction: Prediction::Scalar(pred), engine, diagnostics, config: config.clone() })
}

/// Part-wise regression-cokriging of raw fractions. The output may leave
/// the simplex; the diagnostics record where.
pub fn atprcok_euclidean(coarse: &CompositionField, fine_covariates: &Covariates, map: &CoarseFineMap, config: &DownscaleConfig) -> Result<DownscaleResult> {
    let engine = atprk(coarse.as_multi(), fine_covariates, map, config)?;
    let parts = engine.prediction.clone();
    let diagnostics = diagnostics(&parts, None, Some((coarse, UpscaleGeometry::Euclidean)), map)?;
    Ok(DownscaleResult { prediction: Prediction::Parts(parts), engine, diagnostics, config: config.clone() })
}

/// Regression-cokriging of ILR coordinates, back-transformed to the simplex.
pub fn ilr_atprcok(
    coarse: &CompositionField,
    basis: &SimplexBasis,
    fine_covariates: &Covariates,
    map: &CoarseFineMap,
    config: &DownscaleConfig,
) -> Result<DownscaleResult> {
    let coords = coarse.to_ilr(basis)?;
    let engine = atprk(&coords, fine_covariates, map, config)?;
    let mut fine_coords = engine.prediction.clone();
    fine_coords.names = coords.names.clone();
    let comp = CompositionField::from_ilr(&fine_coords, basis)?;
    let comp = CompositionField::new(comp.spec().with_nodata(map.fine.nodata), coarse.names().to_vec(), comp.into_multi().layers)?;
    let diagnostics = diagnostics(comp.as_multi(), None, Some((coarse, UpscaleGeometry::Aitchison)), map)?;
    Ok(DownscaleResult { prediction: Prediction::Composition(comp), engine, diagnostics, config: config.clone() })
}

/// Evaluates the compositional predictor directly in the simplex:
/// `trend(x) (+) sum_K Lambda_K [.] e_K` with `Lambda_K = V^T Lambda^Y_K V`
/// and residual compositions `e_K = coarse_K (-) trend_K`.
pub fn simplex_predictor(
    coarse: &CompositionField,
    coarse_trend: &MultiField,
    fine_trend: &MultiField,
    weights: &[Option<MatrixWeights>],
    basis: &SimplexBasis,
) -> Result<CompositionField> {
    let d = basis.dim();
    if coarse.parts() != basis.parts() {
        return Err(Error::DimensionMismatch { expected: basis.parts(), found: coarse.parts() });
    }
    if coarse_trend.components() != d || fine_trend.components() != d {
        return Err(Error::DimensionMismatch { expected: d, found: coarse_trend.components().min(fine_trend.components()) });
    }
    if weights.len() != fine_trend.spec.len() {
        return Err(Error::DimensionMismatch { expected: fine_trend.spec.len(), found: weights.len() });
    }
    let residual: Vec<Option<Composition>> = (0..coarse.spec().len())
        .map(|k| {
            let c = coarse.pixel(k)?;
            let t = coarse_trend.pixel(k)?;
            Some(c.difference(&basis.ilr_inv(&t).ok()?).ok()?)
        })
        .collect();
    let lift = |m: &DMatrix<f64>| basis.lift_matrix(m);
    let spec = fine_trend.spec;
    let mut pixels = vec![None; spec.len()];
    for (i, w) in weights.iter().enumerate() {
        let (Some(w), Some(t)) = (w, fine_trend.pixel(i)) else { continue };
        let mut acc = basis.ilr_inv(&t)?;
        for (k, lam) in w.blocks.iter().zip(&w.lambda) {
            if lam.nrows() != d || lam.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, found: lam.nrows() });
            }
            let e = residual[*k].as_ref().ok_or_else(|| Error::OutOfRange(format!("block {k} has no data")))?;
            acc = acc.perturb(&boxdot(&lift(lam), e)?)?;
        }
        pixels[i] = Some(acc);
    }
    CompositionField::from_pixels(spec, coarse.names().to_vec(), &pixels)
}

/// Upscaling geometry followed by downscaling method, e.g. `AE` upscales
/// in the Aitchison simplex and downscales raw parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    EE,
    EA,
    AE,
    AA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpscaleGeometry {
    Euclidean,
    Aitchison,
}

impl MethodTag {
    pub const ALL: [MethodTag; 4] = [MethodTag::EE, MethodTag::EA, MethodTag::AE, MethodTag::AA];

    pub fn upscaling(self) -> UpscaleGeometry {
        match self {
            MethodTag::EE | MethodTag::EA => UpscaleGeometry::Euclidean,
            MethodTag::AE | MethodTag::AA => UpscaleGeometry::Aitchison,
        }
    }

    /// True when downscaling runs in ILR coordinates.
    pub fn compositional(self) -> bool {
        matches!(self, MethodTag::EA | MethodTag::AA)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::EE => "EE",
            MethodTag::EA => "EA",
            MethodTag::AE => "AE",
            MethodTag::AA => "AA",
        }
    }

    pub fn upscale(self, fine: &CompositionField, map: &CoarseFineMap) -> Result<CompositionField> {
        upscale_with(self.upscaling(), fine, map)
    }

    pub fn downscale(
        self,
        coarse: &CompositionField,
        basis: &SimplexBasis,
        fine_covariates: &Covariates,
        map: &CoarseFineMap,
        config: &DownscaleConfig,
    ) -> Result<DownscaleResult> {
        if self.compositional() {
            ilr_atprcok(coarse, basis, fine_covariates, map, config)
        } else {
            atprcok_euclidean(coarse, fine_covariates, map, config)
        }
    }
}

impl std::str::FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EE" => Ok(MethodTag::EE),
            "EA" => Ok(MethodTag::EA),
            "AE" => Ok(MethodTag::AE),
            "AA" => Ok(MethodTag::AA),
            _ => Err(Error::InvalidParameter(format!("unknown method `{s}` (expected EE, EA, AE or AA)"))),
        }
    }
}

pub fn upscale_with(geometry: UpscaleGeometry, fine: &CompositionField, map: &CoarseFineMap) -> Result<CompositionField> {
    match geometry {
        UpscaleGeometry::Euclidean => upscale_euclidean(fine, map),
        UpscaleGeometry::Aitchison => upscale_aitchison(fine, map),
    }
}

/// Constraint and coherence checks on a predicted part field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Valid pixels with at least one negative part.
    pub negative_pixels: usize,
    pub valid_pixels: usize,
    /// Per-pixel `|sum - 1|`; NaN at nodata.
    #[serde(skip)]
    pub unit_sum_deviation: Vec<f64>,
    pub max_unit_sum_deviation: f64,
    /// Per-pixel Euclidean distance to the reference, when one is given.
    #[serde(skip)]
    pub error_map: Option<Vec<f64>>,
    pub mean_error: Option<f64>,
    /// Per coarse block: largest relative part deviation between the
    /// upscaled prediction and the coarse input.
    #[serde(skip)]
    pub block_deviation: Option<Vec<f64>>,
    pub max_block_deviation: Option<f64>,
    /// Per coarse block Aitchison distance between the upscaled prediction
    /// and the coarse input (compositional outputs only).
    #[serde(skip)]
    pub block_aitchison: Option<Vec<f64>>,
}

impl Diagnostics {
    fn empty(spec: &crate::grid::GridSpec) -> Self {
        Diagnostics {
            negative_pixels: 0,
            valid_pixels: spec.len(),
            unit_sum_deviation: Vec::new(),
            max_unit_sum_deviation: 0.0,
            error_map: None,
            mean_error: None,
            block_deviation: None,
            max_block_deviation: None,
            block_aitchison: None,
        }
    }
}

/// Builds the diagnostics record for a part-valued prediction. `coarse`
/// enables the block coherence check under the given upscaling geometry.
pub fn diagnostics(
    parts: &MultiField,
    reference: Option<&CompositionField>,
    coarse: Option<(&CompositionField, UpscaleGeometry)>,
    map: &CoarseFineMap,
) -> Result<Diagnostics> {
    map.fine.check_aligned(&parts.spec, "prediction")?;
    let spec = parts.spec;
    let mut negative = 0;
    let mut valid = 0;
    let mut dev = vec![f64::NAN; spec.len()];
    let mut max_dev: f64 = 0.0;
    for i in 0..spec.len() {
        let Some(px) = parts.pixel(i) else { continue };
        valid += 1;
        if px.iter().any(|v| *v < 0.0) {
            negative += 1;
        }
        let d = (px.iter().sum::<f64>() - 1.0).abs();
        dev[i] = d;
        max_dev = max_dev.max(d);
    }
    let (error_map, mean_error) = match reference {
        Some(r) => {
            spec.check_aligned(r.spec(), "reference")?;
            let mut map_e = vec![f64::NAN; spec.len()];
            let (mut s, mut n) = (0.0, 0usize);
            for i in 0..spec.len() {
                if let (Some(a), Some(b)) = (parts.pixel(i), r.pixel(i)) {
                    let e = a.iter().zip(b.parts()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    map_e[i] = e;
                    s += e;
                    n += 1;
                }
            }
            (Some(map_e), (n > 0).then(|| s / n as f64))
        }
        None => (None, None),
    };
    let mut block_deviation = None;
    let mut block_aitchison = None;
    if let Some((c, geometry)) = coarse {
        map.coarse.check_aligned(c.spec(), "coarse input")?;
        let up: MultiField = match geometry {
            UpscaleGeometry::Euclidean => crate::grid::upscale_multi(parts, map)?,
            UpscaleGeometry::Aitchison => {
                let comp = CompositionField::new(spec, parts.names.clone(), parts.layers.clone())?;
                let up = upscale_aitchison(&comp, map)?;
                block_aitchison = Some(
                    (0..map.coarse.len())
                        .map(|k| match (up.pixel(k), c.pixel(k)) {
                            (Some(a), Some(b)) => aitchison_dist(&a, &b).unwrap_or(f64::NAN),
                            _ => f64::NAN,
                        })
                        .collect(),
                );
                up.into_multi()
            }
        };
        block_deviation = Some(
            (0..map.coarse.len())
                .map(|k| match (up.pixel(k), c.pixel(k)) {
                    (Some(a), Some(b)) => a
                        .iter()
                        .zip(b.parts())
                        .map(|(x, y)| (x - y).abs() / y)
                        .fold(0.0, f64::max),
                    _ => f64::NAN,
                })
                .collect::<Vec<f64>>(),
        );
    }
    let max_block_deviation = block_deviation
        .as_ref()
        .map(|v| v.iter().filter(|x| x.is_finite()).fold(0.0, |a: f64, b| a.max(*b)));
    Ok(Diagnostics {
        negative_pixels: negative,
        valid_pixels: valid,
        unit_sum_deviation: dev,
        max_unit_sum_deviation: max_dev,
        error_map,
        mean_error,
        block_deviation,
        max_block_deviation,
        block_aitchison,
    })
}

/// Aitchison standard deviation of a composition field: the root mean
/// squared Aitchison distance of its pixels to their centre.
pub fn aitchison_std(field: &CompositionField) -> Result<f64> {
    let pixels: Vec<Composition> = field.pixels().into_iter().flatten().collect();
    let g = center(&pixels)?;
    let ss: f64 = pixels.iter().map(|x| aitchison_dist(x, &g).map(|d| d * d)).sum::<Result<f64>>()?;
    Ok((ss / pixels.len() as f64).sqrt())
}

#[cfg(test)]
mod tests;
