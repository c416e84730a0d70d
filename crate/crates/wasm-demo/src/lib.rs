//! Browser bindings: texture lookup for one composition, downscaling of a
//! synthetic field and conditional simulation on the same field.

use coda_downscale::bsgs::{bsgs, texture_names, BsgsConfig, SyntheticGenerator};
use coda_downscale::downscale::{ilr_atprcok, DownscaleConfig, MethodTag};
use coda_downscale::grid::{CoarseFineMap, CompositionField, GridSpec, MultiField};
use coda_downscale::rng::RngStream;
use coda_downscale::simplex::{closure, SimplexBasis};
use coda_downscale::texture::classify_usda;
use coda_downscale::trend::Covariates;
use coda_downscale::Result;
use wasm_bindgen::prelude::*;

/// Side of the demo's fine grid, in cells.
pub const DEMO_SIDE: usize = 40;
const DEMO_CELL: f64 = 20.0;

fn js(e: coda_downscale::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct TexturePoint {
    label: String,
    code: u8,
    parts: Vec<f64>,
    ilr: Vec<f64>,
}

#[wasm_bindgen]
impl TexturePoint {
    #[wasm_bindgen(getter)]
    pub fn label(&self) -> String {
        self.label.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn code(&self) -> u8 {
        self.code
    }

    /// Closed clay, silt, sand fractions.
    #[wasm_bindgen(getter)]
    pub fn parts(&self) -> Vec<f64> {
        self.parts.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ilr(&self) -> Vec<f64> {
        self.ilr.clone()
    }
}

pub fn texture_point(clay: f64, silt: f64, sand: f64) -> Result<TexturePoint> {
    let x = closure(&[clay, silt, sand])?;
    let class = classify_usda(&x)?;
    let ilr = SimplexBasis::default_for(3).ilr(&x)?.0;
    Ok(TexturePoint { label: class.label().to_string(), code: class.code(), parts: x.into_parts(), ilr })
}

/// Closes the three amounts, classifies them and returns ILR coordinates.
#[wasm_bindgen]
pub fn texture(clay: f64, silt: f64, sand: f64) -> std::result::Result<TexturePoint, JsError> {
    texture_point(clay, silt, sand).map_err(js)
}

/// Maps of one demo run, each `side * side * 3` values in row-major pixel
/// order with interleaved clay, silt, sand.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct DemoMaps {
    side: usize,
    truth: Vec<f64>,
    coarse: Vec<f64>,
    result: Vec<f64>,
    mean_error: f64,
    negative_pixels: usize,
    max_unit_sum_deviation: f64,
}

#[wasm_bindgen]
impl DemoMaps {
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.side
    }

    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    /// Coarse data repeated over their fine pixels.
    #[wasm_bindgen(getter)]
    pub fn coarse(&self) -> Vec<f64> {
        self.coarse.clone()
    }

    /// Prediction or realization, depending on the operation.
    #[wasm_bindgen(getter)]
    pub fn result(&self) -> Vec<f64> {
        self.result.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mean_error(&self) -> f64 {
        self.mean_error
    }

    #[wasm_bindgen(getter)]
    pub fn negative_pixels(&self) -> usize {
        self.negative_pixels
    }

    #[wasm_bindgen(getter)]
    pub fn max_unit_sum_deviation(&self) -> f64 {
        self.max_unit_sum_deviation
    }
}

fn interleave(field: &MultiField) -> Vec<f64> {
    let n = field.spec.len();
    let mut out = Vec::with_capacity(n * field.components());
    for i in 0..n {
        for layer in &field.layers {
            out.push(layer[i]);
        }
    }
    out
}

struct Scene {
    map: CoarseFineMap,
    basis: SimplexBasis,
    truth: CompositionField,
    coarse: CompositionField,
}

fn scene(seed: u32, factor: usize, method: MethodTag) -> Result<Scene> {
    let spec = GridSpec::new(DEMO_SIDE, DEMO_SIDE, DEMO_CELL)?;
    let map = CoarseFineMap::square(spec, factor)?;
    let gen = SyntheticGenerator::new(&spec)?;
    let (truth, _) = gen.sample(&mut RngStream::new(seed as u64, 0))?;
    let truth = CompositionField::new(spec, texture_names(), truth.into_multi().layers)?;
    let coarse = method.upscale(&truth, &map)?;
    Ok(Scene { map, basis: gen.basis().clone().with_names(texture_names())?, truth, coarse })
}

fn refined(scene: &Scene) -> Result<Vec<f64>> {
    let layers = (0..scene.coarse.parts())
        .map(|k| scene.map.refine(&scene.coarse.as_multi().layer(k)).map(|f| f.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(interleave(&MultiField::new(scene.map.fine, texture_names(), layers)?))
}

fn maps(scene: &Scene, parts: &MultiField) -> Result<DemoMaps> {
    let d = coda_downscale::downscale::diagnostics(parts, Some(&scene.truth), None, &scene.map)?;
    Ok(DemoMaps {
        side: DEMO_SIDE,
        truth: interleave(scene.truth.as_multi()),
        coarse: refined(scene)?,
        result: interleave(parts),
        mean_error: d.mean_error.unwrap_or(f64::NAN),
        negative_pixels: d.negative_pixels,
        max_unit_sum_deviation: d.max_unit_sum_deviation,
    })
}

pub fn downscale_demo(seed: u32, factor: usize, method: &str) -> Result<DemoMaps> {
    let method: MethodTag = method.parse()?;
    let s = scene(seed, factor, method)?;
    let out = method.downscale(&s.coarse, &s.basis, &Covariates::none(), &s.map, &DownscaleConfig::default())?;
    maps(&s, &out.prediction.values())
}

/// Draws a synthetic field, upscales it by `factor` with the method's
/// geometry and downscales it back (`method` is EE, EA, AE or AA).
#[wasm_bindgen]
pub fn downscale(seed: u32, factor: usize, method: &str) -> std::result::Result<DemoMaps, JsError> {
    downscale_demo(seed, factor, method).map_err(js)
}

pub fn simulate_demo(seed: u32, factor: usize, realization: u32) -> Result<DemoMaps> {
    let s = scene(seed, factor, MethodTag::AA)?;
    let pred = ilr_atprcok(&s.coarse, &s.basis, &Covariates::none(), &s.map, &DownscaleConfig::default())?;
    let ens = bsgs(
        &s.coarse,
        &s.basis,
        &pred.engine.trend,
        &Covariates::none(),
        &pred.engine.models,
        &s.map,
        1,
        seed as u64 ^ ((realization as u64) << 32),
        &BsgsConfig::default(),
    )?;
    maps(&s, ens.realizations[0].as_multi())
}

/// One conditional realization of the AA-upscaled synthetic field.
#[wasm_bindgen]
pub fn simulate(seed: u32, factor: usize, realization: u32) -> std::result::Result<DemoMaps, JsError> {
    simulate_demo(seed, factor, realization).map_err(js)
}
