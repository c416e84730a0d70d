//! Raster data model: grid geometry, scalar and multi-layer fields, and the
//! nested coarse/fine block structure used for up- and downscaling.
//!
//! Rows are stored top (north) first, matching the ESRI ASCII layout.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{self, Composition, SimplexBasis};

pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ncols: usize,
    pub nrows: usize,
    /// Cell width in metres.
    pub cell_width: f64,
    /// Cell height in metres.
    pub cell_height: f64,
    /// Lower-left corner.
    pub origin_x: f64,
    pub origin_y: f64,
    pub nodata: f64,
}

impl GridSpec {
    /// Square cells, origin at `(0, 0)`, nodata `-9999`.
    pub fn new(ncols: usize, nrows: usize, cellsize: f64) -> Result<Self> {
        GridSpec {
            ncols,
            nrows,
            cell_width: cellsize,
            cell_height: cellsize,
            origin_x: 0.0,
            origin_y: 0.0,
            nodata: DEFAULT_NODATA,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.ncols == 0 || self.nrows == 0 {
            return Err(Error::InvalidParameter("grid needs at least one row and column".into()));
        }
        if !(self.cell_width > 0.0 && self.cell_height > 0.0) {
            return Err(Error::InvalidParameter("cell size must be positive".into()));
        }
        Ok(self)
    }

    pub fn with_origin(mut self, x: f64, y: f64) -> Self {
        self.origin_x = x;
        self.origin_y = y;
        self
    }

    pub fn with_nodata(mut self, nodata: f64) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_square(&self) -> bool {
        self.cell_width == self.cell_height
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.ncols, index % self.ncols)
    }

    /// Centre of cell `(row, col)` in map coordinates.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_width,
            self.origin_y + (self.nrows as f64 - row as f64 - 0.5) * self.cell_height,
        )
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v.is_nan() || v == self.nodata
    }

    /// Same geometry (nodata sentinel ignored).
    pub fn aligned(&self, other: &GridSpec) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.cell_width == other.cell_width
            && self.cell_height == other.cell_height
            && self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
    }

    pub fn check_aligned(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.aligned(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}x{} @ {}x{} vs {}x{} @ {}x{}",
                self.ncols,
                self.nrows,
                self.cell_width,
                self.cell_height,
                other.ncols,
                other.nrows,
                other.cell_width,
                other.cell_height
            )))
        }
    }

    /// Top-left sub-grid of `ncols x nrows` cells.
    pub fn cropped(&self, ncols: usize, nrows: usize) -> Result<GridSpec> {
        if ncols > self.ncols || nrows > self.nrows {
            return Err(Error::OutOfRange("crop larger than grid".into()));
        }
        GridSpec {
            ncols,
            nrows,
            origin_y: self.origin_y + (self.nrows - nrows) as f64 * self.cell_height,
            ..*self
        }
        .validated()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.len(),
                found: values.len(),
            });
        }
        Ok(ScalarField { spec, values })
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        ScalarField {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.spec.index(row, col)]
    }

    pub fn is_nodata(&self, index: usize) -> bool {
        self.spec.is_nodata(self.values[index])
    }

    /// Valid (non-nodata) values.
    pub fn valid(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| !self.spec.is_nodata(*v))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            spec: self.spec,
            values: self
                .values
                .iter()
                .map(|&v| if self.spec.is_nodata(v) { v } else { f(v) })
                .collect(),
        }
    }

    pub fn cropped(&self, ncols: usize, nrows: usize) -> Result<ScalarField> {
        let spec = self.spec.cropped(ncols, nrows)?;
        let values = (0..nrows)
            .flat_map(|r| self.values[r * self.spec.ncols..r * self.spec.ncols + ncols].iter().copied())
            .collect();
        Ok(ScalarField { spec, values })
    }
}

/// Several aligned layers, e.g. raw parts or ILR coordinates. Values are not
/// constrained; a pixel is nodata when any layer is nodata there.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiField {
    pub spec: GridSpec,
    pub names: Vec<String>,
    pub layers: Vec<Vec<f64>>,
}

impl MultiField {
    pub fn new(spec: GridSpec, names: Vec<String>, layers: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != layers.len() {
            return Err(Error::DimensionMismatch {
                expected: layers.len(),
                found: names.len(),
            });
        }
        for layer in &layers {
            if layer.len() != spec.len() {
                return Err(Error::DimensionMismatch {
                    expected: spec.len(),
                    found: layer.len(),
                });
            }
        }
        Ok(MultiField { spec, names, layers })
    }

    pub fn from_scalars(fields: Vec<ScalarField>, names: Vec<String>) -> Result<Self> {
        let spec = fields.first().ok_or(Error::Empty("no layers"))?.spec;
        for f in &fields {
            spec.check_aligned(&f.spec, "layer")?;
        }
        MultiField::new(spec, names, fields.into_iter().map(|f| f.values).collect())
    }

    pub fn components(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> ScalarField {
        ScalarField {
            spec: self.spec,
            values: self.layers[i].clone(),
        }
    }

    pub fn is_nodata(&self, index: usize) -> bool {
        self.layers.iter().any(|l| self.spec.is_nodata(l[index]))
    }

    pub fn pixel(&self, index: usize) -> Option<Vec<f64>> {
        if self.is_nodata(index) {
            None
        } else {
            Some(self.layers.iter().map(|l| l[index]).collect())
        }
    }

    pub fn cropped(&self, ncols: usize, nrows: usize) -> Result<MultiField> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                ScalarField { spec: self.spec, values: l.clone() }
                    .cropped(ncols, nrows)
                    .map(|f| f.values)
            })
            .collect::<Result<Vec<_>>>()?;
        MultiField::new(self.spec.cropped(ncols, nrows)?, self.names.clone(), layers)
    }
}

/// A raster of compositions: every non-nodata pixel is a valid [`Composition`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionField {
    inner: MultiField,
}

impl CompositionField {
    /// Validates every pixel, re-closing sums within the re-closure tolerance.
    /// Use [`CompositionField::from_raw`] for percentages or other totals.
    pub fn new(spec: GridSpec, names: Vec<String>, layers: Vec<Vec<f64>>) -> Result<Self> {
        let mut inner = MultiField::new(spec, names, layers)?;
        if inner.components() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: inner.components(),
            });
        }
        for i in 0..spec.len() {
            if inner.is_nodata(i) {
                inner.layers.iter_mut().for_each(|l| l[i] = spec.nodata);
                continue;
            }
            let parts: Vec<f64> = inner.layers.iter().map(|l| l[i]).collect();
            let c = Composition::new(parts).map_err(|e| pixel_error(&spec, i, e))?;
            for (l, v) in inner.layers.iter_mut().zip(c.parts()) {
                l[i] = *v;
            }
        }
        Ok(CompositionField { inner })
    }

    /// Closes every pixel (any positive total), optionally replacing zeros
    /// multiplicatively with the given detection limit.
    pub fn from_raw(
        spec: GridSpec,
        names: Vec<String>,
        mut layers: Vec<Vec<f64>>,
        zero_replacement: Option<f64>,
    ) -> Result<Self> {
        MultiField::new(spec, names.clone(), layers.clone())?;
        for i in 0..spec.len() {
            if layers.iter().any(|l| spec.is_nodata(l[i])) {
                continue;
            }
            let raw: Vec<f64> = layers.iter().map(|l| l[i]).collect();
            let sum: f64 = raw.iter().sum();
            // already closed pixels are kept bit for bit
            let c = match zero_replacement {
                Some(delta) if raw.iter().any(|v| *v == 0.0) => simplex::replace_zeros(&raw, delta),
                _ if (sum - 1.0).abs() <= simplex::UNIT_SUM_TOL => Composition::new(raw),
                _ => simplex::closure(&raw),
            }
            .map_err(|e| pixel_error(&spec, i, e))?;
            for (l, v) in layers.iter_mut().zip(c.parts()) {
                l[i] = *v;
            }
        }
        CompositionField::new(spec, names, layers)
    }

    pub fn from_pixels(spec: GridSpec, names: Vec<String>, pixels: &[Option<Composition>]) -> Result<Self> {
        if pixels.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.len(),
                found: pixels.len(),
            });
        }
        let p = names.len();
        let mut layers = vec![vec![spec.nodata; spec.len()]; p];
        for (i, px) in pixels.iter().enumerate() {
            if let Some(c) = px {
                if c.len() != p {
                    return Err(Error::DimensionMismatch { expected: p, found: c.len() });
                }
                for (l, v) in layers.iter_mut().zip(c.parts()) {
                    l[i] = *v;
                }
            }
        }
        Ok(CompositionField {
            inner: MultiField { spec, names, layers },
        })
    }

    pub fn constant(spec: GridSpec, names: Vec<String>, c: &Composition) -> Self {
        CompositionField {
            inner: MultiField {
                spec,
                names,
                layers: c.parts().iter().map(|v| vec![*v; spec.len()]).collect(),
            },
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.inner.spec
    }

    pub fn names(&self) -> &[String] {
        &self.inner.names
    }

    pub fn parts(&self) -> usize {
        self.inner.components()
    }

    pub fn as_multi(&self) -> &MultiField {
        &self.inner
    }

    pub fn into_multi(self) -> MultiField {
        self.inner
    }

    pub fn is_nodata(&self, index: usize) -> bool {
        self.inner.is_nodata(index)
    }

    pub fn pixel(&self, index: usize) -> Option<Composition> {
        self.inner
            .pixel(index)
            .map(|parts| Composition::new(parts).expect("validated on construction"))
    }

    pub fn pixels(&self) -> Vec<Option<Composition>> {
        (0..self.spec().len()).map(|i| self.pixel(i)).collect()
    }

    /// ILR coordinates of every pixel, one layer per coordinate.
    pub fn to_ilr(&self, basis: &SimplexBasis) -> Result<MultiField> {
        if basis.parts() != self.parts() {
            return Err(Error::DimensionMismatch {
                expected: self.parts(),
                found: basis.parts(),
            });
        }
        let spec = *self.spec();
        let mut layers = vec![vec![spec.nodata; spec.len()]; basis.dim()];
        for i in 0..spec.len() {
            if let Some(c) = self.pixel(i) {
                let y = basis.ilr(&c)?;
                for (l, v) in layers.iter_mut().zip(y.0) {
                    l[i] = v;
                }
            }
        }
        let names = (1..=basis.dim()).map(|i| format!("ilr{i}")).collect();
        MultiField::new(spec, names, layers)
    }

    pub fn from_ilr(coords: &MultiField, basis: &SimplexBasis) -> Result<Self> {
        if coords.components() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: coords.components(),
            });
        }
        let pixels = (0..coords.spec.len())
            .map(|i| coords.pixel(i).map(|y| basis.ilr_inv(&y)).transpose())
            .collect::<Result<Vec<_>>>()?;
        CompositionField::from_pixels(coords.spec, basis.part_names().to_vec(), &pixels)
    }

    pub fn cropped(&self, ncols: usize, nrows: usize) -> Result<Self> {
        Ok(CompositionField {
            inner: self.inner.cropped(ncols, nrows)?,
        })
    }
}

fn pixel_error(spec: &GridSpec, i: usize, e: Error) -> Error {
    let (row, col) = spec.row_col(i);
    Error::InvalidPixel {
        pixel: i,
        row,
        col,
        source: Box::new(e),
    }
}

/// Nesting of a fine grid inside a coarse one: each coarse block holds
/// `fx * fy` fine pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseFineMap {
    pub fine: GridSpec,
    pub coarse: GridSpec,
    pub fx: usize,
    pub fy: usize,
}

impl CoarseFineMap {
    pub fn new(fine: GridSpec, fx: usize, fy: usize) -> Result<Self> {
        if fx == 0 || fy == 0 {
            return Err(Error::InvalidParameter("factor must be positive".into()));
        }
        if fine.ncols % fx != 0 || fine.nrows % fy != 0 {
            return Err(Error::GridMismatch(format!(
                "fine grid {}x{} is not a multiple of the factor {}x{}",
                fine.ncols, fine.nrows, fx, fy
            )));
        }
        let coarse = GridSpec {
            ncols: fine.ncols / fx,
            nrows: fine.nrows / fy,
            cell_width: fine.cell_width * fx as f64,
            cell_height: fine.cell_height * fy as f64,
            ..fine
        };
        Ok(CoarseFineMap { fine, coarse, fx, fy })
    }

    pub fn square(fine: GridSpec, f: usize) -> Result<Self> {
        CoarseFineMap::new(fine, f, f)
    }

    /// Recovers the map from two grids, checking they nest.
    pub fn between(fine: GridSpec, coarse: GridSpec) -> Result<Self> {
        let fx = (coarse.cell_width / fine.cell_width).round() as usize;
        let fy = (coarse.cell_height / fine.cell_height).round() as usize;
        let map = CoarseFineMap::new(fine, fx.max(1), fy.max(1))?;
        if !map.coarse.aligned(&coarse) {
            return Err(Error::GridMismatch("coarse grid does not nest the fine grid".into()));
        }
        Ok(map)
    }

    /// Fine pixels per block.
    pub fn p(&self) -> usize {
        self.fx * self.fy
    }

    pub fn block_of(&self, fine: usize) -> Result<usize> {
        if fine >= self.fine.len() {
            return Err(Error::OutOfRange(format!("fine pixel {fine}")));
        }
        let (r, c) = self.fine.row_col(fine);
        Ok(self.coarse.index(r / self.fy, c / self.fx))
    }

    pub(crate) fn block_rc_of(&self, fine: usize) -> (usize, usize) {
        let (r, c) = self.fine.row_col(fine);
        (r / self.fy, c / self.fx)
    }

    pub fn fine_pixels_of(&self, block: usize) -> Result<Vec<usize>> {
        if block >= self.coarse.len() {
            return Err(Error::OutOfRange(format!("coarse block {block}")));
        }
        let (br, bc) = self.coarse.row_col(block);
        Ok((0..self.fy)
            .flat_map(|a| (0..self.fx).map(move |b| (br * self.fy + a, bc * self.fx + b)))
            .map(|(r, c)| self.fine.index(r, c))
            .collect())
    }

    /// Squared distance between a fine pixel centre and a block centre,
    /// scaled by four so that square grids compare exactly.
    fn dist2_scaled(&self, fine_rc: (usize, usize), block_rc: (usize, usize)) -> f64 {
        let dx = (2 * fine_rc.1 + 1) as i64 - (2 * block_rc.1 * self.fx + self.fx) as i64;
        let dy = (2 * fine_rc.0 + 1) as i64 - (2 * block_rc.0 * self.fy + self.fy) as i64;
        let (dx, dy) = (dx as f64 * self.fine.cell_width, dy as f64 * self.fine.cell_height);
        dx * dx + dy * dy
    }

    /// The `count` blocks nearest to a fine pixel (centre to centre), ties
    /// broken by `(row, col)`. Only blocks with `available[K]` are eligible.
    pub fn nearest_blocks_among(&self, fine: usize, count: usize, available: Option<&[bool]>) -> Result<Vec<usize>> {
        if fine >= self.fine.len() {
            return Err(Error::OutOfRange(format!("fine pixel {fine}")));
        }
        if count == 0 {
            return Err(Error::InvalidParameter("neighbourhood size must be at least 1".into()));
        }
        let frc = self.fine.row_col(fine);
        let (br, bc) = self.block_rc_of(fine);
        let (nr, nc) = (self.coarse.nrows, self.coarse.ncols);
        let bmin = self.coarse.cell_width.min(self.coarse.cell_height);
        let mut w = ((count as f64).sqrt() / 2.0).ceil() as usize + 1;
        loop {
            let r0 = br.saturating_sub(w);
            let r1 = (br + w).min(nr - 1);
            let c0 = bc.saturating_sub(w);
            let c1 = (bc + w).min(nc - 1);
            let mut cand: Vec<(f64, usize, usize)> = (r0..=r1)
                .flat_map(|r| (c0..=c1).map(move |c| (r, c)))
                .filter(|&(r, c)| available.is_none_or(|a| a[self.coarse.index(r, c)]))
                .map(|(r, c)| (self.dist2_scaled(frc, (r, c)), r, c))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let covers_all = r0 == 0 && c0 == 0 && r1 == nr - 1 && c1 == nc - 1;
            let bound = (2 * w + 1) as f64 * bmin;
            let enough = cand.len() >= count && cand[count - 1].0 < bound * bound;
            if covers_all || enough {
                cand.truncate(count);
                return Ok(cand.into_iter().map(|(_, r, c)| self.coarse.index(r, c)).collect());
            }
            w += 1;
        }
    }

    pub fn nearest_blocks(&self, fine: usize, count: usize) -> Result<Vec<usize>> {
        self.nearest_blocks_among(fine, count, None)
    }

    /// Nearest-neighbour refinement: every fine pixel takes its block's value.
    pub fn refine(&self, coarse: &ScalarField) -> Result<ScalarField> {
        self.coarse.check_aligned(&coarse.spec, "refine")?;
        let values = (0..self.fine.len())
            .map(|i| coarse.values[self.block_of(i).expect("in range")])
            .collect();
        Ok(ScalarField {
            spec: GridSpec { nodata: coarse.spec.nodata, ..self.fine },
            values,
        })
    }

    fn block_mean(&self, values: &[f64], spec: &GridSpec, block: usize, f: impl Fn(f64) -> f64) -> Option<f64> {
        let mut sum = 0.0;
        for i in self.fine_pixels_of(block).expect("in range") {
            let v = values[i];
            if spec.is_nodata(v) {
                return None;
            }
            sum += f(v);
        }
        Some(sum / self.p() as f64)
    }
}

fn coarse_spec_for(map: &CoarseFineMap, field: &GridSpec) -> Result<GridSpec> {
    map.fine.check_aligned(field, "upscale input")?;
    Ok(GridSpec { nodata: field.nodata, ..map.coarse })
}

/// Arithmetic block means. Any nodata pixel makes its block nodata.
pub fn upscale_scalar(field: &ScalarField, map: &CoarseFineMap) -> Result<ScalarField> {
    let spec = coarse_spec_for(map, &field.spec)?;
    let values = (0..spec.len())
        .map(|k| map.block_mean(&field.values, &field.spec, k, |v| v).unwrap_or(spec.nodata))
        .collect();
    Ok(ScalarField { spec, values })
}

/// Layer-wise arithmetic block means; a block is nodata when any of its
/// pixels is nodata in any layer.
pub fn upscale_multi(field: &MultiField, map: &CoarseFineMap) -> Result<MultiField> {
    let spec = coarse_spec_for(map, &field.spec)?;
    let mut layers = vec![vec![spec.nodata; spec.len()]; field.components()];
    for k in 0..spec.len() {
        let pixels = map.fine_pixels_of(k)?;
        if pixels.iter().any(|&i| field.is_nodata(i)) {
            continue;
        }
        for (out, layer) in layers.iter_mut().zip(&field.layers) {
            out[k] = pixels.iter().map(|&i| layer[i]).sum::<f64>() / map.p() as f64;
        }
    }
    MultiField::new(spec, field.names.clone(), layers)
}

/// Euclidean upscaling of compositions: part-wise arithmetic means.
pub fn upscale_euclidean(field: &CompositionField, map: &CoarseFineMap) -> Result<CompositionField> {
    let m = upscale_multi(field.as_multi(), map)?;
    CompositionField::new(m.spec, m.names, m.layers)
}

/// Aitchison upscaling: closure of the part-wise geometric block means.
pub fn upscale_aitchison(field: &CompositionField, map: &CoarseFineMap) -> Result<CompositionField> {
    let spec = coarse_spec_for(map, field.spec())?;
    let logs = MultiField {
        spec: *field.spec(),
        names: field.names().to_vec(),
        layers: field
            .as_multi()
            .layers
            .iter()
            .map(|l| l.iter().map(|v| if field.spec().is_nodata(*v) { *v } else { v.ln() }).collect())
            .collect(),
    };
    let means = upscale_multi(&logs, map)?;
    let pixels: Vec<Option<Composition>> = (0..spec.len())
        .map(|k| means.pixel(k).map(|l| Composition::from_log(&l)))
        .collect();
    CompositionField::from_pixels(spec, field.names().to_vec(), &pixels)
}

/// Adds i.i.d. `N(0, s2)` noise to every ILR coordinate of every pixel.
pub fn perturb_ilr_field<R: Rng + ?Sized>(
    field: &CompositionField,
    basis: &SimplexBasis,
    s2: f64,
    rng: &mut R,
) -> Result<CompositionField> {
    if !(s2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance must be >= 0, got {s2}")));
    }
    if s2 == 0.0 {
        return Ok(field.clone());
    }
    let sd = s2.sqrt();
    let mut coords = field.to_ilr(basis)?;
    for i in 0..coords.spec.len() {
        if coords.is_nodata(i) {
            continue;
        }
        for layer in coords.layers.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            layer[i] += sd * z;
        }
    }
    CompositionField::from_ilr(&coords, basis)
}
