//! Validation harness: synthetic suites scored against known fine fields,
//! the noise-sensitivity protocol and the upscale-downscale round trip on a
//! user raster.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bsgs::SyntheticGenerator;
use crate::downscale::{diagnostics, DownscaleConfig, MethodTag};
use crate::error::{Error, Result};
use crate::grid::{perturb_ilr_field, CoarseFineMap, CompositionField, GridSpec};
use crate::io::format_g17;
use crate::rng::RngStream;
use crate::simplex::SimplexBasis;
use crate::trend::Covariates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 150 x 137 cells, 20 realizations, factors up to 15.
    Desk,
    /// 500 x 458 cells, 100 realizations, factors up to 30.
    Full,
}

impl Profile {
    pub fn grid(self) -> GridSpec {
        match self {
            Profile::Desk => GridSpec::new(150, 137, 20.0).expect("valid"),
            Profile::Full => GridSpec::new(500, 458, 20.0).expect("valid"),
        }
    }

    pub fn realizations(self) -> usize {
        match self {
            Profile::Desk => 20,
            Profile::Full => 100,
        }
    }

    pub fn max_factor(self) -> usize {
        match self {
            Profile::Desk => 15,
            Profile::Full => 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchConfig {
    pub grid: GridSpec,
    pub realizations: usize,
    /// Linear factors `f` (P = f^2) drawn uniformly per realization.
    pub factors: Vec<usize>,
    pub methods: Vec<MethodTag>,
    pub downscale: DownscaleConfig,
    pub seed: u64,
}

impl SyntheticBenchConfig {
    pub fn profile(profile: Profile, seed: u64) -> Self {
        SyntheticBenchConfig {
            grid: profile.grid(),
            realizations: profile.realizations(),
            factors: (2..=profile.max_factor()).collect(),
            methods: MethodTag::ALL.to_vec(),
            downscale: DownscaleConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBenchConfig {
    pub grid: GridSpec,
    pub realizations: usize,
    pub factor: usize,
    /// Noise variances as fractions of each realization's sill.
    pub s2_fractions: Vec<f64>,
    pub methods: Vec<MethodTag>,
    pub downscale: DownscaleConfig,
    pub seed: u64,
}

impl SensitivityBenchConfig {
    pub fn profile(profile: Profile, seed: u64) -> Self {
        SensitivityBenchConfig {
            grid: profile.grid(),
            realizations: profile.realizations(),
            factor: 15,
            s2_fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            methods: MethodTag::ALL.to_vec(),
            downscale: DownscaleConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpDownBenchConfig {
    pub factors: Vec<usize>,
    pub methods: Vec<MethodTag>,
    pub downscale: DownscaleConfig,
}

impl Default for UpDownBenchConfig {
    fn default() -> Self {
        UpDownBenchConfig { factors: (2..=10).collect(), methods: MethodTag::ALL.to_vec(), downscale: DownscaleConfig::default() }
    }
}

/// One reconstruction scored against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub realization: usize,
    pub method: MethodTag,
    pub factor: usize,
    pub sill: f64,
    /// Noise variance added to the coarse ILR data.
    pub s2: f64,
    pub s2_fraction: f64,
    /// Mean per-pixel Euclidean distance to the reference.
    pub mean_error: f64,
    pub negative_pixels: usize,
    pub valid_pixels: usize,
    pub max_unit_sum_deviation: f64,
    /// Pixel counts of `|sum - 1|` per [`UNIT_SUM_BINS`] class.
    pub unit_sum_histogram: Vec<usize>,
}

impl BenchRow {
    pub fn violating_fraction(&self) -> f64 {
        self.negative_pixels as f64 / self.valid_pixels.max(1) as f64
    }
}

/// Upper edges of the `|sum - 1|` histogram classes; the last class is
/// open.
pub const UNIT_SUM_BINS: [f64; 5] = [1e-15, 1e-12, 1e-9, 1e-6, 1e-3];

fn unit_sum_histogram(dev: &[f64]) -> Vec<usize> {
    let mut h = vec![0; UNIT_SUM_BINS.len() + 1];
    for d in dev.iter().filter(|d| d.is_finite()) {
        let k = UNIT_SUM_BINS.iter().position(|e| d < e).unwrap_or(UNIT_SUM_BINS.len());
        h[k] += 1;
    }
    h
}

/// Error summary of one method under one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodTag,
    /// `all`, `f=<k>` or `s2=<fraction>`.
    pub setting: String,
    pub runs: usize,
    /// Statistics of the per-run mean errors.
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub runs_with_violations: usize,
    pub negative_pixels: usize,
    pub mean_violating_fraction: f64,
    pub max_unit_sum_deviation: f64,
    pub unit_sum_histogram: Vec<usize>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(method: MethodTag, setting: String, rows: &[&BenchRow]) -> MethodSummary {
    let n = rows.len();
    let mut e: Vec<f64> = rows.iter().map(|r| r.mean_error).collect();
    e.sort_by(f64::total_cmp);
    let mean = e.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 { (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    let mut hist = vec![0; UNIT_SUM_BINS.len() + 1];
    for r in rows {
        for (h, c) in hist.iter_mut().zip(&r.unit_sum_histogram) {
            *h += c;
        }
    }
    MethodSummary {
        method,
        setting,
        runs: n,
        mean,
        std,
        q05: quantile(&e, 0.05),
        q25: quantile(&e, 0.25),
        median: quantile(&e, 0.5),
        q75: quantile(&e, 0.75),
        q95: quantile(&e, 0.95),
        runs_with_violations: rows.iter().filter(|r| r.negative_pixels > 0).count(),
        negative_pixels: rows.iter().map(|r| r.negative_pixels).sum(),
        mean_violating_fraction: rows.iter().map(|r| r.violating_fraction()).sum::<f64>() / n.max(1) as f64,
        max_unit_sum_deviation: rows.iter().map(|r| r.max_unit_sum_deviation).fold(0.0, f64::max),
        unit_sum_histogram: hist,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Synthetic,
    Sensitivity,
    UpDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub kind: BenchKind,
    pub rows: Vec<BenchRow>,
    /// Per method over all runs, then per factor or noise level.
    pub summaries: Vec<MethodSummary>,
}

impl BenchmarkReport {
    fn build(kind: BenchKind, rows: Vec<BenchRow>) -> Self {
        let mut methods: Vec<MethodTag> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        let mut summaries = Vec::new();
        for &m in &methods {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m).collect();
            summaries.push(summarize(m, "all".into(), &mine));
            match kind {
                BenchKind::Sensitivity => {
                    let mut levels: Vec<f64> = mine.iter().map(|r| r.s2_fraction).collect();
                    levels.sort_by(f64::total_cmp);
                    levels.dedup();
                    for l in levels {
                        let sub: Vec<&BenchRow> = mine.iter().copied().filter(|r| r.s2_fraction == l).collect();
                        summaries.push(summarize(m, format!("s2={}", format_g17(l)), &sub));
                    }
                }
                _ => {
                    let mut fs: Vec<usize> = mine.iter().map(|r| r.factor).collect();
                    fs.sort_unstable();
                    fs.dedup();
                    for f in fs {
                        let sub: Vec<&BenchRow> = mine.iter().copied().filter(|r| r.factor == f).collect();
                        summaries.push(summarize(m, format!("f={f}"), &sub));
                    }
                }
            }
        }
        BenchmarkReport { kind, rows, summaries }
    }

    pub fn summary(&self, method: MethodTag, setting: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method && s.setting == setting)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "realization,method,factor,p,sill,s2_fraction,s2,mean_error,negative_pixels,valid_pixels,violating_fraction,max_unit_sum_deviation\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.realization,
                r.method.as_str(),
                r.factor,
                r.factor * r.factor,
                format_g17(r.sill),
                format_g17(r.s2_fraction),
                format_g17(r.s2),
                format_g17(r.mean_error),
                r.negative_pixels,
                r.valid_pixels,
                format_g17(r.violating_fraction()),
                format_g17(r.max_unit_sum_deviation),
            )
            .unwrap();
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "method,setting,runs,mean,std,q05,q25,median,q75,q95,runs_with_violations,negative_pixels,mean_violating_fraction,max_unit_sum_deviation\n",
        );
        for s in &self.summaries {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.method.as_str(),
                s.setting,
                s.runs,
                format_g17(s.mean),
                format_g17(s.std),
                format_g17(s.q05),
                format_g17(s.q25),
                format_g17(s.median),
                format_g17(s.q75),
                format_g17(s.q95),
                s.runs_with_violations,
                s.negative_pixels,
                format_g17(s.mean_violating_fraction),
                format_g17(s.max_unit_sum_deviation),
            )
            .unwrap();
        }
        out
    }

    /// Unit-sum deviation histogram per method and setting.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("method,setting,class,upper_edge,pixels\n");
        for s in &self.summaries {
            for (k, c) in s.unit_sum_histogram.iter().enumerate() {
                let edge = UNIT_SUM_BINS.get(k).map_or("inf".to_string(), |e| format_g17(*e));
                writeln!(out, "{},{},{k},{edge},{c}", s.method.as_str(), s.setting).unwrap();
            }
        }
        out
    }

    /// Writes `rows.csv`, `summary.csv` and `unit_sum_histogram.csv`.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        let files = [
            ("rows.csv", self.rows_csv()),
            ("summary.csv", self.summary_csv()),
            ("unit_sum_histogram.csv", self.histogram_csv()),
        ];
        let mut out = Vec::new();
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Largest sub-grid whose sides are multiples of `f`, anchored at the
/// top-left corner.
pub fn crop_to_factor(field: &CompositionField, f: usize) -> Result<CompositionField> {
    let s = field.spec();
    let (nc, nr) = (s.ncols / f * f, s.nrows / f * f);
    if nc == 0 || nr == 0 {
        return Err(Error::GridMismatch(format!("grid {}x{} is smaller than the factor {f}", s.ncols, s.nrows)));
    }
    if (nc, nr) == (s.ncols, s.nrows) {
        return Ok(field.clone());
    }
    field.cropped(nc, nr)
}

struct Scored {
    mean_error: f64,
    negative_pixels: usize,
    valid_pixels: usize,
    max_unit_sum_deviation: f64,
    unit_sum_histogram: Vec<usize>,
}

fn score(
    method: MethodTag,
    coarse: &CompositionField,
    reference: &CompositionField,
    basis: &SimplexBasis,
    map: &CoarseFineMap,
    config: &DownscaleConfig,
) -> Result<Scored> {
    let out = method.downscale(coarse, basis, &Covariates::none(), map, config)?;
    let parts = out.prediction.values();
    let d = diagnostics(&parts, Some(reference), None, map)?;
    Ok(Scored {
        mean_error: d.mean_error.unwrap_or(f64::NAN),
        negative_pixels: d.negative_pixels,
        valid_pixels: d.valid_pixels,
        max_unit_sum_deviation: d.max_unit_sum_deviation,
        unit_sum_histogram: unit_sum_histogram(&d.unit_sum_deviation),
    })
}

fn row(realization: usize, method: MethodTag, factor: usize, sill: f64, s2_fraction: f64, s2: f64, s: Scored) -> BenchRow {
    BenchRow {
        realization,
        method,
        factor,
        sill,
        s2,
        s2_fraction,
        mean_error: s.mean_error,
        negative_pixels: s.negative_pixels,
        valid_pixels: s.valid_pixels,
        max_unit_sum_deviation: s.max_unit_sum_deviation,
        unit_sum_histogram: s.unit_sum_histogram,
    }
}

/// Synthetic suite: per realization, draw a field, draw a factor, upscale
/// with each method's geometry, downscale and score against the field.
/// Realization `r` uses stream `r` of the seed.
pub fn bench_synthetic(config: &SyntheticBenchConfig) -> Result<BenchmarkReport> {
    if config.factors.is_empty() || config.methods.is_empty() {
        return Err(Error::InvalidParameter("synthetic bench needs factors and methods".into()));
    }
    let gen = SyntheticGenerator::new(&config.grid)?;
    let mut rows = Vec::new();
    for r in 0..config.realizations {
        let mut rng = RngStream::new(config.seed, r as u64);
        let (truth, params) = gen.sample(&mut rng)?;
        let f = config.factors[rng.random_range(0..config.factors.len())];
        let truth = crop_to_factor(&truth, f)?;
        let map = CoarseFineMap::square(*truth.spec(), f)?;
        log::info!("synthetic realization {r}: sill {:.4}, factor {f}", params.sill);
        for &m in &config.methods {
            let coarse = m.upscale(&truth, &map)?;
            let s = score(m, &coarse, &truth, gen.basis(), &map, &config.downscale)?;
            rows.push(row(r, m, f, params.sill, 0.0, 0.0, s));
        }
    }
    Ok(BenchmarkReport::build(BenchKind::Synthetic, rows))
}

/// Noise sensitivity: the coarse data of each method get i.i.d. Gaussian
/// noise of variance `fraction * sill` on every ILR coordinate before
/// downscaling. A zero fraction leaves the data untouched.
pub fn bench_sensitivity(config: &SensitivityBenchConfig) -> Result<BenchmarkReport> {
    if config.s2_fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::InvalidParameter("noise fractions must be non-negative".into()));
    }
    let gen = SyntheticGenerator::new(&config.grid)?;
    let f = config.factor;
    let mut rows = Vec::new();
    for r in 0..config.realizations {
        let mut rng = RngStream::new(config.seed, r as u64);
        let (truth, params) = gen.sample(&mut rng)?;
        let truth = crop_to_factor(&truth, f)?;
        let map = CoarseFineMap::square(*truth.spec(), f)?;
        for (k, &frac) in config.s2_fractions.iter().enumerate() {
            let s2 = frac * params.sill;
            log::info!("sensitivity realization {r}: s2 fraction {frac}");
            for (mi, &m) in config.methods.iter().enumerate() {
                let clean = m.upscale(&truth, &map)?;
                let mut noise = rng.child(((k as u64) << 4) | mi as u64);
                let coarse = perturb_ilr_field(&clean, gen.basis(), s2, &mut noise)?;
                let s = score(m, &coarse, &truth, gen.basis(), &map, &config.downscale)?;
                rows.push(row(r, m, f, params.sill, frac, s2, s));
            }
        }
    }
    Ok(BenchmarkReport::build(BenchKind::Sensitivity, rows))
}

/// Round trip on a given fine composition raster: upscale by each factor
/// and method, downscale back, score against the (cropped) input.
pub fn bench_updown(fine: &CompositionField, basis: &SimplexBasis, config: &UpDownBenchConfig) -> Result<BenchmarkReport> {
    let mut rows = Vec::new();
    for &f in &config.factors {
        let reference = crop_to_factor(fine, f)?;
        let map = CoarseFineMap::square(*reference.spec(), f)?;
        log::info!("up-down factor {f}");
        for &m in &config.methods {
            let coarse = m.upscale(&reference, &map)?;
            let s = score(m, &coarse, &reference, basis, &map, &config.downscale)?;
            rows.push(row(0, m, f, f64::NAN, 0.0, 0.0, s));
        }
    }
    Ok(BenchmarkReport::build(BenchKind::UpDown, rows))
}
