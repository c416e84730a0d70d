use std::path::Path;

use coda_downscale::bench::{
    bench_sensitivity, bench_synthetic, bench_updown, BenchmarkReport, Profile, SensitivityBenchConfig,
    SyntheticBenchConfig, UpDownBenchConfig,
};
use coda_downscale::bsgs::{bsgs, texture_names};
use coda_downscale::downscale::{ilr_atprcok, upscale_with, DownscaleConfig, MethodTag, ModelSource, Prediction};
use coda_downscale::grid::{CoarseFineMap, CompositionField, GridSpec};
use coda_downscale::io::{format_g17, read_ascii_grid};
use coda_downscale::kriging::Neighbourhood;
use coda_downscale::simplex::{build_sbp_basis, Partition, SimplexBasis};
use coda_downscale::texture::classify_field;
use coda_downscale::trend::{fit_ols, Covariates};
use coda_downscale::variogram::{
    default_lag_settings, deconvolve, empirical_variogram, DeconvolutionSettings, Family, VariogramModel,
};
use coda_downscale::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::run::{load_composition, FileConfig, Run};
use crate::{Cli, Command, TargetArgs};

/// A list of variogram models, one per modelled component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelSet {
    models: Vec<VariogramModel>,
}

impl ModelSet {
    fn read(path: &Path) -> Result<Vec<VariogramModel>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: ModelSet = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(set.models)
    }

    fn to_toml(models: &[VariogramModel]) -> Result<String> {
        toml::to_string(&ModelSet { models: models.to_vec() }).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    let zr = cli.zero_replacement.or(file.zero_replacement);
    let snapshot = serde_json::json!({ "file": serde_json::to_value(&file).ok(), "zero_replacement": zr });
    let mut run = Run::start(&cli.out, cli.command.name(), snapshot)?;
    run.manifest.threads = Some(cli.threads.unwrap_or_else(rayon::current_num_threads));
    if let Some(c) = &cli.config {
        run.manifest.input(c)?;
    }
    match &cli.command {
        Command::Ilr { input, partition } => ilr(&mut run, &input.input, partition.as_deref(), zr)?,
        Command::Upscale { input, factor, geometry } => {
            let fine = load_composition(&input.input, zr, &mut run)?;
            let map = CoarseFineMap::square(*fine.spec(), *factor)?;
            let coarse = upscale_with(*geometry, &fine, &map)?;
            run.manifest.note(format!("upscaling geometry {geometry:?}"));
            run.composition("coarse", &coarse)?;
        }
        Command::Downscale { input, target, method } => downscale(&mut run, &input.input, target, *method, &file, zr)?,
        Command::Simulate { input, target, realizations, seed } => {
            run.manifest.seed = Some(*seed);
            simulate(&mut run, &input.input, target, *realizations, *seed, &file, zr)?
        }
        Command::Deconvolve { input, factor, family } => deconvolve_cmd(&mut run, &input.input, *factor, *family, &file, zr)?,
        Command::Classify { input } => classify(&mut run, &input.input, zr)?,
        Command::BenchSynthetic { seed, full, realizations, factors, methods } => {
            run.manifest.seed = Some(*seed);
            let profile = if *full { Profile::Full } else { Profile::Desk };
            let mut cfg = SyntheticBenchConfig::profile(profile, *seed);
            cfg.downscale = file.downscale.clone();
            if let Some(n) = realizations {
                cfg.realizations = *n;
            }
            if let Some(f) = factors {
                cfg.factors = f.clone();
            }
            if let Some(m) = methods {
                cfg.methods = m.clone();
            }
            run.manifest.config["bench"] = serde_json::to_value(&cfg).unwrap_or_default();
            report(&mut run, &bench_synthetic(&cfg)?)?;
        }
        Command::BenchSensitivity { seed, full, realizations, factor, s2_fractions, methods } => {
            run.manifest.seed = Some(*seed);
            let profile = if *full { Profile::Full } else { Profile::Desk };
            let mut cfg = SensitivityBenchConfig::profile(profile, *seed);
            cfg.downscale = file.downscale.clone();
            cfg.factor = *factor;
            if let Some(n) = realizations {
                cfg.realizations = *n;
            }
            if let Some(s) = s2_fractions {
                cfg.s2_fractions = s.clone();
            }
            if let Some(m) = methods {
                cfg.methods = m.clone();
            }
            run.manifest.config["bench"] = serde_json::to_value(&cfg).unwrap_or_default();
            report(&mut run, &bench_sensitivity(&cfg)?)?;
        }
        Command::BenchUpdown { input, factors, methods } => {
            let fine = load_composition(&input.input, zr, &mut run)?;
            let mut cfg = UpDownBenchConfig { downscale: file.downscale.clone(), ..UpDownBenchConfig::default() };
            if let Some(f) = factors {
                cfg.factors = f.clone();
            }
            if let Some(m) = methods {
                cfg.methods = m.clone();
            }
            run.manifest.config["bench"] = serde_json::to_value(&cfg).unwrap_or_default();
            let basis = SimplexBasis::default_for(fine.parts()).with_names(fine.names().to_vec())?;
            report(&mut run, &bench_updown(&fine, &basis, &cfg)?)?;
        }
    }
    let manifest = run.finish()?;
    println!("{}", manifest.display());
    Ok(())
}

fn report(run: &mut Run, rep: &BenchmarkReport) -> Result<()> {
    run.text("rows.csv", &rep.rows_csv())?;
    run.text("summary.csv", &rep.summary_csv())?;
    run.text("unit_sum_histogram.csv", &rep.histogram_csv())?;
    for s in rep.summaries.iter().filter(|s| s.setting == "all") {
        println!(
            "{}  runs {:>3}  mean error {:.6}  std {:.6}  violating runs {:>3}  mean violating fraction {:.5}",
            s.method.as_str(),
            s.runs,
            s.mean,
            s.std,
            s.runs_with_violations,
            s.mean_violating_fraction
        );
    }
    Ok(())
}

fn basis_for(field: &CompositionField, partition: Option<&str>) -> Result<SimplexBasis> {
    let basis = match partition {
        Some(text) => build_sbp_basis(&Partition::parse(text)?)?,
        None => SimplexBasis::default_for(field.parts()),
    };
    if basis.parts() != field.parts() {
        return Err(Error::DimensionMismatch { expected: field.parts(), found: basis.parts() });
    }
    basis.with_names(field.names().to_vec())
}

fn contrast_csv(basis: &SimplexBasis) -> String {
    let v = basis.contrast();
    let mut out = format!("coordinate,{}\n", basis.part_names().join(","));
    for i in 0..v.nrows() {
        let row: Vec<String> = (0..v.ncols()).map(|j| format_g17(v[(i, j)])).collect();
        out.push_str(&format!("ilr{},{}\n", i + 1, row.join(",")));
    }
    out
}

fn ilr(run: &mut Run, input: &Path, partition: Option<&str>, zr: Option<f64>) -> Result<()> {
    let field = load_composition(input, zr, run)?;
    let basis = basis_for(&field, partition)?;
    let coords = field.to_ilr(&basis)?;
    for k in 0..coords.components() {
        let layer = coords.layer(k);
        run.grid(&format!("ilr{}.asc", k + 1), &layer)?;
        run.image(&format!("ilr{}.pgm", k + 1), &layer, None)?;
    }
    let back = CompositionField::from_ilr(&coords, &basis)?;
    let err = field
        .as_multi()
        .layers
        .iter()
        .zip(&back.as_multi().layers)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max);
    run.manifest.note(format!("max round-trip error {err:e}"));
    run.text("basis.csv", &contrast_csv(&basis))?;
    Ok(())
}

/// Fine grid and covariates implied by `--factor` and `--covariate`.
fn target(run: &mut Run, coarse: &GridSpec, t: &TargetArgs) -> Result<(CoarseFineMap, Covariates)> {
    if t.covariate.is_empty() {
        let f = t.factor.ok_or_else(|| Error::Config("--factor or --covariate is required".into()))?;
        if f == 0 {
            return Err(Error::InvalidParameter("factor must be positive".into()));
        }
        let fine = GridSpec {
            ncols: coarse.ncols * f,
            nrows: coarse.nrows * f,
            cell_width: coarse.cell_width / f as f64,
            cell_height: coarse.cell_height / f as f64,
            ..*coarse
        };
        return Ok((CoarseFineMap::square(fine, f)?, Covariates::none()));
    }
    let mut names = Vec::new();
    let mut fields = Vec::new();
    for spec in &t.covariate {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("covariate `{spec}` is not NAME=PATH")))?;
        fields.push(read_ascii_grid(path)?);
        run.manifest.input(path)?;
        names.push(name.to_string());
    }
    let map = CoarseFineMap::between(fields[0].spec, *coarse)?;
    if let Some(f) = t.factor {
        if (map.fx, map.fy) != (f, f) {
            return Err(Error::GridMismatch(format!("covariates imply factor {}x{}, not {f}", map.fx, map.fy)));
        }
    }
    Ok((map, Covariates::new(names, fields)?))
}

fn downscale_config(file: &FileConfig, t: &TargetArgs, run: &mut Run) -> Result<DownscaleConfig> {
    let mut cfg = file.downscale.clone();
    if let Some(n) = t.neighbours {
        cfg.kriging.neighbourhood = Neighbourhood::Local(n);
    }
    if t.global {
        cfg.kriging.neighbourhood = Neighbourhood::Global;
    }
    if t.no_intercept {
        cfg.intercept = false;
    }
    if let Some(p) = &t.models {
        cfg.models = ModelSource::Fixed { models: ModelSet::read(p)? };
        run.manifest.model(p)?;
    }
    run.manifest.config["downscale"] = serde_json::to_value(&cfg).unwrap_or_default();
    Ok(cfg)
}

fn downscale(run: &mut Run, input: &Path, t: &TargetArgs, method: MethodTag, file: &FileConfig, zr: Option<f64>) -> Result<()> {
    let coarse = load_composition(input, zr, run)?;
    let (map, cov) = target(run, coarse.spec(), t)?;
    let cfg = downscale_config(file, t, run)?;
    let basis = SimplexBasis::default_for(coarse.parts()).with_names(coarse.names().to_vec())?;
    let out = method.downscale(&coarse, &basis, &cov, &map, &cfg)?;
    run.manifest.note(format!("method {}", method.as_str()));
    match &out.prediction {
        Prediction::Composition(c) => run.composition("fine", c)?,
        other => run.parts("fine", &other.values())?,
    };
    run.model_text("models.toml", &ModelSet::to_toml(&out.engine.models)?)?;
    run.model_text("trend.toml", &out.engine.trend.to_toml())?;
    if !out.engine.deconvolution.is_empty() {
        run.json("deconvolution.json", &out.engine.deconvolution)?;
    }
    run.json("diagnostics.json", &out.diagnostics)?;
    println!(
        "{} valid pixels, {} with negative parts, max |sum-1| {:e}",
        out.diagnostics.valid_pixels, out.diagnostics.negative_pixels, out.diagnostics.max_unit_sum_deviation
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    run: &mut Run,
    input: &Path,
    t: &TargetArgs,
    n_real: usize,
    seed: u64,
    file: &FileConfig,
    zr: Option<f64>,
) -> Result<()> {
    let coarse = load_composition(input, zr, run)?;
    let (map, cov) = target(run, coarse.spec(), t)?;
    let cfg = downscale_config(file, t, run)?;
    run.manifest.config["bsgs"] = serde_json::to_value(file.bsgs).unwrap_or_default();
    let basis = SimplexBasis::default_for(coarse.parts()).with_names(coarse.names().to_vec())?;
    let pred = ilr_atprcok(&coarse, &basis, &cov, &map, &cfg)?;
    let ens = bsgs(&coarse, &basis, &pred.engine.trend, &cov, &pred.engine.models, &map, n_real, seed, &file.bsgs)?;
    for (r, real) in ens.realizations.iter().enumerate() {
        run.composition(&format!("realization{r:03}"), real)?;
    }
    let mean = CompositionField::from_ilr(&ens.ilr_mean(&basis)?, &basis)?;
    let mean = CompositionField::new(*mean.spec(), coarse.names().to_vec(), mean.into_multi().layers)?;
    run.composition("ilr_mean", &mean)?;
    run.model_text("models.toml", &ModelSet::to_toml(&pred.engine.models)?)?;
    run.json("provenance.json", &ens.provenance)?;
    run.manifest.note(ens.provenance.path.clone());
    println!("{} realizations on a {}x{} grid", ens.len(), map.fine.ncols, map.fine.nrows);
    Ok(())
}

fn deconvolve_cmd(run: &mut Run, input: &Path, f: usize, family: Family, file: &FileConfig, zr: Option<f64>) -> Result<()> {
    let coarse = load_composition(input, zr, run)?;
    let t = TargetArgs { factor: Some(f), covariate: Vec::new(), models: None, neighbours: None, global: false, no_intercept: false };
    let (map, _) = target(run, coarse.spec(), &t)?;
    let settings = match file.downscale.models {
        ModelSource::Deconvolve { settings, .. } => settings,
        _ => DeconvolutionSettings::default(),
    };
    run.manifest.config["deconvolution"] = serde_json::to_value(settings).unwrap_or_default();
    let basis = SimplexBasis::default_for(coarse.parts()).with_names(coarse.names().to_vec())?;
    let coords = coarse.to_ilr(&basis)?;
    let fit = fit_ols(&coords, &Covariates::none(), file.downscale.intercept)?;
    let (lag, max_dist) = default_lag_settings(&map.coarse);
    let mut models = Vec::new();
    let mut reports = Vec::new();
    let mut table = String::from("coordinate,lag,gamma,pairs\n");
    for c in 0..coords.components() {
        let emp = empirical_variogram(&fit.residuals.layer(c), lag, max_dist)?;
        for ((h, g), n) in emp.lags.iter().zip(&emp.gamma).zip(&emp.counts) {
            table.push_str(&format!("ilr{},{},{},{n}\n", c + 1, format_g17(*h), format_g17(*g)));
        }
        let dec = deconvolve(&emp, &map, family, settings)?;
        println!(
            "ilr{}: point model {:?} nugget {:.6} partial sill {:.6} range {:.1} ({} iterations)",
            c + 1,
            dec.model.family,
            dec.model.nugget,
            dec.model.psill,
            dec.model.range,
            dec.iterations
        );
        models.push(dec.model);
        reports.push(dec);
    }
    run.text("coarse_variogram.csv", &table)?;
    run.model_text("models.toml", &ModelSet::to_toml(&models)?)?;
    run.json("deconvolution.json", &reports)?;
    Ok(())
}

fn classify(run: &mut Run, input: &Path, zr: Option<f64>) -> Result<()> {
    let field = load_composition(input, zr, run)?;
    let field = texture_order(field)?;
    let classes = classify_field(&field)?;
    run.grid("texture.asc", &classes.codes())?;
    run.image("texture.pgm", &classes.codes(), Some((0.0, 12.0)))?;
    run.text("legend.csv", &classes.legend())?;
    print!("{}", classes.legend());
    Ok(())
}

/// Reorders parts to clay, silt, sand when named so; otherwise keeps the
/// input order.
fn texture_order(field: CompositionField) -> Result<CompositionField> {
    if field.parts() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: field.parts() });
    }
    let want = texture_names();
    let lower: Vec<String> = field.names().iter().map(|n| n.to_ascii_lowercase()).collect();
    let Some(order): Option<Vec<usize>> = want.iter().map(|w| lower.iter().position(|n| n == w)).collect() else {
        log::warn!("parts are not named clay, silt, sand; taking them in that order");
        return Ok(field);
    };
    let layers = order.iter().map(|&k| field.as_multi().layers[k].clone()).collect();
    CompositionField::new(*field.spec(), want, layers)
}
