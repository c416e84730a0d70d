use super::*;
use crate::downscale::{aitchison_std, ilr_atprcok, DownscaleConfig, Prediction};
use crate::grid::{upscale_aitchison, ScalarField};
use crate::kriging::KrigingConfig;
use crate::simplex::{aitchison_dist, Composition};
use crate::trend::pearson;
use crate::variogram::empirical_variogram;

fn variance_at(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

#[test]
fn variance_over_all_pixels_matches_sill() {
    let spec = GridSpec::new(40, 40, 20.0).unwrap();
    let m = VariogramModel::spherical(0.0, 2.0, 200.0);
    for cap in [0, DENSE_NODE_CAP] {
        let sim = GrfSimulator::with_cap(&m, &spec, cap).unwrap();
        let mut rng = RngStream::new(12, 0);
        let fs: Vec<ScalarField> = (0..50).map(|_| sim.sample(&mut rng).unwrap()).collect();
        let mean_var = (0..spec.len())
            .map(|i| variance_at(&fs.iter().map(|f| f.values[i]).collect::<Vec<_>>()))
            .sum::<f64>()
            / spec.len() as f64;
        assert!((mean_var - 2.0).abs() < 0.05 * 2.0, "{:?}: {mean_var}", sim.method());
    }
}

#[test]
fn zero_sill_gives_zero_field() {
    let spec = GridSpec::new(7, 5, 10.0).unwrap();
    let m = VariogramModel::spherical(0.0, 0.0, 50.0);
    let f = simulate_grf(&m, &spec, &mut RngStream::new(1, 0)).unwrap();
    assert!(f.values.iter().all(|v| *v == 0.0));
}

#[test]
fn dense_pointwise_variance_matches_sill() {
    let spec = GridSpec::new(12, 12, 20.0).unwrap();
    let m = VariogramModel::spherical(0.1, 1.4, 150.0);
    let sim = GrfSimulator::new(&m, &spec).unwrap();
    assert_eq!(sim.method(), GrfMethod::Dense);
    let mut rng = RngStream::new(11, 0);
    let at: Vec<f64> = (0..50).map(|_| sim.sample(&mut rng).unwrap().values[spec.index(6, 5)]).collect();
    let v = variance_at(&at);
    assert!((v - 1.5).abs() < 0.25 * 1.5, "variance {v}");
}

#[test]
fn sequential_pointwise_variance_matches_sill() {
    let spec = GridSpec::new(40, 40, 20.0).unwrap();
    let m = VariogramModel::spherical(0.0, 2.0, 200.0);
    let sim = GrfSimulator::with_cap(&m, &spec, 0).unwrap();
    assert_eq!(sim.method(), GrfMethod::Sequential);
    let mut rng = RngStream::new(12, 0);
    let at: Vec<f64> = (0..50).map(|_| sim.sample(&mut rng).unwrap().values[spec.index(20, 20)]).collect();
    let v = variance_at(&at);
    assert!((v - 2.0).abs() < 0.25 * 2.0, "variance {v}");
}

#[test]
fn one_large_realization_reproduces_the_variogram() {
    let spec = GridSpec::new(120, 120, 20.0).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 300.0);
    let sim = GrfSimulator::with_cap(&m, &spec, 0).unwrap();
    let f = sim.sample(&mut RngStream::new(3, 0)).unwrap();
    let emp = empirical_variogram(&f, 20.0, 280.0).unwrap();
    for (h, g) in emp.lags.iter().zip(&emp.gamma) {
        let target = m.gamma(*h);
        assert!((g - target).abs() <= 0.2 * target, "lag {h}: {g} vs {target}");
    }
}

#[test]
fn dense_and_sequential_agree_in_distribution() {
    let spec = GridSpec::new(30, 30, 20.0).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 200.0);
    let dense = GrfSimulator::new(&m, &spec).unwrap();
    let seq = GrfSimulator::with_cap(&m, &spec, 0).unwrap();
    let mut rng = RngStream::new(5, 0);
    let avg = |sim: &GrfSimulator, rng: &mut RngStream| {
        let mut acc = vec![0.0; 6];
        let mut lags = Vec::new();
        for _ in 0..20 {
            let e = empirical_variogram(&sim.sample(rng).unwrap(), 20.0, 130.0).unwrap();
            for (a, g) in acc.iter_mut().zip(&e.gamma) {
                *a += g / 20.0;
            }
            lags = e.lags;
        }
        (acc, lags)
    };
    let (a, lags) = avg(&dense, &mut rng);
    let (b, _) = avg(&seq, &mut rng);
    for k in 1..6 {
        let target = m.gamma(lags[k]);
        assert!((a[k] - target).abs() < 0.15 * target, "dense lag {}: {} vs {target}", lags[k], a[k]);
        assert!((b[k] - target).abs() < 0.15 * target, "sequential lag {}: {} vs {target}", lags[k], b[k]);
    }
}

#[test]
fn same_seed_same_synthetic_field() {
    let spec = GridSpec::new(20, 15, 20.0).unwrap();
    let (a, ta) = generate_synthetic_psfs(&spec, 9).unwrap();
    let (b, tb) = generate_synthetic_psfs(&spec, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c, _) = generate_synthetic_psfs(&spec, 10).unwrap();
    assert_ne!(a, c);
    assert!(ta.sill >= SILL_BOUNDS.0 && ta.sill <= SILL_BOUNDS.1);
    assert_eq!(a.names(), texture_names().as_slice());
}

#[test]
fn small_sill_stays_near_the_centre() {
    let spec = GridSpec::new(30, 30, 20.0).unwrap();
    let gen = SyntheticGenerator::new(&spec).unwrap();
    let mu = Composition::new(vec![0.2, 0.3, 0.5]).unwrap();
    let spread = |sill: f64, seed: u64| {
        let mut rng = RngStream::new(seed, 0);
        let mut total = 0.0;
        for _ in 0..10 {
            let (f, _) = gen.sample_with(&mu, sill, &mut rng).unwrap();
            let px: Vec<Composition> = f.pixels().into_iter().flatten().collect();
            total += px.iter().map(|x| aitchison_dist(x, &mu).unwrap()).sum::<f64>() / px.len() as f64;
        }
        total / 10.0
    };
    assert!(spread(SILL_BOUNDS.0, 1) < spread(SILL_BOUNDS.1, 2));
}

#[test]
fn spatial_mean_is_near_the_centre() {
    let spec = GridSpec::new(500, 458, 20.0).unwrap();
    let (field, truth) = generate_synthetic_psfs(&spec, 21).unwrap();
    let gen = SyntheticGenerator::new(&GridSpec::new(2, 2, 20.0).unwrap()).unwrap();
    let mu = gen.basis().ilr(&Composition::new(truth.center.clone()).unwrap()).unwrap();
    let coords = field.to_ilr(gen.basis()).unwrap();
    // variance of a spatial mean: sill / N^2 * sum over all pixel pairs of the correlation
    let m = &truth.models[0];
    let (nc, nr) = (spec.ncols as i64, spec.nrows as i64);
    let reach = (m.range / spec.cell_width).ceil() as i64;
    let mut pairs = 0.0;
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let h = ((dr * dr + dc * dc) as f64).sqrt() * spec.cell_width;
            pairs += ((nr - dr.abs()) * (nc - dc.abs())) as f64 * m.cov(h);
        }
    }
    let n = spec.len() as f64;
    let se = (pairs / (n * n)).sqrt();
    for c in 0..2 {
        let mean = coords.layers[c].iter().sum::<f64>() / n;
        assert!((mean - mu.0[c]).abs() < 3.0 * se, "coordinate {c}: {mean} vs {} (se {se})", mu.0[c]);
    }
}

struct Setup {
    map: CoarseFineMap,
    basis: SimplexBasis,
    coarse: CompositionField,
    models: Vec<VariogramModel>,
}

fn setup(n: usize, f: usize, seed: u64) -> Setup {
    let spec = GridSpec::new(n, n, 20.0).unwrap();
    let map = CoarseFineMap::square(spec, f).unwrap();
    let gen = SyntheticGenerator::new(&spec).unwrap();
    let mu = Composition::new(vec![0.25, 0.35, 0.4]).unwrap();
    let (fine, truth) = gen.sample_with(&mu, 0.4, &mut RngStream::new(seed, 0)).unwrap();
    let coarse = upscale_aitchison(&fine, &map).unwrap();
    Setup { map, basis: gen.basis().clone(), coarse, models: truth.models }
}

#[test]
fn zero_variance_scale_reproduces_the_prediction() {
    let s = setup(24, 4, 31);
    let config = DownscaleConfig::default().with_models(s.models.clone()).with_kriging(KrigingConfig::default());
    let pred = ilr_atprcok(&s.coarse, &s.basis, &Covariates::none(), &s.map, &config).unwrap();
    let Prediction::Composition(p) = &pred.prediction else { panic!() };
    let cfg = BsgsConfig { variance_scale: 0.0, ..BsgsConfig::default() };
    let ens = bsgs(&s.coarse, &s.basis, &pred.engine.trend, &Covariates::none(), &s.models, &s.map, 2, 4, &cfg).unwrap();
    for r in &ens.realizations {
        for i in 0..s.map.fine.len() {
            for k in 0..3 {
                let (a, b) = (r.as_multi().layers[k][i], p.as_multi().layers[k][i]);
                assert!((a - b).abs() < 1e-10, "pixel {i} part {k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn realizations_are_reproducible_and_valid() {
    let s = setup(18, 3, 5);
    let trend = TrendModel::zero(&["ilr1".into(), "ilr2".into()], &[], true);
    let cfg = BsgsConfig::default();
    let a = bsgs(&s.coarse, &s.basis, &trend, &Covariates::none(), &s.models, &s.map, 3, 77, &cfg).unwrap();
    let b = bsgs(&s.coarse, &s.basis, &trend, &Covariates::none(), &s.models, &s.map, 3, 77, &cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.realizations[0], a.realizations[1]);
    assert_eq!(a.provenance.streams, vec![0, 1, 2]);
    for r in &a.realizations {
        assert_eq!(r.spec(), &s.map.fine);
        for x in r.pixels().into_iter().flatten() {
            assert!(x.parts().iter().all(|v| *v > 0.0));
            assert!((x.parts().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn ensemble_tracks_prediction_and_data() {
    let s = setup(30, 5, 8);
    let config = DownscaleConfig::default().with_models(s.models.clone());
    let pred = ilr_atprcok(&s.coarse, &s.basis, &Covariates::none(), &s.map, &config).unwrap();
    let ens = bsgs(&s.coarse, &s.basis, &pred.engine.trend, &Covariates::none(), &s.models, &s.map, 20, 3, &BsgsConfig::default()).unwrap();
    let mean = ens.ilr_mean(&s.basis).unwrap();
    let Prediction::Composition(p) = &pred.prediction else { panic!() };
    let kriged = p.to_ilr(&s.basis).unwrap();
    for c in 0..2 {
        let r = pearson(&mean.layers[c], &kriged.layers[c]);
        assert!(r >= 0.9, "coordinate {c}: correlation {r}");
    }
    let spread = aitchison_std(&s.coarse).unwrap();
    for r in &ens.realizations {
        let up = upscale_aitchison(r, &s.map).unwrap();
        let d: f64 = (0..s.map.coarse.len())
            .map(|k| aitchison_dist(&up.pixel(k).unwrap(), &s.coarse.pixel(k).unwrap()).unwrap())
            .sum::<f64>()
            / s.map.coarse.len() as f64;
        assert!(d <= 0.15 * spread, "block distance {d} vs spread {spread}");
    }
}

#[test]
fn simulated_residuals_follow_the_fine_model() {
    let s = setup(36, 6, 13);
    let trend = TrendModel::zero(&["ilr1".into(), "ilr2".into()], &[], true);
    let ens = bsgs(&s.coarse, &s.basis, &trend, &Covariates::none(), &s.models, &s.map, 20, 6, &BsgsConfig::default()).unwrap();
    let m = s.models[0];
    let mut acc = vec![0.0; 5];
    let mut lags = Vec::new();
    for r in &ens.realizations {
        let coords = r.to_ilr(&s.basis).unwrap();
        for c in 0..2 {
            let layer = ScalarField::new(s.map.fine, coords.layers[c].clone()).unwrap();
            let e = empirical_variogram(&layer, 40.0, 200.0).unwrap();
            for (a, g) in acc.iter_mut().zip(&e.gamma) {
                *a += g / 40.0;
            }
            lags = e.lags.clone();
        }
    }
    for (g, h) in acc.iter().zip(&lags) {
        let target = m.gamma(*h);
        assert!((g - target).abs() <= 0.25 * target, "lag {h}: {g} vs {target}");
    }
}

#[test]
fn wrong_model_count_is_rejected() {
    let s = setup(12, 3, 1);
    let trend = TrendModel::zero(&["ilr1".into(), "ilr2".into()], &[], true);
    let e = bsgs(&s.coarse, &s.basis, &trend, &Covariates::none(), &s.models[..1], &s.map, 1, 0, &BsgsConfig::default());
    assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
}

