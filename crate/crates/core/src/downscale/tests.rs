use super::*;
use crate::grid::{GridSpec, ScalarField};
use crate::kriging::{LmcStructure, Neighbourhood};
use crate::rng::RngStream;
use crate::simplex::{Partition, build_sbp_basis};
use approx::assert_abs_diff_eq;
use rand::Rng;

fn names3() -> Vec<String> {
    vec!["clay".into(), "silt".into(), "sand".into()]
}

fn random_composition_field(spec: GridSpec, basis: &SimplexBasis, scale: f64, seed: u64) -> CompositionField {
    let mut rng = RngStream::new(seed, 0);
    let layers = (0..basis.dim())
        .map(|_| (0..spec.len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
        .collect();
    let coords = MultiField::new(spec, vec!["ilr1".into(), "ilr2".into()], layers).unwrap();
    let c = CompositionField::from_ilr(&coords, basis).unwrap();
    CompositionField::new(spec, names3(), c.into_multi().layers).unwrap()
}

fn smooth_covariate(spec: GridSpec) -> ScalarField {
    ScalarField::new(
        spec,
        (0..spec.len())
            .map(|i| {
                let (r, c) = spec.row_col(i);
                100.0 + 2.0 * c as f64 - 1.5 * r as f64 + ((r * 7 + c * 3) % 5) as f64
            })
            .collect(),
    )
    .unwrap()
}

fn fixed(models: usize) -> DownscaleConfig {
    DownscaleConfig::default().with_models(vec![VariogramModel::spherical(0.0, 1.0, 80.0); models])
}

#[test]
fn scalar_linear_field_is_pure_trend() {
    let map = CoarseFineMap::square(GridSpec::new(12, 12, 10.0).unwrap(), 3).unwrap();
    let dtm = smooth_covariate(map.fine);
    let cov = Covariates::new(vec!["dtm".into()], vec![dtm.clone()]).unwrap();
    let fine = dtm.map(|v| 0.5 + 0.01 * v);
    let coarse = crate::grid::upscale_scalar(&fine, &map).unwrap();
    let out = atprk_scalar(&coarse, &cov, &map, &fixed(1)).unwrap();
    let Prediction::Scalar(p) = &out.prediction else { panic!() };
    for i in 0..map.fine.len() {
        assert_abs_diff_eq!(p.values[i], fine.values[i], epsilon = 1e-10);
        assert!(out.engine.residual.layers[0][i].abs() < 1e-10);
    }
}

#[test]
fn scalar_constant_stays_constant() {
    let map = CoarseFineMap::square(GridSpec::new(9, 6, 10.0).unwrap(), 3).unwrap();
    let coarse = ScalarField::constant(map.coarse, 4.25);
    // a constant field has a degenerate variogram: the placeholder model kicks in
    let out = atprk_scalar(&coarse, &Covariates::none(), &map, &DownscaleConfig::default()).unwrap();
    let Prediction::Scalar(p) = &out.prediction else { panic!() };
    assert!(p.values.iter().all(|v| (v - 4.25).abs() < 1e-12));
}

#[test]
fn unit_support_is_regression_plus_point_kriging() {
    let spec = GridSpec::new(6, 6, 20.0).unwrap();
    let map = CoarseFineMap::square(spec, 1).unwrap();
    let dtm = smooth_covariate(spec);
    let cov = Covariates::new(vec!["dtm".into()], vec![dtm.clone()]).unwrap();
    let mut rng = RngStream::new(4, 0);
    let data = ScalarField::new(spec, dtm.values.iter().map(|v| 0.02 * v + rng.random_range(-0.3..0.3)).collect()).unwrap();
    let out = atprk_scalar(&data, &cov, &map, &fixed(1)).unwrap();
    let Prediction::Scalar(p) = &out.prediction else { panic!() };
    // point kriging honours the data, so regression + kriging reproduces them
    for i in 0..spec.len() {
        assert_abs_diff_eq!(p.values[i], data.values[i], epsilon = 1e-9);
    }
}

#[test]
fn euclidean_constant_and_unit_sum() {
    let map = CoarseFineMap::square(GridSpec::new(12, 9, 10.0).unwrap(), 3).unwrap();
    let c = Composition::new(vec![0.2, 0.3, 0.5]).unwrap();
    let coarse = CompositionField::constant(map.coarse, names3(), &c);
    let out = atprcok_euclidean(&coarse, &Covariates::none(), &map, &fixed(3)).unwrap();
    let Prediction::Parts(p) = &out.prediction else { panic!() };
    for i in 0..map.fine.len() {
        assert_abs_diff_eq!(p.layers[2][i], 0.5, epsilon = 1e-12);
    }
    assert_eq!(out.diagnostics.negative_pixels, 0);

    let basis = SimplexBasis::default_for(3);
    let coarse = random_composition_field(map.coarse, &basis, 1.5, 3);
    let cfg = fixed(3).with_kriging(KrigingConfig::global());
    let out = atprcok_euclidean(&coarse, &Covariates::none(), &map, &cfg).unwrap();
    assert!(out.diagnostics.max_unit_sum_deviation < 1e-8);
}

#[test]
fn ilr_constant_and_constraints() {
    let map = CoarseFineMap::square(GridSpec::new(12, 9, 10.0).unwrap(), 3).unwrap();
    let basis = SimplexBasis::default_for(3);
    let c = Composition::new(vec![0.2, 0.3, 0.5]).unwrap();
    let coarse = CompositionField::constant(map.coarse, names3(), &c);
    let out = ilr_atprcok(&coarse, &basis, &Covariates::none(), &map, &DownscaleConfig::default()).unwrap();
    let Prediction::Composition(p) = &out.prediction else { panic!() };
    for px in p.pixels().into_iter().flatten() {
        assert!(aitchison_dist(&px, &c).unwrap() < 1e-12);
    }

    let coarse = random_composition_field(map.coarse, &basis, 2.5, 4);
    let dtm = smooth_covariate(map.fine);
    let cov = Covariates::new(vec!["dtm".into()], vec![dtm]).unwrap();
    let out = ilr_atprcok(&coarse, &basis, &cov, &map, &DownscaleConfig::default()).unwrap();
    let Prediction::Composition(p) = &out.prediction else { panic!() };
    for px in p.pixels().into_iter().flatten() {
        assert!(px.parts().iter().all(|v| *v > 0.0));
        assert!((px.parts().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(out.diagnostics.negative_pixels, 0);
}

#[test]
fn centre_preserving_under_global_neighbourhood() {
    let map = CoarseFineMap::new(GridSpec::new(20, 15, 10.0).unwrap(), 4, 3).unwrap();
    let basis = SimplexBasis::default_for(3);
    let coarse = random_composition_field(map.coarse, &basis, 1.0, 8);
    let cfg = fixed(2).with_kriging(KrigingConfig::global());
    let out = ilr_atprcok(&coarse, &basis, &Covariates::none(), &map, &cfg).unwrap();
    assert!(out.diagnostics.max_block_deviation.unwrap() < 1e-6, "{:?}", out.diagnostics.max_block_deviation);
}

#[test]
fn basis_choice_does_not_change_predictions() {
    let map = CoarseFineMap::square(GridSpec::new(12, 12, 10.0).unwrap(), 3).unwrap();
    let b1 = SimplexBasis::default_for(3);
    let b2 = build_sbp_basis(&Partition::parse("0+-;-++").unwrap()).unwrap();
    let coarse = random_composition_field(map.coarse, &b1, 1.0, 12);
    let cov = Covariates::new(vec!["dtm".into()], vec![smooth_covariate(map.fine)]).unwrap();
    let cfg = fixed(2).with_kriging(KrigingConfig { neighbourhood: Neighbourhood::Local(9), ..Default::default() });
    let a = ilr_atprcok(&coarse, &b1, &cov, &map, &cfg).unwrap();
    let b = ilr_atprcok(&coarse, &b2, &cov, &map, &cfg).unwrap();
    let (Prediction::Composition(pa), Prediction::Composition(pb)) = (&a.prediction, &b.prediction) else { panic!() };
    for (x, y) in pa.pixels().into_iter().zip(pb.pixels()) {
        assert!(aitchison_dist(&x.unwrap(), &y.unwrap()).unwrap() < 1e-8);
    }
}

#[test]
fn rescaled_parts_give_identical_predictions() {
    let map = CoarseFineMap::square(GridSpec::new(9, 9, 10.0).unwrap(), 3).unwrap();
    let basis = SimplexBasis::default_for(3);
    let coarse = random_composition_field(map.coarse, &basis, 1.0, 2);
    let scaled: Vec<Vec<f64>> = coarse.as_multi().layers.iter().map(|l| l.iter().map(|v| v * 100.0).collect()).collect();
    let scaled = CompositionField::from_raw(map.coarse, names3(), scaled, None).unwrap();
    let a = ilr_atprcok(&coarse, &basis, &Covariates::none(), &map, &fixed(2)).unwrap();
    let b = ilr_atprcok(&scaled, &basis, &Covariates::none(), &map, &fixed(2)).unwrap();
    for (x, y) in a.prediction.values().layers.iter().flatten().zip(b.prediction.values().layers.iter().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn simplex_side(out: &DownscaleResult, coarse: &CompositionField, basis: &SimplexBasis) -> CompositionField {
    simplex_predictor(
        coarse,
        &out.engine.coarse_trend,
        &out.engine.fine_trend,
        out.engine.weights.as_ref().unwrap(),
        basis,
    )
    .unwrap()
}

#[test]
fn simplex_predictor_matches_ilr_pipeline() {
    let map = CoarseFineMap::square(GridSpec::new(6, 6, 10.0).unwrap(), 3).unwrap();
    let basis = SimplexBasis::default_for(3)
        .rotated(&DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]))
        .unwrap();
    let coarse = random_composition_field(map.coarse, &basis, 1.2, 21);
    let cov = Covariates::new(vec!["dtm".into()], vec![smooth_covariate(map.fine)]).unwrap();
    let lmc = Lmc::new(vec![
        LmcStructure { model: VariogramModel::spherical(0.0, 1.0, 50.0), coreg: DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.7]) },
        LmcStructure { model: VariogramModel::spherical(0.0, 1.0, 15.0), coreg: DMatrix::from_row_slice(2, 2, &[0.2, -0.1, -0.1, 0.3]) },
    ])
    .unwrap();
    for models in [fixed(2).models, ModelSource::Coregionalized(lmc)] {
        let cfg = DownscaleConfig {
            kriging: KrigingConfig::global().with_weights(),
            intercept: true,
            models,
        };
        let out = ilr_atprcok(&coarse, &basis, &cov, &map, &cfg).unwrap();
        let Prediction::Composition(p) = &out.prediction else { panic!() };
        let s = simplex_side(&out, &coarse, &basis);
        for (x, y) in p.pixels().into_iter().zip(s.pixels()) {
            assert!(aitchison_dist(&x.unwrap(), &y.unwrap()).unwrap() < 1e-8);
        }
    }
}

#[test]
fn simplex_predictor_degenerate_weights() {
    let map = CoarseFineMap::square(GridSpec::new(4, 2, 10.0).unwrap(), 2).unwrap();
    let basis = SimplexBasis::default_for(3);
    let coarse = random_composition_field(map.coarse, &basis, 1.0, 5);
    let coarse_trend = MultiField::new(map.coarse, vec!["a".into(), "b".into()], vec![vec![0.1, 0.1], vec![-0.2, -0.2]]).unwrap();
    let fine_trend = MultiField::new(map.fine, vec!["a".into(), "b".into()], vec![vec![0.1; 8], vec![-0.2; 8]]).unwrap();
    let t = basis.ilr_inv(&[0.1, -0.2]).unwrap();
    // identity on block 1 only
    let ident: Vec<Option<MatrixWeights>> = (0..8)
        .map(|_| Some(MatrixWeights { blocks: vec![1], lambda: vec![DMatrix::identity(2, 2)] }))
        .collect();
    let out = simplex_predictor(&coarse, &coarse_trend, &fine_trend, &ident, &basis).unwrap();
    let e1 = coarse.pixel(1).unwrap().difference(&t).unwrap();
    let want = t.perturb(&e1).unwrap();
    for px in out.pixels().into_iter().flatten() {
        assert!(aitchison_dist(&px, &want).unwrap() < 1e-12);
    }
    let zero: Vec<Option<MatrixWeights>> = (0..8)
        .map(|_| Some(MatrixWeights { blocks: vec![0, 1], lambda: vec![DMatrix::zeros(2, 2); 2] }))
        .collect();
    let out = simplex_predictor(&coarse, &coarse_trend, &fine_trend, &zero, &basis).unwrap();
    for px in out.pixels().into_iter().flatten() {
        assert!(aitchison_dist(&px, &t).unwrap() < 1e-12);
    }
}

#[test]
fn diagnostics_examples() {
    let map = CoarseFineMap::square(GridSpec::new(2, 1, 1.0).unwrap(), 1).unwrap();
    let parts = MultiField::new(map.fine, names3(), vec![vec![0.51, 0.2], vec![0.51, 0.3], vec![0.0, 0.5]]).unwrap();
    let d = diagnostics(&parts, None, None, &map).unwrap();
    assert_abs_diff_eq!(d.unit_sum_deviation[0], 0.02, epsilon = 1e-12);
    assert_abs_diff_eq!(d.max_unit_sum_deviation, 0.02, epsilon = 1e-12);
    assert_eq!(d.negative_pixels, 0);

    let basis = SimplexBasis::default_for(3);
    let map = CoarseFineMap::square(GridSpec::new(6, 6, 1.0).unwrap(), 2).unwrap();
    let f = random_composition_field(map.fine, &basis, 1.0, 1);
    let d = diagnostics(f.as_multi(), Some(&f), None, &map).unwrap();
    assert_eq!(d.mean_error, Some(0.0));
    assert!(d.error_map.unwrap().iter().all(|e| *e == 0.0));
    assert!(d.max_unit_sum_deviation < 1e-12);
    let mut neg = f.as_multi().clone();
    neg.layers[0][3] = -0.01;
    assert_eq!(diagnostics(&neg, None, None, &map).unwrap().negative_pixels, 1);
}

#[test]
fn method_tags() {
    assert_eq!("aa".parse::<MethodTag>().unwrap(), MethodTag::AA);
    assert!("xx".parse::<MethodTag>().is_err());
    assert!(MethodTag::EA.compositional());
    assert_eq!(MethodTag::AE.upscaling(), UpscaleGeometry::Aitchison);
    assert_eq!(MethodTag::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","), "EE,EA,AE,AA");
}
