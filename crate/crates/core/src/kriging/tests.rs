use super::*;
use crate::grid::GridSpec;
use crate::rng::RngStream;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;

/// Dense Gauss-Jordan elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Ordinary point kriging at `target` from `(x, y, value)` samples.
fn ordinary_kriging(model: &VariogramModel, pts: &[(f64, f64, f64)], target: (f64, f64)) -> f64 {
    let n = pts.len();
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut b = vec![0.0; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = model.cov(d((pts[i].0, pts[i].1), (pts[j].0, pts[j].1)));
        }
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        b[i] = model.cov(d((pts[i].0, pts[i].1), target));
    }
    b[n] = 1.0;
    let w = gauss_solve(a, b);
    (0..n).map(|i| w[i] * pts[i].2).sum()
}

fn random_field(spec: GridSpec, seed: u64) -> ScalarField {
    let mut rng = RngStream::new(seed, 0);
    ScalarField::new(spec, (0..spec.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn block_block_examples() {
    let map = CoarseFineMap::square(GridSpec::new(4, 4, 10.0).unwrap(), 1).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 35.0);
    assert_abs_diff_eq!(block_block_cov(&m, 0, 5, &map).unwrap(), m.cov(200f64.sqrt()), epsilon = 1e-15);
    let map = CoarseFineMap::square(GridSpec::new(6, 6, 10.0).unwrap(), 3).unwrap();
    let nug = VariogramModel::spherical(0.8, 0.0, 35.0);
    assert_abs_diff_eq!(block_block_cov(&nug, 2, 2, &map).unwrap(), 0.8 / 9.0, epsilon = 1e-15);
    assert_eq!(block_block_cov(&m, 0, 3, &map).unwrap(), block_block_cov(&m, 3, 0, &map).unwrap());
    // the cache and direct summation agree
    let cache = BlockCovarianceCache::new(&m, &map, 1);
    for k1 in 0..4 {
        for k2 in 0..4 {
            assert_abs_diff_eq!(cache.block_block(&map, k1, k2), block_block_cov(&m, k1, k2, &map).unwrap(), epsilon = 1e-14);
        }
    }
}

#[test]
fn point_block_examples() {
    let map = CoarseFineMap::square(GridSpec::new(4, 4, 10.0).unwrap(), 1).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 35.0);
    assert_abs_diff_eq!(point_block_cov(&m, 0, 2, &map).unwrap(), m.cov(20.0), epsilon = 1e-15);
    let map = CoarseFineMap::square(GridSpec::new(30, 3, 10.0).unwrap(), 3).unwrap();
    let nug = VariogramModel::spherical(0.6, 0.0, 35.0);
    assert_abs_diff_eq!(point_block_cov(&nug, 4, 1, &map).unwrap(), 0.6 / 9.0, epsilon = 1e-15);
    assert_eq!(point_block_cov(&m, 0, 9, &map).unwrap(), 0.0);
}

#[test]
fn single_neighbour_takes_all_weight() {
    let map = CoarseFineMap::square(GridSpec::new(6, 6, 10.0).unwrap(), 3).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 50.0);
    let res = random_field(map.coarse, 1);
    let cfg = KrigingConfig { neighbourhood: Neighbourhood::Local(1), ..Default::default() };
    for i in 0..map.fine.len() {
        let s = solve_atpk(i, &res, &m, &map, cfg).unwrap();
        assert_eq!(s.weights.len(), 1);
        assert_abs_diff_eq!(s.weights[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.prediction, res.values[map.block_of(i).unwrap()], epsilon = 1e-14);
    }
}

#[test]
fn equidistant_blocks_share_weight() {
    let map = CoarseFineMap::square(GridSpec::new(9, 3, 10.0).unwrap(), 3).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 80.0);
    let atpk = Atpk::new(&m, &map, vec![true, false, true], KrigingConfig::global()).unwrap();
    let s = atpk.predict(map.fine.index(1, 4), &[1.0, 0.0, 3.0]).unwrap();
    assert_eq!(s.blocks, vec![0, 2]);
    assert_abs_diff_eq!(s.weights[0], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(s.weights[1], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(s.prediction, 2.0, epsilon = 1e-12);
}

#[test]
fn unit_support_matches_ordinary_point_kriging() {
    for (n, seed) in [(5usize, 3u64), (8, 4)] {
        let spec = GridSpec::new(n, n, 15.0).unwrap();
        let map = CoarseFineMap::square(spec, 1).unwrap();
        let m = VariogramModel::spherical(0.05, 1.0, 60.0);
        let res = random_field(map.coarse, seed);
        let pts: Vec<(f64, f64, f64)> = (0..spec.len())
            .map(|k| {
                let (r, c) = spec.row_col(k);
                let (x, y) = spec.center(r, c);
                (x, y, res.values[k])
            })
            .collect();
        let atpk = Atpk::from_field(&m, &map, &res, KrigingConfig::global()).unwrap();
        for i in 0..spec.len() {
            let (r, c) = spec.row_col(i);
            // held-out target: drop the sample at the pixel to avoid trivial interpolation
            let others: Vec<usize> = (0..spec.len()).filter(|&k| k != i).collect();
            let sub: Vec<_> = others.iter().map(|&k| pts[k]).collect();
            let want = ordinary_kriging(&m, &sub, spec.center(r, c));
            let got = atpk.predict_with(i, others, &res.values).unwrap().prediction;
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
            // with the pixel's own sample the prediction is exact
            assert_abs_diff_eq!(atpk.predict(i, &res.values).unwrap().prediction, res.values[i], epsilon = 1e-8);
        }
    }
}

#[test]
fn matches_constrained_least_squares() {
    let map = CoarseFineMap::square(GridSpec::new(12, 12, 10.0).unwrap(), 2).unwrap();
    let m = VariogramModel::spherical(0.1, 2.0, 45.0);
    let res = random_field(map.coarse, 9);
    let atpk = Atpk::from_field(&m, &map, &res, KrigingConfig::global()).unwrap();
    for i in [0usize, 13, 77, 143] {
        let blocks: Vec<usize> = (0..map.coarse.len()).collect();
        let n = blocks.len();
        let s_mat: Vec<Vec<f64>> = (0..n)
            .map(|a| (0..n).map(|b| block_block_cov(&m, a, b, &map).unwrap()).collect())
            .collect();
        let sig: Vec<f64> = (0..n).map(|a| point_block_cov(&m, i, a, &map).unwrap()).collect();
        // eliminate the constraint: w = e_0 + N z, N columns e_k - e_0
        let red = n - 1;
        let mut a = vec![vec![0.0; red]; red];
        let mut b = vec![0.0; red];
        for p in 0..red {
            for q in 0..red {
                a[p][q] = s_mat[p + 1][q + 1] - s_mat[p + 1][0] - s_mat[0][q + 1] + s_mat[0][0];
            }
            b[p] = (sig[p + 1] - sig[0]) - (s_mat[p + 1][0] - s_mat[0][0]);
        }
        let z = gauss_solve(a, b);
        let mut w = vec![0.0; n];
        w[0] = 1.0 - z.iter().sum::<f64>();
        w[1..].copy_from_slice(&z);
        let got = atpk.predict(i, &res.values).unwrap();
        for k in 0..n {
            assert!((got.weights[k] - w[k]).abs() < 1e-8);
        }
    }
}

#[test]
fn zero_and_constant_residuals() {
    let map = CoarseFineMap::square(GridSpec::new(12, 9, 10.0).unwrap(), 3).unwrap();
    let models = [VariogramModel::spherical(0.0, 1.0, 60.0), VariogramModel::spherical(0.1, 0.5, 25.0)];
    let zero = MultiField::new(map.coarse, vec!["a".into(), "b".into()], vec![vec![0.0; 12]; 2]).unwrap();
    let p = predict_residual_field(&zero, &models, &map, KrigingConfig::default()).unwrap();
    assert!(p.field.layers.iter().flatten().all(|v| *v == 0.0));
    let cst = MultiField::new(map.coarse, vec!["a".into(), "b".into()], vec![vec![0.7; 12], vec![-2.0; 12]]).unwrap();
    let p = predict_residual_field(&cst, &models, &map, KrigingConfig::default()).unwrap();
    assert!(p.field.layers[0].iter().all(|v| (v - 0.7).abs() < 1e-12));
    assert!(p.field.layers[1].iter().all(|v| (v + 2.0).abs() < 1e-12));
}

#[test]
fn components_match_their_own_scalar_runs() {
    let map = CoarseFineMap::square(GridSpec::new(15, 12, 10.0).unwrap(), 3).unwrap();
    let models = [VariogramModel::spherical(0.0, 1.0, 80.0), VariogramModel::spherical(0.0, 1.0, 20.0)];
    let a = random_field(map.coarse, 1);
    let b = random_field(map.coarse, 2);
    let res = MultiField::new(map.coarse, vec!["a".into(), "b".into()], vec![a.values.clone(), b.values.clone()]).unwrap();
    let cfg = KrigingConfig { neighbourhood: Neighbourhood::Local(9), ..Default::default() };
    let joint = predict_residual_field(&res, &models, &map, cfg).unwrap();
    for (c, f) in [a, b].iter().enumerate() {
        let single = Atpk::from_field(&models[c], &map, f, cfg).unwrap().predict_field(&f.values).unwrap();
        assert_eq!(joint.field.layers[c], single.prediction);
    }
    assert_ne!(joint.field.layers[0], joint.field.layers[1]);
}

#[test]
fn global_neighbourhood_preserves_block_means() {
    let map = CoarseFineMap::new(GridSpec::new(15, 12, 20.0).unwrap(), 5, 4).unwrap();
    let m = VariogramModel::spherical(0.02, 1.0, 150.0);
    let res = random_field(map.coarse, 5);
    let sol = Atpk::from_field(&m, &map, &res, KrigingConfig::global()).unwrap().predict_field(&res.values).unwrap();
    for k in 0..map.coarse.len() {
        let mean: f64 = map.fine_pixels_of(k).unwrap().iter().map(|&i| sol.prediction[i]).sum::<f64>() / map.p() as f64;
        assert!((mean - res.values[k]).abs() <= 1e-6 * res.values[k].abs().max(1e-3), "{mean} vs {}", res.values[k]);
    }
}

#[test]
fn neighbour_order_does_not_matter() {
    let map = CoarseFineMap::square(GridSpec::new(12, 12, 10.0).unwrap(), 3).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 70.0);
    let res = random_field(map.coarse, 8);
    let atpk = Atpk::from_field(&m, &map, &res, KrigingConfig::default()).unwrap();
    for i in [0usize, 50, 143] {
        let blocks = atpk.neighbours(i).unwrap();
        let a = atpk.predict_with(i, blocks.clone(), &res.values).unwrap();
        let mut rev = blocks.clone();
        rev.reverse();
        let b = atpk.predict_with(i, rev, &res.values).unwrap();
        assert!((a.prediction - b.prediction).abs() < 1e-12);
        assert!((a.variance - b.variance).abs() < 1e-12);
    }
}

#[test]
fn duplicate_blocks_are_reported() {
    let map = CoarseFineMap::square(GridSpec::new(6, 3, 10.0).unwrap(), 3).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 50.0);
    let atpk = Atpk::new(&m, &map, vec![true, true], KrigingConfig::global()).unwrap();
    match atpk.predict_with(0, vec![0, 0, 1], &[1.0, 2.0]) {
        Err(Error::SingularSystem(msg)) => assert!(msg.contains("0~0"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn nodata_blocks_are_skipped() {
    let map = CoarseFineMap::square(GridSpec::new(9, 9, 10.0).unwrap(), 3).unwrap();
    let m = VariogramModel::spherical(0.0, 1.0, 50.0);
    let mut res = random_field(map.coarse, 2);
    res.values[4] = res.spec.nodata;
    let sol = Atpk::from_field(&m, &map, &res, KrigingConfig::default()).unwrap().predict_field(&res.values).unwrap();
    for i in map.fine_pixels_of(4).unwrap() {
        assert!(map.fine.is_nodata(sol.prediction[i]));
    }
    for i in map.fine_pixels_of(0).unwrap() {
        assert!(sol.prediction[i].is_finite() && !map.fine.is_nodata(sol.prediction[i]));
    }
}

#[test]
fn diagonal_cokriging_equals_independent_kriging() {
    let map = CoarseFineMap::square(GridSpec::new(12, 12, 10.0).unwrap(), 3).unwrap();
    let models = [VariogramModel::spherical(0.0, 1.0, 60.0), VariogramModel::spherical(0.05, 0.4, 30.0)];
    let res = MultiField::new(
        map.coarse,
        vec!["a".into(), "b".into()],
        vec![random_field(map.coarse, 1).values, random_field(map.coarse, 2).values],
    )
    .unwrap();
    let cfg = KrigingConfig { neighbourhood: Neighbourhood::Local(9), ..Default::default() };
    let ind = predict_residual_field(&res, &models, &map, cfg).unwrap();
    let co = cokrige_residual_field(&res, &Lmc::diagonal(&models), &map, cfg).unwrap();
    for c in 0..2 {
        for (a, b) in ind.field.layers[c].iter().zip(&co.field.layers[c]) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in ind.variance.layers[c].iter().zip(&co.variance.layers[c]) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn dense_cokriging_weights_sum_to_identity() {
    let map = CoarseFineMap::square(GridSpec::new(12, 9, 10.0).unwrap(), 3).unwrap();
    let b1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 0.8]);
    let b2 = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, -0.2, 0.5]);
    let lmc = Lmc::new(vec![
        LmcStructure { model: VariogramModel::spherical(0.0, 1.0, 70.0), coreg: b1 },
        LmcStructure { model: VariogramModel::spherical(0.0, 1.0, 20.0), coreg: b2 },
    ])
    .unwrap();
    let res = MultiField::new(
        map.coarse,
        vec!["a".into(), "b".into()],
        vec![random_field(map.coarse, 3).values, random_field(map.coarse, 4).values],
    )
    .unwrap();
    let out = cokrige_residual_field(&res, &lmc, &map, KrigingConfig::global().with_weights()).unwrap();
    let mut offdiag = 0.0f64;
    for w in out.weights.unwrap().into_iter().flatten() {
        let sum = w.lambda.iter().fold(DMatrix::<f64>::zeros(2, 2), |acc, l| acc + l);
        assert!((sum - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
        offdiag = offdiag.max(w.lambda.iter().map(|l| l[(0, 1)].abs()).fold(0.0, f64::max));
    }
    assert!(offdiag > 1e-6);
    // global cokriging is coherent too
    for k in 0..map.coarse.len() {
        for c in 0..2 {
            let mean: f64 = map.fine_pixels_of(k).unwrap().iter().map(|&i| out.field.layers[c][i]).sum::<f64>() / 9.0;
            assert!((mean - res.layers[c][k]).abs() < 1e-8);
        }
    }
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(Lmc::new(vec![LmcStructure { model: VariogramModel::spherical(0.0, 1.0, 5.0), coreg: bad }]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_sum_to_one(
        f in 1usize..4, nc in 2usize..5, nr in 2usize..5, nb in 1usize..12,
        range in 5.0f64..200.0, nugget in 0.0f64..0.5, seed in 0u64..1000,
    ) {
        let map = CoarseFineMap::square(GridSpec::new(nc * f, nr * f, 10.0).unwrap(), f).unwrap();
        let m = VariogramModel::spherical(nugget, 1.0, range);
        let res = random_field(map.coarse, seed);
        let cfg = KrigingConfig { neighbourhood: Neighbourhood::Local(nb), ..Default::default() };
        let atpk = Atpk::from_field(&m, &map, &res, cfg).unwrap();
        for i in 0..map.fine.len() {
            let s = atpk.predict(i, &res.values).unwrap();
            prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(s.blocks.contains(&map.block_of(i).unwrap()));
            prop_assert!(s.variance > -1e-9);
        }
    }
}
