//! Linear regression trend over covariate rasters.
//!
//! Each response component gets its own ordinary least-squares fit at the
//! coarse scale. Covariates are standardized internally; coefficients are
//! reported in original units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{upscale_scalar, CoarseFineMap, GridSpec, MultiField, ScalarField};

/// Named covariate rasters on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub fields: Vec<ScalarField>,
}

impl Covariates {
    pub fn new(names: Vec<String>, fields: Vec<ScalarField>) -> Result<Self> {
        if names.len() != fields.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), found: fields.len() });
        }
        if let Some(first) = fields.first() {
            for f in &fields[1..] {
                first.spec.check_aligned(&f.spec, "covariates")?;
            }
        }
        Ok(Covariates { names, fields })
    }

    /// No covariates: the trend is the intercept alone.
    pub fn none() -> Self {
        Covariates { names: Vec::new(), fields: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ScalarField> {
        self.names.iter().position(|n| n == name).map(|i| &self.fields[i])
    }

    fn check_spec(&self, spec: &GridSpec, what: &str) -> Result<()> {
        for f in &self.fields {
            spec.check_aligned(&f.spec, what)?;
        }
        Ok(())
    }

    pub fn cropped(&self, ncols: usize, nrows: usize) -> Result<Self> {
        Ok(Covariates {
            names: self.names.clone(),
            fields: self.fields.iter().map(|f| f.cropped(ncols, nrows)).collect::<Result<_>>()?,
        })
    }
}

/// Block means of every covariate.
pub fn upscale_covariates(fine: &Covariates, map: &CoarseFineMap) -> Result<Covariates> {
    Ok(Covariates {
        names: fine.names.clone(),
        fields: fine.fields.iter().map(|f| upscale_scalar(f, map)).collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTrend {
    pub name: String,
    /// Intercept first (when present), then one per covariate.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r2: f64,
    /// Correlation between fitted and observed values.
    pub pearson: f64,
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    pub covariates: Vec<String>,
    pub intercept: bool,
    pub components: Vec<ComponentTrend>,
}

impl TrendModel {
    /// Terms per component, including the intercept.
    pub fn terms(&self) -> usize {
        self.covariates.len() + usize::from(self.intercept)
    }

    /// A trend with every coefficient zero.
    pub fn zero(names: &[String], covariates: &[String], intercept: bool) -> Self {
        let terms = covariates.len() + usize::from(intercept);
        TrendModel {
            covariates: covariates.to_vec(),
            intercept,
            components: names
                .iter()
                .map(|n| ComponentTrend {
                    name: n.clone(),
                    coefficients: vec![0.0; terms],
                    std_errors: vec![0.0; terms],
                    r2: 0.0,
                    pearson: 0.0,
                    observations: 0,
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("trend serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: TrendModel = toml::from_str(text).map_err(|e| Error::Config(format!("trend model: {e}")))?;
        for c in &m.components {
            if c.coefficients.len() != m.terms() {
                return Err(Error::DimensionMismatch { expected: m.terms(), found: c.coefficients.len() });
            }
        }
        Ok(m)
    }

    /// Trend value of component `c` for one pixel's covariate values.
    pub fn evaluate(&self, c: usize, x: &[f64]) -> f64 {
        let beta = &self.components[c].coefficients;
        let (b0, slopes) = if self.intercept { (beta[0], &beta[1..]) } else { (0.0, &beta[..]) };
        b0 + slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendFit {
    pub model: TrendModel,
    /// Observed minus fitted; nodata where the response or any covariate is.
    pub residuals: MultiField,
}

const RANK_TOL: f64 = 1e-10;

/// Per-component OLS of `responses` on `covariates` (same grid).
pub fn fit_ols(responses: &MultiField, covariates: &Covariates, intercept: bool) -> Result<TrendFit> {
    covariates.check_spec(&responses.spec, "trend covariates")?;
    let spec = responses.spec;
    let rows: Vec<usize> = (0..spec.len())
        .filter(|&i| !responses.is_nodata(i) && covariates.fields.iter().all(|f| !f.is_nodata(i)))
        .collect();
    let l = covariates.len();
    let terms = l + usize::from(intercept);
    if terms == 0 {
        return Err(Error::InvalidParameter("trend needs an intercept or at least one covariate".into()));
    }
    let n = rows.len();
    if n <= terms {
        return Err(Error::InvalidParameter(format!(
            "{n} observations cannot support {terms} regression terms"
        )));
    }
    // standardization
    let mut centre = vec![0.0; l];
    let mut scale = vec![1.0; l];
    for (j, f) in covariates.fields.iter().enumerate() {
        let mean = rows.iter().map(|&i| f.values[i]).sum::<f64>() / n as f64;
        let m = if intercept { mean } else { 0.0 };
        let ss = rows.iter().map(|&i| (f.values[i] - m).powi(2)).sum::<f64>() / n as f64;
        let s = ss.sqrt();
        if !(s > 0.0) || s < RANK_TOL * mean.abs().max(1.0) {
            let mut names = vec![covariates.names[j].clone()];
            if intercept {
                names.push("intercept".into());
            }
            return Err(Error::RankDeficient(names));
        }
        centre[j] = m;
        scale[j] = s;
    }
    let x = DMatrix::from_fn(n, terms, |r, c| {
        if intercept && c == 0 {
            1.0
        } else {
            let j = c - usize::from(intercept);
            (covariates.fields[j].values[rows[r]] - centre[j]) / scale[j]
        }
    });
    let qr = x.clone().qr();
    let q = qr.q();
    let rmat = qr.r();
    let diag_max = (0..terms).map(|i| rmat[(i, i)].abs()).fold(0.0, f64::max);
    let term_name = |c: usize| -> String {
        if intercept && c == 0 {
            "intercept".into()
        } else {
            covariates.names[c - usize::from(intercept)].clone()
        }
    };
    for j in 0..terms {
        if rmat[(j, j)].abs() <= RANK_TOL * diag_max * (n as f64).sqrt() {
            // express column j through the earlier ones to name the culprits
            let mut names = vec![term_name(j)];
            if j > 0 {
                let r11 = rmat.view((0, 0), (j, j)).into_owned();
                let rhs = rmat.view((0, j), (j, 1)).into_owned();
                if let Some(coef) = r11.solve_upper_triangular(&rhs) {
                    for (k, c) in coef.iter().enumerate() {
                        if c.abs() > 1e-8 {
                            names.push(term_name(k));
                        }
                    }
                }
            }
            return Err(Error::RankDeficient(names));
        }
    }
    // (R^T R)^-1 for standard errors
    let rinv = rmat
        .clone()
        .solve_upper_triangular(&DMatrix::identity(terms, terms))
        .ok_or_else(|| Error::SingularSystem("trend design".into()))?;
    let xtx_inv = &rinv * rinv.transpose();
    // map standardized coefficients back: beta = T * beta_std
    let mut t = DMatrix::<f64>::identity(terms, terms);
    for j in 0..l {
        let c = j + usize::from(intercept);
        t[(c, c)] = 1.0 / scale[j];
        if intercept {
            t[(0, c)] = -centre[j] / scale[j];
        }
    }

    let mut components = Vec::with_capacity(responses.components());
    let mut residual_layers = Vec::with_capacity(responses.components());
    for (ci, layer) in responses.layers.iter().enumerate() {
        let y = DVector::from_iterator(n, rows.iter().map(|&i| layer[i]));
        let beta_std = rmat
            .solve_upper_triangular(&(q.transpose() * &y))
            .ok_or_else(|| Error::SingularSystem("trend design".into()))?;
        let fitted = &x * &beta_std;
        let resid = &y - &fitted;
        let rss = resid.norm_squared();
        let ymean = y.mean();
        let tss = y.iter().map(|v| (v - ymean).powi(2)).sum::<f64>();
        let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
        let pearson = pearson(fitted.as_slice(), y.as_slice());
        let sigma2 = rss / (n - terms) as f64;
        let cov = &t * (&xtx_inv * sigma2) * t.transpose();
        let beta = &t * &beta_std;
        components.push(ComponentTrend {
            name: responses.names[ci].clone(),
            coefficients: beta.iter().copied().collect(),
            std_errors: (0..terms).map(|k| cov[(k, k)].max(0.0).sqrt()).collect(),
            r2,
            pearson,
            observations: n,
        });
        let mut out = vec![spec.nodata; spec.len()];
        for (r, &i) in rows.iter().enumerate() {
            out[i] = resid[r];
        }
        residual_layers.push(out);
    }
    let model = TrendModel { covariates: covariates.names.clone(), intercept, components };
    let residuals = MultiField::new(spec, responses.names.clone(), residual_layers)?;
    Ok(TrendFit { model, residuals })
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

/// Evaluates every component of `model` on `covariates` (matched by name).
pub fn predict_trend(model: &TrendModel, covariates: &Covariates, spec: &GridSpec) -> Result<MultiField> {
    covariates.check_spec(spec, "trend covariates")?;
    let fields: Vec<&ScalarField> = model
        .covariates
        .iter()
        .map(|n| covariates.get(n).ok_or_else(|| Error::MissingCovariate(n.clone())))
        .collect::<Result<_>>()?;
    let mut layers = vec![vec![spec.nodata; spec.len()]; model.components.len()];
    let mut x = vec![0.0; fields.len()];
    for i in 0..spec.len() {
        if fields.iter().any(|f| f.is_nodata(i)) {
            continue;
        }
        for (xv, f) in x.iter_mut().zip(&fields) {
            *xv = f.values[i];
        }
        for (c, layer) in layers.iter_mut().enumerate() {
            layer[i] = model.evaluate(c, &x);
        }
    }
    MultiField::new(*spec, model.components.iter().map(|c| c.name.clone()).collect(), layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{upscale_multi, GridSpec};
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn field(spec: GridSpec, f: impl Fn(usize) -> f64) -> ScalarField {
        ScalarField::new(spec, (0..spec.len()).map(f).collect()).unwrap()
    }

    fn dtm(spec: GridSpec) -> ScalarField {
        field(spec, |i| 100.0 + 3.0 * (i % spec.ncols) as f64 + 2.0 * (i / spec.ncols) as f64 + ((i * 37) % 11) as f64)
    }

    #[test]
    fn upscaled_square_is_mean_of_squares() {
        let spec = GridSpec::new(2, 1, 1.0).unwrap();
        let d = ScalarField::new(spec, vec![0.0, 2.0]).unwrap();
        let cov = Covariates::new(vec!["dtm".into(), "dtm2".into()], vec![d.clone(), d.map(|v| v * v)]).unwrap();
        let map = CoarseFineMap::new(spec, 2, 1).unwrap();
        let up = upscale_covariates(&cov, &map).unwrap();
        assert_eq!(up.fields[0].values, vec![1.0]);
        assert_eq!(up.fields[1].values, vec![2.0]);
    }

    #[test]
    fn exact_linear_response_has_zero_residuals() {
        let spec = GridSpec::new(8, 7, 10.0).unwrap();
        let d = dtm(spec);
        let cov = Covariates::new(vec!["dtm".into(), "dtm2".into()], vec![d.clone(), d.map(|v| v * v)]).unwrap();
        let y = d.values.iter().map(|v| 1.5 + 0.2 * v - 0.001 * v * v).collect();
        let resp = MultiField::new(spec, vec!["y".into()], vec![y]).unwrap();
        let fit = fit_ols(&resp, &cov, true).unwrap();
        assert!(fit.residuals.layers[0].iter().all(|r| r.abs() < 1e-10));
        let b = &fit.model.components[0].coefficients;
        assert_abs_diff_eq!(b[0], 1.5, epsilon = 1e-8);
        assert_abs_diff_eq!(b[1], 0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(b[2], -0.001, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.model.components[0].r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn intercept_only_is_sample_mean() {
        let spec = GridSpec::new(5, 4, 1.0).unwrap();
        let y: Vec<f64> = (0..20).map(|i| (i * i % 7) as f64).collect();
        let mean = y.iter().sum::<f64>() / 20.0;
        let resp = MultiField::new(spec, vec!["y".into()], vec![y]).unwrap();
        let fit = fit_ols(&resp, &Covariates::none(), true).unwrap();
        assert_abs_diff_eq!(fit.model.components[0].coefficients[0], mean, epsilon = 1e-12);
        let pred = predict_trend(&fit.model, &Covariates::none(), &spec).unwrap();
        assert!(pred.layers[0].iter().all(|v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn noisy_quadratic_within_three_standard_errors() {
        let spec = GridSpec::new(20, 20, 100.0).unwrap();
        let mut rng = RngStream::new(11, 0);
        let d = field(spec, |i| 10.0 + 0.05 * i as f64 + ((i * 13) % 17) as f64);
        let y = d
            .values
            .iter()
            .map(|v| 2.0 * v - 0.01 * v * v + 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cov = Covariates::new(vec!["dtm".into(), "dtm2".into()], vec![d.clone(), d.map(|v| v * v)]).unwrap();
        let fit = fit_ols(&MultiField::new(spec, vec!["y".into()], vec![y]).unwrap(), &cov, true).unwrap();
        let c = &fit.model.components[0];
        for (k, truth) in [0.0, 2.0, -0.01].iter().enumerate() {
            assert!((c.coefficients[k] - truth).abs() < 3.0 * c.std_errors[k], "{k}: {c:?}");
        }
    }

    #[test]
    fn residuals_orthogonal_to_covariates() {
        let spec = GridSpec::new(9, 9, 1.0).unwrap();
        let d = dtm(spec);
        let y: Vec<f64> = (0..81).map(|i| ((i * 31) % 13) as f64 * 0.7).collect();
        let cov = Covariates::new(vec!["dtm".into()], vec![d.clone()]).unwrap();
        let fit = fit_ols(&MultiField::new(spec, vec!["y".into()], vec![y]).unwrap(), &cov, true).unwrap();
        let r = &fit.residuals.layers[0];
        let dot: f64 = r.iter().zip(&d.values).map(|(a, b)| a * b).sum();
        let scale = r.iter().map(|v| v * v).sum::<f64>().sqrt() * d.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dot.abs() / scale < 1e-8);
        assert!(r.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn collinear_covariates_are_named() {
        let spec = GridSpec::new(6, 6, 1.0).unwrap();
        let d = dtm(spec);
        let cov = Covariates::new(vec!["a".into(), "b".into()], vec![d.clone(), d.map(|v| 3.0 * v + 1.0)]).unwrap();
        let resp = MultiField::new(spec, vec!["y".into()], vec![d.values.clone()]).unwrap();
        match fit_ols(&resp, &cov, true) {
            Err(Error::RankDeficient(names)) => {
                assert!(names.contains(&"a".to_string()) && names.contains(&"b".to_string()), "{names:?}")
            }
            other => panic!("{other:?}"),
        }
        let cst = Covariates::new(vec!["k".into()], vec![ScalarField::constant(spec, 4.0)]).unwrap();
        assert!(matches!(fit_ols(&resp, &cst, true), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn prediction_commutes_with_upscaling() {
        let spec = GridSpec::new(8, 8, 5.0).unwrap();
        let map = CoarseFineMap::square(spec, 4).unwrap();
        let d = dtm(spec);
        let cov = Covariates::new(vec!["dtm".into(), "dtm2".into()], vec![d.clone(), d.map(|v| v * v)]).unwrap();
        let model = TrendModel {
            covariates: cov.names.clone(),
            intercept: true,
            components: vec![ComponentTrend {
                name: "y".into(),
                coefficients: vec![0.3, -0.02, 1e-4],
                std_errors: vec![0.0; 3],
                r2: 0.0,
                pearson: 0.0,
                observations: 0,
            }],
        };
        let fine = predict_trend(&model, &cov, &spec).unwrap();
        let up = upscale_multi(&fine, &map).unwrap();
        let coarse = predict_trend(&model, &upscale_covariates(&cov, &map).unwrap(), &map.coarse).unwrap();
        for (a, b) in up.layers[0].iter().zip(&coarse.layers[0]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(matches!(
            predict_trend(&model, &Covariates::none(), &spec),
            Err(Error::MissingCovariate(_))
        ));
        let text = model.to_toml();
        assert_eq!(TrendModel::from_toml(&text).unwrap(), model);
    }
}
