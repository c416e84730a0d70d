use std::path::Path;
use std::process::{Command, Output};

use coda_downscale::grid::{CompositionField, GridSpec};
use coda_downscale::io::{read_ascii_grid, read_composition, write_composition};
use coda_downscale::simplex::closure;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coda-downscale"));
    c.env("RUST_LOG", "error");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A smooth three-part field with every part strictly positive.
fn smooth_field(n: usize, cell: f64) -> CompositionField {
    let spec = GridSpec::new(n, n, cell).unwrap();
    let pixels: Vec<_> = (0..spec.len())
        .map(|i| {
            let (r, c) = spec.row_col(i);
            let (x, y) = (c as f64 / n as f64, r as f64 / n as f64);
            Some(closure(&[1.0 + x + 0.3 * (4.0 * y).sin(), 1.5 - 0.5 * x * y, 0.8 + y]).unwrap())
        })
        .collect();
    let names = vec!["clay".to_string(), "silt".to_string(), "sand".to_string()];
    CompositionField::from_pixels(spec, names, &pixels).unwrap()
}

#[test]
fn bench_synthetic_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["--out", out, "bench-synthetic", "--realizations", "3", "--seed", "7", "--factors", "5,10"];
    run(dir.path(), &args("a"));
    run(dir.path(), &args("b"));
    for name in ["rows.csv", "summary.csv", "unit_sum_histogram.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    let rows = std::fs::read_to_string(dir.path().join("a/rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 4);
    let manifest = std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
}

#[test]
fn downscale_by_one_returns_the_kriged_input() {
    // With f = 1 every block is a point, so ordinary point kriging with the
    // pixel itself among the data interpolates exactly.
    let dir = tempfile::tempdir().unwrap();
    let field = smooth_field(8, 30.0);
    write_composition(&field, dir.path(), "coarse").unwrap();
    std::fs::write(
        dir.path().join("models.toml"),
        "[[models]]\nfamily = \"spherical\"\nnugget = 0.0\npsill = 0.02\nrange = 120.0\n\n\
         [[models]]\nfamily = \"exponential\"\nnugget = 0.001\npsill = 0.03\nrange = 90.0\n",
    )
    .unwrap();
    let parts_models = "[[models]]\nfamily = \"spherical\"\nnugget = 0.0\npsill = 0.002\nrange = 150.0\n".repeat(3);
    std::fs::write(dir.path().join("parts.toml"), parts_models).unwrap();
    for (method, models) in [("AA", "models.toml"), ("EE", "parts.toml")] {
        let out = format!("out_{method}");
        run(
            dir.path(),
            &["--out", &out, "downscale", "--input", "coarse.toml", "--factor", "1", "--method", method, "--models", models],
        );
        let base = dir.path().join(&out);
        for (k, name) in field.names().iter().enumerate() {
            let got = read_ascii_grid(base.join(format!("fine_{name}.asc"))).unwrap();
            for (a, b) in got.values.iter().zip(&field.as_multi().layers[k]) {
                assert!((a - b).abs() < 1e-8, "{method} {name}: {a} vs {b}");
            }
        }
        assert!(base.join("diagnostics.json").exists());
        assert!(base.join(format!("fine_{}.pgm", field.names()[0])).exists());
    }
}

#[test]
fn zero_noise_matches_the_plain_suite() {
    let dir = tempfile::tempdir().unwrap();
    run(
        dir.path(),
        &["--out", "s", "bench-sensitivity", "--s2-fractions", "0", "--realizations", "1", "--factor", "10", "--seed", "3", "--methods", "AA,EE"],
    );
    run(dir.path(), &["--out", "p", "bench-synthetic", "--factors", "10", "--realizations", "1", "--seed", "3", "--methods", "AA,EE"]);
    let col = |file: &str| -> Vec<String> {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        let k = header.iter().position(|h| *h == "mean_error").unwrap();
        text.lines().skip(1).map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
    };
    let s = col("s/rows.csv");
    assert_eq!(s.len(), 2);
    assert_eq!(s, col("p/rows.csv"));
}

#[test]
fn upscale_classify_and_ilr_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_composition(&smooth_field(12, 20.0), dir.path(), "fine").unwrap();
    run(dir.path(), &["--out", "up", "upscale", "--input", "fine.toml", "--factor", "3"]);
    let coarse = read_composition(dir.path().join("up/coarse.toml"), None).unwrap();
    assert_eq!((coarse.spec().ncols, coarse.spec().cell_width), (4, 60.0));

    let out = run(dir.path(), &["--out", "cl", "classify", "--input", "fine.toml"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("code,label,pixels,fraction"));
    let codes = read_ascii_grid(dir.path().join("cl/texture.asc")).unwrap();
    assert!(codes.values.iter().all(|v| (1.0..=12.0).contains(v)));

    run(dir.path(), &["--out", "il", "ilr", "--input", "fine.toml", "--partition", "+-0;++-"]);
    assert!(dir.path().join("il/ilr2.asc").exists());
    let basis = std::fs::read_to_string(dir.path().join("il/basis.csv")).unwrap();
    assert!(basis.starts_with("coordinate,clay,silt,sand"));
}

#[test]
fn simulate_and_deconvolve_run_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_composition(&smooth_field(6, 60.0), dir.path(), "coarse").unwrap();
    run(dir.path(), &["--out", "dc", "deconvolve", "--input", "coarse.toml", "--factor", "3"]);
    assert!(dir.path().join("dc/models.toml").exists());
    run(
        dir.path(),
        &["--out", "sim", "simulate", "--input", "coarse.toml", "--factor", "3", "--models", "dc/models.toml", "--realizations", "2", "--seed", "5"],
    );
    let r = read_composition(dir.path().join("sim/realization001.toml"), None).unwrap();
    assert_eq!(r.spec().ncols, 18);
    assert!(dir.path().join("sim/ilr_mean.toml").exists());
}

#[test]
fn failures_exit_nonzero_with_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let err = fail(dir.path(), &["downscale", "--input", "missing.toml", "--factor", "2"]);
    let record: serde_json::Value = serde_json::from_str(err.lines().next().unwrap()).unwrap();
    assert_eq!(record["error"]["kind"], "io");
    assert_eq!(record["error"]["command"], "downscale");

    assert!(fail(dir.path(), &["bench-synthetic", "--bogus"]).contains("Usage"));
    assert!(fail(dir.path(), &["simulate", "--input", "x.toml", "--factor", "2"]).contains("--seed"));

    std::fs::write(dir.path().join("bad.toml"), "[downscale]\nunknown_key = 1\n").unwrap();
    let err = fail(dir.path(), &["--config", "bad.toml", "bench-synthetic", "--seed", "1"]);
    assert!(err.contains("\"config\""), "{err}");
}
