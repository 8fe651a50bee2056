use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fusesdm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusesdm")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/transect-mistnet")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn width(fit: &serde_json::Value, name: &str) -> f64 {
    let p = fit["parameters"].as_array().unwrap().iter().find(|p| p["name"] == name).unwrap();
    p["upper"].as_f64().expect("finite upper") - p["lower"].as_f64().expect("finite lower")
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = fusesdm(&["simulate", "--seed", "9", "--out", run], dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["design.csv", "pattern.csv", "observations.csv", "observations_partial.csv", "x1.asc"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let partial = fs::read_to_string(dir.path().join("a/observations_partial.csv")).unwrap();
    assert_eq!(partial.lines().next(), Some("source,unit_id,distance"));
}

#[test]
fn simulated_data_round_trip_through_fit() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fusesdm(&["simulate", "--out", "sim"], dir.path())), 0);
    let out = fusesdm(&["fit", "--config", "sim/fit.toml", "--scenario", "fused-distance", "--out", "fit"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("fit/fit.json"));
    let fit = &report["fits"][0];
    assert_eq!(fit["scenario"], "fused-distance");
    let b0 = fit["beta"][0].as_f64().unwrap();
    assert!((b0 - 9.0).abs() < 0.3, "beta0 {b0}");
}

#[test]
fn overlapping_designs_are_refused_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("design.csv"),
        "id,kind,radius,geometry\np1,point,0.04,0.30 0.50\nk1,trap,0.02,0.33 0.50\n",
    )
    .unwrap();
    fs::write(dir.path().join("sim.toml"), "design = \"design.csv\"\n").unwrap();
    let out = fusesdm(&["simulate", "--config", "sim.toml", "--out", "out"], dir.path());
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("non-overlap") && stderr.contains("p1/k1"), "{stderr}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_problems_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.toml"), "[study]\nreplicatez = 3\n").unwrap();
    assert_eq!(code(&fusesdm(&["experiment", "--config", "typo.toml"], dir.path())), 2);
    fs::write(dir.path().join("missing.toml"), "design = \"nowhere.csv\"\nobservations = \"o.csv\"\ncovariates = []\n")
        .unwrap();
    let out = fusesdm(&["fit", "--config", "missing.toml"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
    assert_eq!(code(&fusesdm(&["experiment", "--scenario", "7"], dir.path())), 2);
}

#[test]
fn data_problems_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let config = format!(
        "design = {:?}\nobservations = {:?}\ncovariates = [{:?}]\nscenarios = [\"complete\"]\nregion = [0.0, 0.0, 6.0, 6.0]\n",
        fx.join("design.csv"),
        fx.join("observations.csv"),
        fx.join("x1.asc")
    );
    fs::write(dir.path().join("complete.toml"), config).unwrap();
    let out = fusesdm(&["fit", "--config", "complete.toml", "--out", "out"], dir.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(dir.path().join("bad.csv"), "source,unit_id,distance\nds,t01,far\n").unwrap();
    let config = format!(
        "design = {:?}\nobservations = \"bad.csv\"\ncovariates = [{:?}]\n",
        fx.join("design.csv"),
        fx.join("x1.asc")
    );
    fs::write(dir.path().join("bad.toml"), config).unwrap();
    let out = fusesdm(&["fit", "--config", "bad.toml", "--out", "out"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2"));
}

#[test]
fn fixture_pipeline_reports_all_partial_models() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture().join("fit.toml");
    let out = fusesdm(&["fit", "--config", config.to_str().unwrap(), "--out", "fit"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    for model in ["aggregated-farr", "aggregated-cos", "fused-region", "fused-distance"] {
        assert!(table.contains(model), "{table}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("fit/estimates.txt")).unwrap(), table);

    let report = read_json(&dir.path().join("fit/fit.json"));
    let fits = report["fits"].as_array().unwrap();
    assert_eq!(fits.len(), 4);
    let widths: Vec<f64> = fits.iter().map(|f| width(f, "beta0")).collect();
    assert!(widths.iter().all(|w| w.is_finite() && *w > 0.0));
    assert!(widths[2].max(widths[3]) < widths[0].min(widths[1]), "{widths:?}");

    // The manifest reproduces the fit.
    let again = fusesdm(&["fit", "--config", "fit/manifest.toml", "--out", "refit"], dir.path());
    assert_eq!(code(&again), 0);
    assert_eq!(
        fs::read(dir.path().join("fit/fit.json")).unwrap(),
        fs::read(dir.path().join("refit/fit.json")).unwrap()
    );
}

#[test]
fn predicted_map_integrates_to_the_fitted_abundance() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture().join("fit.toml");
    let fit = fusesdm(
        &["fit", "--config", config.to_str().unwrap(), "--scenario", "fused-distance", "--out", "fit"],
        dir.path(),
    );
    assert_eq!(code(&fit), 0);
    let raster = fixture().join("x1.asc");
    let out = fusesdm(
        &["predict-map", "--fit", "fit/fit.json", "--covariate", raster.to_str().unwrap(), "--out", "map"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lambda_bar = read_json(&dir.path().join("fit/fit.json"))["fits"][0]["lambda_bar"]["estimate"].as_f64().unwrap();

    // Sum value × cell area over the written raster; the fixture region is
    // the whole raster.
    let text = fs::read_to_string(dir.path().join("map/intensity.asc")).unwrap();
    let mut lines = text.lines();
    let mut cellsize = 0.0;
    for _ in 0..6 {
        let line = lines.next().unwrap();
        if let Some(v) = line.strip_prefix("cellsize ") {
            cellsize = v.parse().unwrap();
        }
    }
    let total: f64 =
        lines.flat_map(|l| l.split_whitespace()).map(|v| v.parse::<f64>().unwrap()).sum::<f64>() * cellsize * cellsize;
    assert!((total / lambda_bar - 1.0).abs() < 1e-8, "{total} vs {lambda_bar}");
}

#[test]
fn experiment_tables_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("study.toml"),
        "workers = 2\n[study]\nreplicates = 2\nscenarios = [\"complete\", \"fused-distance\"]\n",
    )
    .unwrap();
    for run in ["a", "b"] {
        let out = fusesdm(&["experiment", "--config", "study.toml", "--out", run], dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir.path().join("a/estimates.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/estimates.csv")).unwrap());
    assert!(!dir.path().join("a/estimates.partial.csv").exists());
    let manifest = fs::read_to_string(dir.path().join("a/manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"complete\""), "{manifest}");

    let out = fusesdm(&["experiment", "--config", "a/manifest.toml", "--workers", "1", "--out", "c"], dir.path());
    assert_eq!(code(&out), 0);
    assert_eq!(a, fs::read(dir.path().join("c/estimates.csv")).unwrap());
}

#[test]
fn interrupted_experiments_keep_finished_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = fusesdm(
        &["experiment", "--replicates", "3", "--scenario", "complete", "--stop-after", "1", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    let partial = fs::read_to_string(dir.path().join("run/estimates.partial.csv")).unwrap();
    let rows: Vec<&str> = partial.lines().skip(1).collect();
    assert!(!rows.is_empty() && rows.iter().all(|r| r.starts_with("0,complete,")), "{partial}");
    let manifest = fs::read_to_string(dir.path().join("run/manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"interrupted\"") && manifest.contains("completed = 1"), "{manifest}");
    assert!(!dir.path().join("run/estimates.csv").exists());
}
