use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn synthetic(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic").join(name).canonicalize().unwrap()
}

/// A fast configuration over the bundled synthetic inputs: one kernel, one
/// sex, a single short restart.
fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        r#"
[paths]
mortality = "{}"
covariates = "{}"
populations = "{}"
life_expectancy = "{}"
output = "out"

[window]
age_min = 64
age_max = 66
year_min = 2013
year_max = 2018

[fit]
kernels = ["matern52"]
sexes = ["female"]
restarts = 1
max_iterations = 60

[analysis]
mi_kernel = "matern52"
rank_years = [2018, 2020]
mi_summary_ages = [64, 66]
bump_years = [2013, 2016, 2020]
decade_base_year = 2013
"#,
        synthetic("mortality.csv").display(),
        synthetic("covariates.csv").display(),
        synthetic("populations.csv").display(),
        synthetic("life_expectancy.csv").display(),
    );
    let path = dir.path().join("config.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn mortgp(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mortgp")).args(args).arg("--config").arg(config).output().expect("mortgp runs")
}

fn ok(output: &Output) {
    assert!(output.status.success(), "exit {:?}\n{}", output.status.code(), String::from_utf8_lossy(&output.stderr));
}

fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers().unwrap().clone();
    reader.records().map(|r| header.iter().map(String::from).zip(r.unwrap().iter().map(String::from)).collect()).collect()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path))
        } else {
            out.push(path)
        }
    }
    out.sort();
    out
}

#[test]
fn ingest_writes_one_training_set_per_state_and_sex() {
    let (dir, config) = setup();
    ok(&mortgp(&config, &["ingest", "--sex", "both"]));
    let out = dir.path().join("out");
    let training: Vec<_> = fs::read_dir(out.join("training")).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
    assert_eq!(training.len(), 102);
    assert!(out.join("training/national/US_female.csv").exists());
    let report = rows(&out.join("validation_report.csv"));
    assert_eq!(report.len(), 104);
    assert!(report.iter().all(|r| r["cells_expected"] == "18" && r["cells_used"] == "18"));

    let before: Vec<_> = files(&out).iter().map(|p| fs::read(p).unwrap()).collect();
    ok(&mortgp(&config, &["ingest", "--sex", "both"]));
    let after: Vec<_> = files(&out).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn missing_covariate_row_names_the_state() {
    let (dir, config) = setup();
    let text = fs::read_to_string(synthetic("covariates.csv")).unwrap();
    let trimmed: String = text.lines().filter(|l| !l.starts_with("WY,")).map(|l| format!("{l}\n")).collect();
    let covariates = dir.path().join("covariates.csv");
    fs::write(&covariates, trimmed).unwrap();
    let toml = fs::read_to_string(&config).unwrap().replace(&synthetic("covariates.csv").display().to_string(), "covariates.csv");
    fs::write(&config, toml).unwrap();
    let output = mortgp(&config, &["ingest"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("WY"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let (dir, config) = setup();
    let toml = fs::read_to_string(&config).unwrap();
    fs::write(&config, toml.replace("[fit]", "[fit]\nbogus = 1")).unwrap();
    assert_eq!(mortgp(&config, &["ingest"]).status.code(), Some(1));
    fs::write(&config, toml.replace("age_max = 66", "age_max = 60")).unwrap();
    assert_eq!(mortgp(&config, &["ingest"]).status.code(), Some(1));
    assert_eq!(mortgp(&dir.path().join("absent.toml"), &["ingest"]).status.code(), Some(1));
}

#[test]
fn census_regions_are_the_nine_divisions() {
    let (dir, config) = setup();
    ok(&mortgp(&config, &["group", "--mode", "census_region"]));
    let groups = rows(&dir.path().join("out/groups.csv"));
    let members = |target: &str| -> BTreeSet<String> { groups.iter().filter(|r| r["target"] == target).map(|r| r["member"].clone()).collect() };
    assert_eq!(members("CT"), ["CT", "MA", "ME", "NH", "RI", "VT"].map(String::from).into());
    let distinct: BTreeSet<_> = groups.iter().map(|r| r["target"].clone()).map(|t| members(&t)).collect();
    assert_eq!(distinct.len(), 9);
    assert_eq!(distinct.iter().map(BTreeSet::len).sum::<usize>(), 51);
}

#[test]
fn single_state_mode_fits_one_output_per_state() {
    let (dir, config) = setup();
    ok(&mortgp(&config, &["ingest"]));
    ok(&mortgp(&config, &["group", "--mode", "single_state"]));
    let groups = rows(&dir.path().join("out/groups.csv"));
    assert_eq!(groups.len(), 51);
    assert!(groups.iter().all(|r| r["target"] == r["member"]));

    ok(&mortgp(&config, &["fit", "--mode", "single_state", "--seed", "1"]));
    let first = rows(&dir.path().join("out/fit_log.csv"));
    assert_eq!(first.len(), 52);
    assert!(first.iter().all(|r| r["members"] == r["target"] && r["status"] == "ok"));

    // a different seed moves the restarts but not the optimum of a single-output fit
    ok(&mortgp(&config, &["fit", "--mode", "single_state", "--seed", "2"]));
    let second = rows(&dir.path().join("out/fit_log.csv"));
    for (a, b) in first.iter().zip(&second) {
        let (la, lb): (f64, f64) = (a["log_likelihood"].parse().unwrap(), b["log_likelihood"].parse().unwrap());
        assert!((la - lb).abs() < 1e-3 * (1.0 + la.abs()), "{}: {la} vs {lb}", a["target"]);
    }
}

#[test]
fn full_run_emits_surfaces_and_analysis() {
    let (dir, config) = setup();
    ok(&mortgp(&config, &["all"]));
    let out = dir.path().join("out");

    for file in files(&out).iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let text = fs::read_to_string(file).unwrap();
        assert!(text.starts_with("# mortgp "), "{} lacks a provenance line", file.display());
    }

    let surfaces = rows(&out.join("surfaces.csv"));
    assert_eq!(surfaces.len(), 52 * 3 * 8);
    let national: BTreeSet<(String, String)> =
        surfaces.iter().filter(|r| r["state"] == "US").map(|r| (r["age"].clone(), r["year"].clone())).collect();
    assert_eq!(national.len(), 3 * 8);
    for r in &surfaces {
        let year: i32 = r["year"].parse().unwrap();
        assert_eq!(r["out_of_sample"] == "true", year > 2018);
        assert_eq!(r["observed"].is_empty(), year > 2018);
    }

    // smoothing leaves residuals on the scale of the fitted noise
    let fits = rows(&out.join("fit_log.csv"));
    let sigma: BTreeMap<&str, f64> = fits.iter().map(|r| (r["target"].as_str(), r["noise_sd_target"].parse().unwrap())).collect();
    let (mut ratio_sum, mut count) = (0.0, 0);
    for (state, s) in &sigma {
        let res: Vec<f64> =
            surfaces.iter().filter(|r| r["state"] == *state && !r["residual"].is_empty()).map(|r| r["residual"].parse().unwrap()).collect();
        let rms = (res.iter().map(|e| e * e).sum::<f64>() / res.len() as f64).sqrt();
        ratio_sum += rms / s;
        count += 1;
    }
    let mean_ratio = ratio_sum / count as f64;
    assert!((0.3..=1.2).contains(&mean_ratio), "mean residual/sigma ratio {mean_ratio}");

    let correlations = rows(&out.join("correlations.csv"));
    assert_eq!(correlations.len(), 22);
    assert_eq!(correlations.last().unwrap()["variable"], "life_expectancy");
    let rankings = rows(&out.join("rankings.csv"));
    assert_eq!(rankings.len(), 2 * 51);
}

#[test]
fn analysis_without_states_is_an_error() {
    let (dir, config) = setup();
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("surfaces.csv"), "kernel,sex,state,age,year,mean,std,predictive_std,rate,observed,residual,out_of_sample\n").unwrap();
    let output = mortgp(&config, &["analyze"]);
    assert_eq!(output.status.code(), Some(1));
    assert_eq!(files(&out).len(), 1, "no analysis files may be written");
}

#[test]
fn predicting_without_models_is_an_error() {
    let (_dir, config) = setup();
    let output = mortgp(&config, &["predict"]);
    assert_eq!(output.status.code(), Some(1));
}
