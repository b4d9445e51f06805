use std::fs;
use std::path::{Path, PathBuf};

use ensemble_copula::copula::JointSample;
use ensemble_copula::data::load_dataset;
use ensemble_copula::pipeline::{
    estimate_stage, forecast_stage, read_samples, run_all, sample_path, verify_stage, Method, RunConfig,
};
use ensemble_copula::verification::energy_score_exact;
use ensemble_copula::Error;
use tempfile::TempDir;

fn fixture_config(dir: &Path) -> RunConfig {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/fixtures");
    fs::create_dir_all(dir.join("data")).unwrap();
    for f in ["config.json", "data/calibration.csv", "data/test.csv"] {
        fs::copy(fixtures.join(f), dir.join(f)).unwrap();
    }
    RunConfig::load(dir.join("config.json")).unwrap()
}

fn outputs(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "timings.json" {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn verify_needs_forecasts() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture_config(dir.path());
    assert!(matches!(verify_stage(&cfg), Err(Error::Dependency { .. })));
}

#[test]
fn stages_compose_and_share_marginals() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let whole = fixture_config(a.path());
    let staged = fixture_config(b.path());
    run_all(&whole).unwrap();
    estimate_stage(&staged).unwrap();
    let forecast = forecast_stage(&staged).unwrap();
    verify_stage(&staged).unwrap();
    assert_eq!(outputs(&whole.output_path()), outputs(&staged.output_path()));

    // copula and independence share their marginals, so univariate CRPS
    // agrees up to Monte Carlo noise
    let test = load_dataset(b.path().join("data/test.csv")).unwrap();
    for j in 0..test.variables().len() {
        let mut diffs = Vec::new();
        for case in &forecast.cases {
            let obs = test.record(&case.station, case.date).unwrap().observation[j];
            let crps = |m| {
                let s = read_samples(&sample_path(&staged, &case.station, case.date, m)).unwrap();
                let col = JointSample::new(1, s.column(j)).unwrap();
                energy_score_exact(&col, &[obs]).unwrap()
            };
            diffs.push(crps(Method::Copula) - crps(Method::Independence));
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let se = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(
            mean.abs() <= 3.0 * se + 1e-12,
            "{}: {mean} (SE {se})",
            test.variables()[j]
        );
    }
}
