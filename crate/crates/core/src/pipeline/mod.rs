//! End-to-end experiment: estimate per-station correlation matrices on a
//! calibration period, sample copula and independence forecasts over a test
//! period, and score them together with the raw ensemble.
//!
//! Every stage reads its inputs from and writes its outputs to the configured
//! output directory, so stages can be rerun independently. Work is split into
//! (station, day) units, each with its own random stream, which keeps results
//! identical for any number of worker threads.

mod estimate;
mod forecast;
mod samples;
mod verify;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bma::{FittedMarginal, MarginalModel, PredictiveMarginal, Variable};
use crate::data::{load_dataset, window_from_history, Dataset, StationDayRecord};
use crate::error::{Error, Result};
use crate::numerics::{label_hash, stream_id};

pub use estimate::{correlation_path, estimate_stage, CorrelationFile, EstimateSummary};
pub use forecast::{forecast_stage, sample_path, ForecastCase, ForecastSummary};
pub use samples::{decode_samples, encode_samples, read_samples, write_samples};
pub use verify::{score_forecast, verify_stage, CaseRow, MethodReport, StationReport, VerificationReport};

const STREAM_SAMPLE: u64 = 1;
const STREAM_RANK: u64 = 2;

/// Forecast methods compared by the verification stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Raw,
    Independence,
    Copula,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Raw, Method::Independence, Method::Copula];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Independence => "independence",
            Method::Copula => "copula",
        }
    }

    fn sampled(self) -> bool {
        self != Method::Raw
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

fn default_window() -> usize {
    40
}
fn default_samples() -> usize {
    20_000
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Run configuration, read from JSON. Relative paths are taken relative to
/// the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub calibration: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Joint samples drawn per forecast.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<Vec<String>>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<Variable>>,
    /// Worker threads; not part of the echoed configuration since results do
    /// not depend on it.
    #[serde(default, skip_serializing)]
    pub jobs: Option<usize>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn new(calibration: impl Into<PathBuf>, test: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            calibration: calibration.into(),
            test: test.into(),
            window: default_window(),
            samples: default_samples(),
            seed: 0,
            stations: None,
            output_dir: output_dir.into(),
            methods: default_methods(),
            variables: None,
            jobs: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 100 {
            return Err(Error::Config(format!(
                "samples must be at least 100, found {}",
                self.samples
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }

    fn sampled_methods(&self) -> Vec<Method> {
        self.methods().into_iter().filter(|m| m.sampled()).collect()
    }

    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn load_input(&self, path: &Path) -> Result<Dataset> {
        let full = self.resolve(path);
        if !full.exists() {
            return Err(Error::Dependency {
                path: full,
                detail: "dataset not found".into(),
            });
        }
        let mut ds = load_dataset(&full)?;
        if let Some(vars) = &self.variables {
            ds = ds.select_variables(vars)?;
        }
        if let Some(stations) = &self.stations {
            ds = ds.filter_stations(stations);
        }
        Ok(ds)
    }

    fn check_window(&self, ds: &Dataset) -> Result<()> {
        if !ds.is_empty() && self.window < ds.members() + 2 {
            return Err(Error::Config(format!(
                "window {} too short for {} members, need at least {}",
                self.window,
                ds.members(),
                ds.members() + 2
            )));
        }
        Ok(())
    }
}

/// Per-station bookkeeping recorded in stage manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StationStatus {
    pub cases: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

/// Written by every stage as `<stage>_manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub version: String,
    pub config: RunConfig,
    pub stations: BTreeMap<String, StationStatus>,
    pub outputs: Vec<OutputEntry>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Dependency {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn manifest_path(cfg: &RunConfig, stage: &str) -> PathBuf {
    cfg.output_path().join(format!("{stage}_manifest.json"))
}

fn write_manifest(
    cfg: &RunConfig,
    stage: &str,
    stations: BTreeMap<String, StationStatus>,
    mut outputs: Vec<PathBuf>,
) -> Result<StageManifest> {
    let root = cfg.output_path();
    outputs.sort();
    let outputs = outputs
        .iter()
        .map(|p| {
            Ok(OutputEntry {
                path: p.strip_prefix(&root).unwrap_or(p).to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = StageManifest {
        stage: stage.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        stations,
        outputs,
    };
    write_json(&manifest_path(cfg, stage), &manifest)?;
    Ok(manifest)
}

/// Wall-clock seconds per stage, kept apart from the manifests so those stay
/// reproducible.
fn record_timing(cfg: &RunConfig, stage: &str, started: Instant) -> Result<()> {
    let path = cfg.output_path().join("timings.json");
    let mut timings: BTreeMap<String, f64> = fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    timings.insert(stage.to_string(), started.elapsed().as_secs_f64());
    write_json(&path, &timings)
}

fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Random stream for one (station, day) work unit and purpose.
pub fn unit_stream(station: &str, date: NaiveDate, purpose: u64) -> u64 {
    stream_id(&[label_hash(station), date.num_days_from_ce() as u64, purpose])
}

/// Fit every variable's BMA model on the rolling window before `target` and
/// form the predictive marginals for that day's ensemble.
pub fn fit_day_marginals(
    history: &[StationDayRecord],
    variables: &[Variable],
    record: &StationDayRecord,
    window: usize,
) -> Result<(Vec<FittedMarginal>, Vec<PredictiveMarginal>)> {
    let mut fitted = Vec::with_capacity(variables.len());
    let mut marginals = Vec::with_capacity(variables.len());
    for (j, &v) in variables.iter().enumerate() {
        let training = window_from_history(history, j, record.date, window)?;
        let model = MarginalModel::fit(v.kind(), &training).map_err(|e| Error::Fit(format!("{v}: {e}")))?;
        marginals.push(model.predictive(&record.ensemble[j])?);
        fitted.push(FittedMarginal {
            variable: v,
            model,
            window: training.window,
        });
    }
    Ok((fitted, marginals))
}

/// `estimate`, `forecast` and `verify` in sequence.
pub fn run_all(cfg: &RunConfig) -> Result<VerificationReport> {
    estimate_stage(cfg)?;
    forecast_stage(cfg)?;
    verify_stage(cfg)
}
