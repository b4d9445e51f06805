use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimate::{correlation_path, CorrelationFile};
use super::samples::write_samples;
use super::{
    fit_day_marginals, read_json, record_timing, unit_stream, with_pool, write_json, write_manifest, Method, RunConfig,
    StationStatus, STREAM_SAMPLE,
};
use crate::bma::FittedMarginal;
use crate::copula::{CorrelationMatrix, JointSampler};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// A station-day with forecasts for every configured method.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForecastCase {
    pub station: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DayModels {
    date: NaiveDate,
    marginals: Vec<FittedMarginal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StationModels {
    station: String,
    days: Vec<DayModels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    pub cases: Vec<ForecastCase>,
    pub status: BTreeMap<String, StationStatus>,
}

pub fn sample_path(cfg: &RunConfig, station: &str, date: NaiveDate, method: Method) -> PathBuf {
    cfg.output_path()
        .join("samples")
        .join(station)
        .join(format!("{date}.{method}.jsz"))
}

pub(crate) fn cases_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_path().join("forecast_cases.json")
}

fn models_path(cfg: &RunConfig, station: &str) -> PathBuf {
    cfg.output_path().join("models").join(format!("{station}.json"))
}

/// Outcome of one (station, day) unit: fitted models and written files, or
/// the reason the day was skipped.
type UnitOutcome = std::result::Result<(Vec<FittedMarginal>, Vec<PathBuf>), String>;

/// For every test day, fit marginals on the rolling window (drawing on the
/// calibration period where needed) and write joint samples for the sampled
/// methods. Copula and independence draws use the same random stream.
pub fn forecast_stage(cfg: &RunConfig) -> Result<ForecastSummary> {
    let started = Instant::now();
    let calibration = cfg.load_input(&cfg.calibration)?;
    let test = cfg.load_input(&cfg.test)?;
    let history = calibration.union(&test)?;
    cfg.check_window(&history)?;
    let variables = history.variables().to_vec();
    let methods = cfg.sampled_methods();

    let mut status: BTreeMap<String, StationStatus> = BTreeMap::new();
    let mut matrices: BTreeMap<String, CorrelationMatrix> = BTreeMap::new();
    for station in test.stations() {
        let mut st = StationStatus::default();
        if methods.contains(&Method::Copula) {
            let loaded = read_json::<CorrelationFile>(&correlation_path(cfg, &station)).and_then(|f| {
                if f.variables != variables {
                    return Err(Error::Schema(format!(
                        "correlation file variables {:?} do not match the data",
                        f.variables
                    )));
                }
                f.matrix()
            });
            match loaded {
                Ok(c) => {
                    matrices.insert(station.clone(), c);
                }
                Err(e) => {
                    st.skipped = test.station_records(&station).len();
                    st.warnings.push(format!("no usable correlation matrix: {e}"));
                    status.insert(station, st);
                    continue;
                }
            }
        }
        status.insert(station, st);
    }

    let units: Vec<(&str, NaiveDate)> = test
        .records()
        .iter()
        .filter(|r| status[&r.station].warnings.is_empty())
        .map(|r| (r.station.as_str(), r.date))
        .collect();
    let identity = CorrelationMatrix::identity(variables.len());
    let outcomes: Vec<Result<UnitOutcome>> = with_pool(cfg, || {
        units
            .par_iter()
            .map(|&(station, date)| -> Result<UnitOutcome> {
                let hist = history.station_records(station);
                let record = history.record(station, date).expect("test record is in history");
                let (fitted, marginals) = match fit_day_marginals(hist, &variables, record, cfg.window) {
                    Ok(x) => x,
                    Err(e) => return Ok(Err(e.to_string())),
                };
                let sampler = JointSampler::new(&marginals, cfg.samples);
                let mut paths = Vec::new();
                for &m in &methods {
                    let c = if m == Method::Copula {
                        &matrices[station]
                    } else {
                        &identity
                    };
                    let mut rng = RngStream::new(cfg.seed, unit_stream(station, date, STREAM_SAMPLE));
                    let sample = match sampler.sample(c, cfg.samples, &mut rng) {
                        Ok(s) => s,
                        Err(e) => return Ok(Err(e.to_string())),
                    };
                    let path = sample_path(cfg, station, date, m);
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    write_samples(&sample, &path)?;
                    paths.push(path);
                }
                Ok(Ok((fitted, paths)))
            })
            .collect()
    })?;

    let mut cases = Vec::new();
    let mut outputs = Vec::new();
    let mut models: BTreeMap<&str, Vec<DayModels>> = BTreeMap::new();
    for (&(station, date), outcome) in units.iter().zip(outcomes) {
        let st = status.get_mut(station).unwrap();
        match outcome? {
            Ok((marginals, paths)) => {
                st.cases += 1;
                outputs.extend(paths);
                models.entry(station).or_default().push(DayModels { date, marginals });
                cases.push(ForecastCase {
                    station: station.to_string(),
                    date,
                });
            }
            Err(reason) => {
                st.skipped += 1;
                st.warnings.push(format!("{date}: {reason}"));
            }
        }
    }
    for (station, days) in models {
        let path = models_path(cfg, station);
        write_json(
            &path,
            &StationModels {
                station: station.to_string(),
                days,
            },
        )?;
        outputs.push(path);
    }
    write_json(&cases_path(cfg), &cases)?;
    outputs.push(cases_path(cfg));
    write_manifest(cfg, "forecast", status.clone(), outputs)?;
    record_timing(cfg, "forecast", started)?;
    Ok(ForecastSummary { cases, status })
}
