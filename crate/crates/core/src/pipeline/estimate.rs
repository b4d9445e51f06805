use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_day_marginals, record_timing, with_pool, write_json, write_manifest, RunConfig, StationStatus};
use crate::bma::{Variable, WindowMeta};
use crate::copula::{estimate_correlation, latent_from_observation, CorrelationMatrix, LatentRecord};
use crate::error::{Error, Result};

/// Persisted correlation matrix of one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFile {
    pub station: String,
    pub variables: Vec<Variable>,
    pub p: usize,
    /// Row-major entries.
    pub entries: Vec<f64>,
    /// First and last day contributing a latent vector.
    pub training_period: WindowMeta,
    /// Latent entries whose CDF value was clamped.
    pub clamped: usize,
}

impl CorrelationFile {
    pub fn matrix(&self) -> Result<CorrelationMatrix> {
        if self.entries.len() != self.p * self.p {
            return Err(Error::Dimension {
                expected: self.p * self.p,
                found: self.entries.len(),
            });
        }
        let rows: Vec<Vec<f64>> = self.entries.chunks(self.p).map(<[f64]>::to_vec).collect();
        CorrelationMatrix::from_rows(&rows)
    }
}

pub fn correlation_path(cfg: &RunConfig, station: &str) -> PathBuf {
    cfg.output_path().join(format!("corr_{station}.json"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub matrices: BTreeMap<String, CorrelationMatrix>,
    pub status: BTreeMap<String, StationStatus>,
}

/// Fit marginals on each calibration day's rolling window, map that day's
/// observation to latent Gaussian space, and estimate one correlation matrix
/// per station.
pub fn estimate_stage(cfg: &RunConfig) -> Result<EstimateSummary> {
    let started = Instant::now();
    let calibration = cfg.load_input(&cfg.calibration)?;
    cfg.check_window(&calibration)?;
    let variables = calibration.variables().to_vec();
    let stations = calibration.stations();

    let units: Vec<(usize, usize)> = stations
        .iter()
        .enumerate()
        .flat_map(|(s, name)| (cfg.window..calibration.station_records(name).len()).map(move |i| (s, i)))
        .collect();
    let latents: Vec<Result<LatentRecord>> = with_pool(cfg, || {
        units
            .par_iter()
            .map(|&(s, i)| {
                let history = calibration.station_records(&stations[s]);
                let record = &history[i];
                let (_, marginals) = fit_day_marginals(history, &variables, record, cfg.window)?;
                Ok(latent_from_observation(&marginals, &record.observation)?
                    .with_origin(record.station.clone(), record.date))
            })
            .collect()
    })?;

    let mut per_station: BTreeMap<&str, (Vec<LatentRecord>, StationStatus)> = BTreeMap::new();
    for name in &stations {
        per_station.insert(name, (Vec::new(), StationStatus::default()));
    }
    for (&(s, _), result) in units.iter().zip(latents) {
        let entry = per_station.get_mut(stations[s].as_str()).unwrap();
        match result {
            Ok(rec) => entry.0.push(rec),
            Err(_) => entry.1.skipped += 1,
        }
    }

    let mut matrices = BTreeMap::new();
    let mut status = BTreeMap::new();
    let mut outputs = Vec::new();
    for (name, (records, mut st)) in per_station {
        st.cases = records.len();
        let available = calibration.station_records(name).len();
        if available <= cfg.window {
            st.warnings.push(format!(
                "only {available} calibration days for a {}-day training window",
                cfg.window
            ));
        } else if st.skipped > 0 {
            st.warnings
                .push(format!("{} calibration days could not be fitted", st.skipped));
        }
        match estimate_correlation(&records) {
            Ok(c) => {
                let file = CorrelationFile {
                    station: name.to_string(),
                    variables: variables.clone(),
                    p: variables.len(),
                    entries: c.as_matrix().as_slice().to_vec(),
                    training_period: WindowMeta {
                        start: records.first().and_then(|r| r.date).unwrap(),
                        end: records.last().and_then(|r| r.date).unwrap(),
                        days: records.len(),
                    },
                    clamped: records.iter().map(|r| r.clamped.len()).sum(),
                };
                let path = correlation_path(cfg, name);
                write_json(&path, &file)?;
                outputs.push(path);
                matrices.insert(name.to_string(), c);
            }
            Err(e) => {
                // do not leave a matrix from an earlier run behind
                let _ = std::fs::remove_file(correlation_path(cfg, name));
                st.warnings.push(format!("station skipped: {e}"));
            }
        }
        status.insert(name.to_string(), st);
    }
    write_manifest(cfg, "estimate", status.clone(), outputs)?;
    record_timing(cfg, "estimate", started)?;
    Ok(EstimateSummary { matrices, status })
}
