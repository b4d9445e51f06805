//! Station-day datasets: loading, quality control, rolling training windows
//! and synthetic ground-truth generation.

mod csv_io;
mod synthetic;

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bma::{TrainingSet, Variable, WindowMeta};
use crate::error::{Error, Result};

pub use csv_io::{load_dataset, parse_dataset, save_dataset, write_dataset};
pub use synthetic::{default_correlation, generate_synthetic, MarginalGenerator, SyntheticSpec};

/// Forecasts and verifying observation for every variable at one station on
/// one day. Only complete records survive loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationDayRecord {
    pub station: String,
    pub date: NaiveDate,
    /// `p × K` member forecasts, variables in dataset order.
    pub ensemble: Vec<Vec<f64>>,
    pub observation: Vec<f64>,
}

/// Complete-case records sorted by station then date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    variables: Vec<Variable>,
    members: usize,
    records: Vec<StationDayRecord>,
    /// Station-days removed by quality control.
    dropped: usize,
}

impl Dataset {
    pub fn new(
        variables: Vec<Variable>,
        members: usize,
        mut records: Vec<StationDayRecord>,
        dropped: usize,
    ) -> Result<Self> {
        let mut sorted = variables.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != variables {
            return Err(Error::Schema(
                "variables must be distinct and in canonical order".into(),
            ));
        }
        for r in &records {
            if r.ensemble.len() != variables.len() || r.observation.len() != variables.len() {
                return Err(Error::Dimension {
                    expected: variables.len(),
                    found: r.observation.len().min(r.ensemble.len()),
                });
            }
            if let Some(bad) = r.ensemble.iter().find(|e| e.len() != members) {
                return Err(Error::Dimension {
                    expected: members,
                    found: bad.len(),
                });
            }
            for (j, v) in variables.iter().enumerate() {
                let values = r.ensemble[j].iter().chain(std::iter::once(&r.observation[j]));
                for &x in values {
                    if !x.is_finite() || (v.nonnegative() && x < 0.0) {
                        return Err(Error::Schema(format!(
                            "{} {} {v}: invalid value {x}",
                            r.station, r.date
                        )));
                    }
                }
            }
        }
        records.sort_by(|a, b| (&a.station, a.date).cmp(&(&b.station, b.date)));
        if let Some(w) = records
            .windows(2)
            .find(|w| w[0].station == w[1].station && w[0].date == w[1].date)
        {
            return Err(Error::Schema(format!(
                "duplicate station-day {} {}",
                w[0].station, w[0].date
            )));
        }
        Ok(Self {
            variables,
            members,
            records,
            dropped,
        })
    }

    pub fn empty() -> Self {
        Self {
            variables: Vec::new(),
            members: 0,
            records: Vec::new(),
            dropped: 0,
        }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn records(&self) -> &[StationDayRecord] {
        &self.records
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn variable_index(&self, v: Variable) -> Option<usize> {
        self.variables.iter().position(|x| *x == v)
    }

    pub fn stations(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.station.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// All records of one station in date order.
    pub fn station_records(&self, station: &str) -> &[StationDayRecord] {
        let lo = self.records.partition_point(|r| r.station.as_str() < station);
        let hi = self.records.partition_point(|r| r.station.as_str() <= station);
        &self.records[lo..hi]
    }

    pub fn record(&self, station: &str, date: NaiveDate) -> Option<&StationDayRecord> {
        let s = self.station_records(station);
        s.binary_search_by(|r| r.date.cmp(&date)).ok().map(|i| &s[i])
    }

    /// Records of both datasets; they must share variables and member count
    /// and not overlap.
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.variables != other.variables || self.members != other.members {
            return Err(Error::Schema("datasets differ in variables or ensemble size".into()));
        }
        let records = self.records.iter().chain(&other.records).cloned().collect();
        Dataset::new(
            self.variables.clone(),
            self.members,
            records,
            self.dropped + other.dropped,
        )
    }

    /// Split into records dated before `date` and the rest.
    pub fn split_at(&self, date: NaiveDate) -> (Dataset, Dataset) {
        let (before, after): (Vec<_>, Vec<_>) = self.records.iter().cloned().partition(|r| r.date < date);
        let make = |records| Dataset {
            variables: self.variables.clone(),
            members: self.members,
            records,
            dropped: 0,
        };
        (make(before), make(after))
    }

    pub fn filter_stations(&self, keep: &[String]) -> Dataset {
        Dataset {
            variables: self.variables.clone(),
            members: self.members,
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(&r.station))
                .cloned()
                .collect(),
            dropped: self.dropped,
        }
    }

    /// The listed variables only, in canonical order.
    pub fn select_variables(&self, keep: &[Variable]) -> Result<Dataset> {
        let mut keep = keep.to_vec();
        keep.sort();
        keep.dedup();
        let idx = keep
            .iter()
            .map(|v| {
                self.variable_index(*v)
                    .ok_or_else(|| Error::Schema(format!("variable {v} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        let records = self
            .records
            .iter()
            .map(|r| StationDayRecord {
                station: r.station.clone(),
                date: r.date,
                ensemble: idx.iter().map(|&j| r.ensemble[j].clone()).collect(),
                observation: idx.iter().map(|&j| r.observation[j]).collect(),
            })
            .collect();
        Ok(Dataset {
            variables: keep,
            members: self.members,
            records,
            dropped: self.dropped,
        })
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            stations: self.stations(),
            variables: self.variables.clone(),
            members: self.members,
            start: self.records.iter().map(|r| r.date).min(),
            end: self.records.iter().map(|r| r.date).max(),
            records: self.records.len(),
            dropped: self.dropped,
        }
    }
}

/// Summary written next to dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub stations: Vec<String>,
    pub variables: Vec<Variable>,
    pub members: usize,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub records: usize,
    pub dropped: usize,
}

/// The `width` most recent complete days strictly before `target` at
/// `station`, as training pairs for `variable`.
pub fn rolling_window(
    dataset: &Dataset,
    station: &str,
    variable: Variable,
    target: NaiveDate,
    width: usize,
) -> Result<TrainingSet> {
    let j = dataset
        .variable_index(variable)
        .ok_or_else(|| Error::Schema(format!("variable {variable} not in dataset")))?;
    let history = dataset.station_records(station);
    if history.binary_search_by(|r| r.date.cmp(&target)).is_err() {
        return Err(Error::domain(
            "rolling_window",
            format!("no record for station {station} on {target}"),
        ));
    }
    window_from_history(history, j, target, width)
}

/// As [`rolling_window`] on one station's date-ordered records and a variable
/// column index.
pub fn window_from_history(
    history: &[StationDayRecord],
    column: usize,
    target: NaiveDate,
    width: usize,
) -> Result<TrainingSet> {
    let end = history.partition_point(|r| r.date < target);
    if end < width || width == 0 {
        return Err(Error::Window {
            available: end,
            required: width,
        });
    }
    let days = &history[end - width..end];
    let ensembles = days.iter().map(|r| r.ensemble[column].clone()).collect();
    let observations = days.iter().map(|r| r.observation[column]).collect();
    Ok(TrainingSet::new(ensembles, observations)?.with_window(WindowMeta {
        start: days[0].date,
        end: days[width - 1].date,
        days: width,
    }))
}
