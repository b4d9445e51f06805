use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forecast::{cases_path, sample_path, ForecastCase};
use super::samples::read_samples;
use super::{
    manifest_path, read_json, record_timing, unit_stream, with_pool, write_file, write_json, write_manifest, Method,
    RunConfig, StationStatus, STREAM_RANK,
};
use crate::copula::JointSample;
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::verification::{
    determinant_sharpness, energy_score_exact, energy_score_mc, euclidean_error, multivariate_rank, CaseScores,
    NormalizationSpec, RankHistogram, ScoreSummary, Sharpness,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub summary: ScoreSummary,
    pub histogram: RankHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationReport {
    pub station: String,
    pub method: Method,
    pub summary: ScoreSummary,
}

/// Scores of one method on one forecast case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub station: String,
    pub date: chrono::NaiveDate,
    pub method: Method,
    pub scores: CaseScores,
}

/// Pooled and per-station scores of every method on normalized data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub normalization: NormalizationSpec,
    /// Station-level normalization statistics, for comparison with the pooled
    /// ones actually applied.
    pub station_normalization: BTreeMap<String, NormalizationSpec>,
    pub methods: Vec<MethodReport>,
    pub stations: Vec<StationReport>,
    /// Every case, also written to `scores_cases.csv`.
    #[serde(skip)]
    pub cases: Vec<CaseRow>,
}

impl VerificationReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Scores of one forecast sample. The raw ensemble is scored exactly; a
/// joint sample uses the two-half Monte Carlo energy score, its first `m`
/// rows for the rank and all rows for sharpness and the median.
pub fn score_forecast(
    forecast: &JointSample,
    obs: &[f64],
    sampled: bool,
    m: usize,
    rng: &mut RngStream,
) -> Result<CaseScores> {
    let (es, rank) = if sampled {
        let half = forecast.n() / 2;
        let a = forecast.head(half);
        let b = JointSample::new(
            forecast.p(),
            forecast.as_slice()[half * forecast.p()..2 * half * forecast.p()].to_vec(),
        )?;
        (
            energy_score_mc(&a, &b, obs)?,
            multivariate_rank(obs, &forecast.head(m), rng)?,
        )
    } else {
        (
            energy_score_exact(forecast, obs)?,
            multivariate_rank(obs, forecast, rng)?,
        )
    };
    let ds = if forecast.n() > forecast.p() {
        determinant_sharpness(forecast)?
    } else {
        Sharpness {
            value: 0.0,
            degenerate: true,
        }
    };
    Ok(CaseScores {
        es,
        ee: euclidean_error(forecast, obs)?,
        ds: ds.value,
        ds_degenerate: ds.degenerate,
        rank,
    })
}

fn number(x: f64) -> String {
    x.to_string()
}

/// Score all forecast cases for every configured method.
pub fn verify_stage(cfg: &RunConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let forecast_manifest = manifest_path(cfg, "forecast");
    if !forecast_manifest.exists() {
        return Err(Error::Dependency {
            path: forecast_manifest,
            detail: "run the forecast stage first".into(),
        });
    }
    let cases: Vec<ForecastCase> = read_json(&cases_path(cfg))?;
    let test = cfg.load_input(&cfg.test)?;
    let methods = cfg.methods();
    let m = test.members();
    let names: Vec<String> = test.variables().iter().map(|v| v.to_string()).collect();
    let normalization =
        NormalizationSpec::from_observations(names.clone(), test.records().iter().map(|r| r.observation.as_slice()))?;
    let mut station_normalization = BTreeMap::new();
    for s in test.stations() {
        let recs = test.station_records(&s);
        if let Ok(spec) =
            NormalizationSpec::from_observations(names.clone(), recs.iter().map(|r| r.observation.as_slice()))
        {
            station_normalization.insert(s, spec);
        }
    }

    let scored: Vec<Result<Vec<CaseScores>>> = with_pool(cfg, || {
        cases
            .par_iter()
            .map(|case| {
                let record = test.record(&case.station, case.date).ok_or_else(|| Error::Dependency {
                    path: cfg.resolve(&cfg.test),
                    detail: format!("no test record for {} {}", case.station, case.date),
                })?;
                let mut obs = record.observation.clone();
                normalization.apply(&mut obs);
                methods
                    .iter()
                    .enumerate()
                    .map(|(mi, &method)| {
                        let mut forecast = if method == Method::Raw {
                            let rows: Vec<Vec<f64>> =
                                (0..m).map(|k| record.ensemble.iter().map(|e| e[k]).collect()).collect();
                            JointSample::from_rows(&rows)?
                        } else {
                            read_samples(&sample_path(cfg, &case.station, case.date, method))?
                        };
                        normalization.apply_sample(&mut forecast)?;
                        let mut rng = RngStream::new(
                            cfg.seed,
                            unit_stream(&case.station, case.date, STREAM_RANK + 16 * mi as u64),
                        );
                        score_forecast(&forecast, &obs, method != Method::Raw, m, &mut rng)
                    })
                    .collect()
            })
            .collect()
    })?;
    let scored = scored.into_iter().collect::<Result<Vec<_>>>()?;
    if scored.is_empty() {
        return Err(Error::EmptyReport);
    }

    let summarize =
        |method_idx: usize, filter: &dyn Fn(&ForecastCase) -> bool| -> Result<(ScoreSummary, RankHistogram)> {
            let mut hist = RankHistogram::new(m);
            let mut rows = Vec::new();
            for (case, s) in cases.iter().zip(&scored) {
                if filter(case) {
                    hist.add(s[method_idx].rank)?;
                    rows.push(s[method_idx]);
                }
            }
            Ok((ScoreSummary::from_cases(&rows, &hist)?, hist))
        };
    let mut method_reports = Vec::new();
    let mut station_reports = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        let (summary, histogram) = summarize(mi, &|_| true)?;
        method_reports.push(MethodReport {
            method,
            summary,
            histogram,
        });
    }
    let stations: Vec<String> = {
        let mut s: Vec<String> = cases.iter().map(|c| c.station.clone()).collect();
        s.dedup();
        s
    };
    for station in &stations {
        for (mi, &method) in methods.iter().enumerate() {
            let (summary, _) = summarize(mi, &|c| &c.station == station)?;
            station_reports.push(StationReport {
                station: station.clone(),
                method,
                summary,
            });
        }
    }
    let case_rows = cases
        .iter()
        .zip(&scored)
        .flat_map(|(case, s)| {
            methods.iter().zip(s).map(|(&method, &scores)| CaseRow {
                station: case.station.clone(),
                date: case.date,
                method,
                scores,
            })
        })
        .collect();
    let report = VerificationReport {
        normalization,
        station_normalization,
        methods: method_reports,
        stations: station_reports,
        cases: case_rows,
    };

    let out = cfg.output_path();
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut csv = String::from("method,ES,EE,Delta,DS,cases\n");
    for r in &report.methods {
        let s = &r.summary;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.method,
            number(s.es),
            number(s.ee),
            number(s.delta),
            number(s.ds),
            s.cases
        );
    }
    outputs.push(out.join("scores.csv"));
    write_file(&out.join("scores.csv"), csv.as_bytes())?;
    let mut by_station = String::from("station,method,ES,EE,Delta,DS,cases\n");
    for r in &report.stations {
        let s = &r.summary;
        let _ = writeln!(
            by_station,
            "{},{},{},{},{},{},{}",
            r.station,
            r.method,
            number(s.es),
            number(s.ee),
            number(s.delta),
            number(s.ds),
            s.cases
        );
    }
    outputs.push(out.join("scores_by_station.csv"));
    write_file(&out.join("scores_by_station.csv"), by_station.as_bytes())?;
    for r in &report.methods {
        let mut h = String::from("rank,count\n");
        for (i, c) in r.histogram.counts().iter().enumerate() {
            let _ = writeln!(h, "{},{c}", i + 1);
        }
        let path = out.join(format!("mrh_{}.csv", r.method));
        write_file(&path, h.as_bytes())?;
        outputs.push(path);
    }
    let mut per_case = String::from("station,date,method,ES,EE,DS,rank\n");
    for r in &report.cases {
        let s = &r.scores;
        let _ = writeln!(
            per_case,
            "{},{},{},{},{},{},{}",
            r.station,
            r.date,
            r.method,
            number(s.es),
            number(s.ee),
            number(s.ds),
            s.rank
        );
    }
    outputs.push(out.join("scores_cases.csv"));
    write_file(&out.join("scores_cases.csv"), per_case.as_bytes())?;
    write_json(&out.join("scores.json"), &report)?;
    outputs.push(out.join("scores.json"));

    let mut status: BTreeMap<String, StationStatus> = BTreeMap::new();
    for c in &cases {
        status.entry(c.station.clone()).or_default().cases += 1;
    }
    write_manifest(cfg, "verify", status, outputs)?;
    record_timing(cfg, "verify", started)?;
    Ok(report)
}
