//! Long-format CSV: one row per station, date and variable,
//! `station,date,variable,member_1..member_K,obs`, optionally preceded by a
//! `# units: name=unit ...` line. Empty fields are missing values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Dataset, StationDayRecord};
use crate::bma::Variable;
use crate::error::{Error, Result};

const UNITS_PREFIX: &str = "# units:";

/// Variables declared on the units line, in canonical order.
fn parse_units(line: &str) -> Result<Vec<Variable>> {
    let body = line.strip_prefix(UNITS_PREFIX).ok_or_else(|| Error::Parse {
        line: 1,
        detail: format!("unexpected comment line '{line}'"),
    })?;
    let mut declared = Vec::new();
    for entry in body.split_whitespace() {
        let (name, unit) = entry.split_once('=').ok_or_else(|| Error::Parse {
            line: 1,
            detail: format!("malformed unit entry '{entry}'"),
        })?;
        let v: Variable = name.parse()?;
        if unit != v.unit() {
            return Err(Error::Schema(format!(
                "unit for {v} must be {}, found {unit}",
                v.unit()
            )));
        }
        declared.push(v);
    }
    declared.sort();
    declared.dedup();
    Ok(declared)
}

fn members_from_header(header: &csv::StringRecord) -> Result<usize> {
    let fields: Vec<&str> = header.iter().collect();
    let n = fields.len();
    if n < 5 || fields[..3] != ["station", "date", "variable"] || fields[n - 1] != "obs" {
        return Err(Error::Schema(format!(
            "header must be station,date,variable,member_1..member_K,obs; found {}",
            fields.join(",")
        )));
    }
    for (k, f) in fields[3..n - 1].iter().enumerate() {
        if *f != format!("member_{}", k + 1) {
            return Err(Error::Schema(format!("unexpected column '{f}'")));
        }
    }
    Ok(n - 4)
}

fn parse_value(raw: &str, line: u64, v: Variable) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let x: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        detail: format!("invalid number '{raw}'"),
    })?;
    if !x.is_finite() {
        return Err(Error::Parse {
            line,
            detail: format!("non-finite value '{raw}'"),
        });
    }
    if v.nonnegative() && x < 0.0 {
        return Err(Error::Parse {
            line,
            detail: format!("negative {v} value {x}"),
        });
    }
    Ok(Some(x))
}

type Row = (Vec<Option<f64>>, Option<f64>);

/// Parse CSV text, dropping incomplete station-days.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut body = text;
    let mut line_offset = 0;
    let mut declared = Vec::new();
    if text.starts_with('#') {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        declared = parse_units(first.trim_end())?;
        body = rest;
        line_offset = 1;
    }
    if body.trim().is_empty() {
        return Ok(Dataset::empty());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(body.as_bytes());
    let members = members_from_header(reader.headers()?)?;

    let mut days: BTreeMap<(String, NaiveDate), BTreeMap<Variable, Row>> = BTreeMap::new();
    for result in reader.records() {
        let rec = result.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()) + line_offset,
            detail: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line()) + line_offset;
        let station = rec[0].trim();
        if station.is_empty() {
            return Err(Error::Parse {
                line,
                detail: "empty station id".into(),
            });
        }
        let date = NaiveDate::parse_from_str(rec[1].trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            detail: format!("invalid date '{}': {e}", &rec[1]),
        })?;
        let v: Variable = rec[2].trim().parse()?;
        let forecasts = (0..members)
            .map(|k| parse_value(&rec[3 + k], line, v))
            .collect::<Result<Vec<_>>>()?;
        let obs = parse_value(&rec[3 + members], line, v)?;
        let entry = days.entry((station.to_string(), date)).or_default();
        if entry.insert(v, (forecasts, obs)).is_some() {
            return Err(Error::Parse {
                line,
                detail: format!("duplicate row for {station} {date} {v}"),
            });
        }
    }

    // a file without data rows still declares its variables on the units line
    let variables: Vec<Variable> = if days.is_empty() {
        declared
    } else {
        Variable::ALL
            .into_iter()
            .filter(|v| days.values().any(|d| d.contains_key(v)))
            .collect()
    };
    let mut records = Vec::with_capacity(days.len());
    let mut dropped = 0;
    for ((station, date), rows) in days {
        let complete = variables.iter().all(|v| {
            rows.get(v)
                .is_some_and(|(f, o)| o.is_some() && f.iter().all(Option::is_some))
        });
        if !complete {
            dropped += 1;
            continue;
        }
        let (ensemble, observation) = variables
            .iter()
            .map(|v| {
                let (f, o) = &rows[v];
                (f.iter().map(|x| x.unwrap()).collect::<Vec<_>>(), o.unwrap())
            })
            .unzip();
        records.push(StationDayRecord {
            station,
            date,
            ensemble,
            observation,
        });
    }
    Dataset::new(variables, members, records, dropped)
}

/// Load a dataset from a `.csv` or gzip-compressed `.csv.gz` file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = if path.extension().is_some_and(|e| e == "gz") {
        let mut s = String::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_string(&mut s)
            .map_err(|e| Error::io(path, e))?;
        s
    } else {
        String::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 0,
            detail: format!("not UTF-8: {e}"),
        })?
    };
    parse_dataset(&text)
}

/// CSV text for a dataset. Numbers use the shortest representation that
/// parses back to the same value.
pub fn write_dataset(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    if !dataset.variables().is_empty() {
        let units: Vec<String> = dataset
            .variables()
            .iter()
            .map(|v| format!("{v}={}", v.unit()))
            .collect();
        out.push_str(&format!("{UNITS_PREFIX} {}\n", units.join(" ")));
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["station".to_string(), "date".into(), "variable".into()];
    header.extend((1..=dataset.members()).map(|k| format!("member_{k}")));
    header.push("obs".into());
    w.write_record(&header)?;
    for r in dataset.records() {
        for (j, v) in dataset.variables().iter().enumerate() {
            let mut row = vec![r.station.clone(), r.date.to_string(), v.to_string()];
            row.extend(r.ensemble[j].iter().map(|x| x.to_string()));
            row.push(r.observation[j].to_string());
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is UTF-8"));
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = write_dataset(dataset)?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        text.into_bytes()
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# units: mintemp=degC precip=mm\n\
station,date,variable,member_1,member_2,obs\n\
A,2020-01-01,mintemp,1.5,2,1.75\n\
A,2020-01-01,precip,0,0.3,0\n\
A,2020-01-02,mintemp,1,2,\n\
A,2020-01-02,precip,0,0,0\n";

    #[test]
    fn empty_file_is_empty_dataset() {
        let d = parse_dataset("").unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dropped(), 0);
    }

    #[test]
    fn incomplete_station_day_is_dropped() {
        let d = parse_dataset(SAMPLE).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.dropped(), 1);
        assert_eq!(d.variables(), &[Variable::Precip, Variable::Mintemp]);
        assert_eq!(d.records()[0].ensemble[1], vec![1.5, 2.0]);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let d = parse_dataset(SAMPLE).unwrap();
        let text = write_dataset(&d).unwrap();
        let back = parse_dataset(&text).unwrap();
        assert_eq!(back.records(), d.records());
        assert_eq!(back.variables(), d.variables());
    }

    #[test]
    fn errors_carry_line_numbers_and_schema() {
        let bad_number = SAMPLE.replace("1.5,2,1.75", "1.5,x,1.75");
        match parse_dataset(&bad_number) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let unknown = SAMPLE.replace("A,2020-01-02,precip", "A,2020-01-02,humidity");
        assert!(matches!(parse_dataset(&unknown), Err(Error::Schema(_))));
        let wrong_unit = SAMPLE.replace("precip=mm", "precip=in");
        assert!(matches!(parse_dataset(&wrong_unit), Err(Error::Schema(_))));
        let short = SAMPLE.replace("0,0.3,0\n", "0,0.3\n");
        assert!(matches!(parse_dataset(&short), Err(Error::Parse { line: 4, .. })));
        let bad_header = SAMPLE.replace("member_2", "member_3");
        assert!(matches!(parse_dataset(&bad_header), Err(Error::Schema(_))));
    }
}
