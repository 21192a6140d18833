//! Dataset CSV ingestion and emission.
//!
//! Schema: header `fault_id,run_id,timestep,label,x1..xD` with `label`
//! optional, UTF-8, `.` decimal separator, one row per time step. The
//! feature column count is data-driven.

use std::collections::HashMap;
use std::path::Path;

use super::series::{RunRecord, SeriesMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct CsvSchema {
    /// Sampling interval to stamp on loaded series.
    pub dt_minutes: f64,
    /// When set and no label column is present, rows of fault runs at
    /// timestep >= onset are labeled 1. An explicit label column overrides.
    pub fault_onset: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            dt_minutes: 3.0,
            fault_onset: None,
        }
    }
}

struct RawRun {
    fault_id: u8,
    run_id: u32,
    last_timestep: i64,
    rows: Vec<f64>,
    labels: Vec<u8>,
}

/// Loads one RunRecord per (fault_id, run_id) group, in order of first
/// appearance. Rows must be ordered by timestep within each run and all runs
/// in one file must have equal length.
pub fn load_runs_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })
    };
    let fault_col = col("fault_id")?;
    let run_col = col("run_id")?;
    let ts_col = col("timestep")?;
    let label_col = headers.iter().position(|h| h == "label");
    let meta_cols: Vec<usize> = [Some(fault_col), Some(run_col), Some(ts_col), label_col]
        .into_iter()
        .flatten()
        .collect();
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|i| !meta_cols.contains(i))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema {
            column: "x1".to_string(),
        });
    }

    let mut order: Vec<(u8, u32)> = Vec::new();
    let mut runs: HashMap<(u8, u32), RawRun> = HashMap::new();

    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let parse_int = |c: usize, what: &str| -> Result<i64> {
            record
                .get(c)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("missing {what}"),
                })?
                .trim()
                .parse::<i64>()
                .map_err(|e| Error::Parse {
                    line,
                    msg: format!("bad {what}: {e}"),
                })
        };
        let fault_id = parse_int(fault_col, "fault_id")?;
        if !(0..=20).contains(&fault_id) {
            return Err(Error::Parse {
                line,
                msg: format!("fault_id must be in [0, 20], got {fault_id}"),
            });
        }
        let run_id = parse_int(run_col, "run_id")?;
        let timestep = parse_int(ts_col, "timestep")?;

        let key = (fault_id as u8, run_id as u32);
        let entry = runs.entry(key).or_insert_with(|| {
            order.push(key);
            RawRun {
                fault_id: key.0,
                run_id: key.1,
                last_timestep: i64::MIN,
                rows: Vec::new(),
                labels: Vec::new(),
            }
        });
        if timestep <= entry.last_timestep {
            return Err(Error::data(format!(
                "non-monotonic timestep {timestep} in run (fault {}, run {}) at line {line}",
                key.0, key.1
            )));
        }
        entry.last_timestep = timestep;

        for &c in &feature_cols {
            let v: f64 = record
                .get(c)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: "short row".to_string(),
                })?
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    msg: format!("bad feature value: {e}"),
                })?;
            entry.rows.push(v);
        }

        let label = match label_col {
            Some(c) => {
                let raw = record.get(c).unwrap_or("").trim();
                match raw.parse::<u8>() {
                    Ok(l @ (0 | 1)) => l,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("label must be 0 or 1, got `{raw}`"),
                        })
                    }
                }
            }
            None => match (entry.fault_id, schema.fault_onset) {
                (0, _) | (_, None) => 0,
                (_, Some(onset)) => (timestep as usize >= onset) as u8,
            },
        };
        entry.labels.push(label);
    }

    if order.is_empty() {
        return Err(Error::data("dataset file contains no rows"));
    }

    let dims = feature_cols.len();
    let first_len = runs[&order[0]].rows.len() / dims;
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let raw = runs.remove(&key).expect("key collected above");
        let len = raw.rows.len() / dims;
        if len != first_len {
            return Err(Error::data(format!(
                "runs have unequal lengths: run (fault {}, run {}) has {len} rows, expected {first_len}",
                raw.fault_id, raw.run_id
            )));
        }
        let has_labels = label_col.is_some() || (raw.fault_id != 0 && schema.fault_onset.is_some());
        let labels = has_labels.then_some(raw.labels);
        let series = SeriesMatrix::new(len, dims, raw.rows, schema.dt_minutes, labels)?;
        out.push(RunRecord::new(raw.run_id, raw.fault_id, series)?);
    }
    Ok(out)
}

/// Emits runs in the dataset schema. The label column is always written;
/// unlabeled runs get zeros.
pub fn write_runs_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::contract("write_runs_csv: no runs"));
    }
    let dims = runs[0].series.dims();
    let mut out = String::new();
    out.push_str("fault_id,run_id,timestep,label");
    for d in 1..=dims {
        out.push_str(&format!(",x{d}"));
    }
    out.push('\n');
    for run in runs {
        if run.series.dims() != dims {
            return Err(Error::contract("runs have differing feature counts"));
        }
        for t in 0..run.series.len() {
            let label = run
                .series
                .labels
                .as_ref()
                .map_or(0, |l| l[t]);
            out.push_str(&format!("{},{},{},{}", run.fault_id, run.run_id, t, label));
            for v in run.series.row(t) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_grouped_runs() {
        let f = write_temp(
            "fault_id,run_id,timestep,x1,x2\n\
             0,0,0,1.0,2.0\n0,0,1,3.0,4.0\n\
             0,1,0,5.0,6.0\n0,1,1,7.0,8.0\n",
        );
        let runs = load_runs_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].series.len(), 2);
        assert_eq!(runs[0].series.row(1), &[3.0, 4.0]);
        assert!(runs[0].series.labels.is_none());
        assert_eq!(runs[0].series.dt_minutes, 3.0);
    }

    #[test]
    fn missing_column_names_it() {
        let f = write_temp("fault_id,run_id,x1\n0,0,1.0\n");
        match load_runs_csv(f.path(), &CsvSchema::default()) {
            Err(Error::Schema { column }) => assert_eq!(column, "timestep"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotonic_timestep_is_data_error() {
        let f = write_temp(
            "fault_id,run_id,timestep,x1\n0,0,0,1.0\n0,0,2,1.0\n0,0,1,1.0\n",
        );
        assert!(matches!(
            load_runs_csv(f.path(), &CsvSchema::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn unequal_run_lengths_rejected() {
        let f = write_temp(
            "fault_id,run_id,timestep,x1\n0,0,0,1.0\n0,0,1,1.0\n0,1,0,1.0\n",
        );
        assert!(matches!(
            load_runs_csv(f.path(), &CsvSchema::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn label_column_read_and_validated() {
        let f = write_temp(
            "fault_id,run_id,timestep,label,x1\n3,0,0,0,1.0\n3,0,1,1,2.0\n",
        );
        let runs = load_runs_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(runs[0].series.labels.as_deref(), Some(&[0u8, 1][..]));

        let bad = write_temp("fault_id,run_id,timestep,label,x1\n3,0,0,2,1.0\n");
        assert!(load_runs_csv(bad.path(), &CsvSchema::default()).is_err());
    }

    #[test]
    fn onset_derives_labels_for_fault_runs_only() {
        let f = write_temp(
            "fault_id,run_id,timestep,x1\n\
             0,0,0,1.0\n0,0,1,1.0\n0,0,2,1.0\n\
             5,0,0,1.0\n5,0,1,1.0\n5,0,2,1.0\n",
        );
        let schema = CsvSchema {
            fault_onset: Some(1),
            ..CsvSchema::default()
        };
        let runs = load_runs_csv(f.path(), &schema).unwrap();
        assert!(runs[0].series.labels.is_none());
        assert_eq!(runs[1].series.labels.as_deref(), Some(&[0u8, 1, 1][..]));
    }

    #[test]
    fn round_trip_through_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let series =
            SeriesMatrix::new(3, 2, vec![0.25, -1.5, 2.0, 0.125, 9.0, -3.75], 3.0, Some(vec![0, 1, 1]))
                .unwrap();
        let runs = vec![RunRecord::new(4, 2, series).unwrap()];
        write_runs_csv(&path, &runs).unwrap();
        let loaded = load_runs_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(loaded, runs);
    }
}
