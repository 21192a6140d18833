//! Core series containers.

use crate::{Error, Result};

/// A T×D multivariate series with sampling interval and optional per-step
/// binary labels (1 = anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    pub dt_minutes: f64,
    pub labels: Option<Vec<u8>>,
}

impl SeriesMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        dt_minutes: f64,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("series must have T >= 1 and D >= 1"));
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension {
                op: "series",
                lhs: vec![rows, cols],
                rhs: vec![values.len()],
            });
        }
        if !(dt_minutes > 0.0) {
            return Err(Error::contract("dt_minutes must be positive"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("series values"));
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(Error::Dimension {
                    op: "series labels",
                    lhs: vec![rows],
                    rhs: vec![l.len()],
                });
            }
            if l.iter().any(|v| *v > 1) {
                return Err(Error::data("labels must be 0 or 1"));
            }
        }
        Ok(SeriesMatrix {
            values,
            rows,
            cols,
            dt_minutes,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dims(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.cols + d]
    }
}

/// One simulated plant trajectory. fault_id 0 denotes fault-free operation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: u32,
    pub fault_id: u8,
    pub series: SeriesMatrix,
}

impl RunRecord {
    pub fn new(run_id: u32, fault_id: u8, series: SeriesMatrix) -> Result<Self> {
        if fault_id > 20 {
            return Err(Error::data(format!(
                "fault_id must be in [0, 20], got {fault_id}"
            )));
        }
        if fault_id == 0 {
            if let Some(labels) = &series.labels {
                if labels.iter().any(|l| *l == 1) {
                    return Err(Error::data(
                        "fault-free run carries nonzero labels".to_string(),
                    ));
                }
            }
        }
        Ok(RunRecord {
            run_id,
            fault_id,
            series,
        })
    }
}

/// Fault-free training and validation runs plus labeled test runs.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<RunRecord>,
    pub validation: Vec<RunRecord>,
    pub test: Vec<RunRecord>,
}

/// Separates a quarter of the training runs (rounded down, at least one) as
/// the validation set. The trailing runs are taken so training keeps the
/// leading ones.
pub fn split_train_validation(
    mut train: Vec<RunRecord>,
    test: Vec<RunRecord>,
) -> Result<DatasetSplit> {
    if train.len() < 2 {
        return Err(Error::contract(
            "need at least 2 fault-free runs to split off validation",
        ));
    }
    let n_val = (train.len() / 4).max(1);
    let validation = train.split_off(train.len() - n_val);
    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}
