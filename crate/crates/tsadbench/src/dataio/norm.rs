//! Per-feature z-scoring with training-only statistics.

use super::series::{RunRecord, SeriesMatrix};
use crate::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub std_floor: f64,
}

/// Population mean/std per feature over the concatenated training runs;
/// constant features get std = std_floor.
pub fn fit_norm_stats(train: &[RunRecord], std_floor: f64) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::contract("fit_norm_stats needs at least one run"));
    }
    if !(std_floor > 0.0) {
        return Err(Error::contract("std_floor must be positive"));
    }
    let dims = train[0].series.dims();
    if train.iter().any(|r| r.series.dims() != dims) {
        return Err(Error::data("training runs have differing feature counts"));
    }
    let mut mean = vec![0.0; dims];
    let mut count = 0usize;
    for r in train {
        for t in 0..r.series.len() {
            for (m, v) in mean.iter_mut().zip(r.series.row(t)) {
                *m += v;
            }
        }
        count += r.series.len();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; dims];
    for r in train {
        for t in 0..r.series.len() {
            for ((s, v), m) in var.iter_mut().zip(r.series.row(t)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(std_floor))
        .collect();
    Ok(NormStats {
        mean,
        std,
        std_floor,
    })
}

/// (x - mean) / std per feature; labels and sampling interval pass through.
pub fn apply_norm(series: &SeriesMatrix, stats: &NormStats) -> Result<SeriesMatrix> {
    if series.dims() != stats.mean.len() {
        return Err(Error::Dimension {
            op: "apply_norm",
            lhs: vec![series.dims()],
            rhs: vec![stats.mean.len()],
        });
    }
    let dims = series.dims();
    let mut values = series.values().to_vec();
    for (i, v) in values.iter_mut().enumerate() {
        let d = i % dims;
        *v = (*v - stats.mean[d]) / stats.std[d];
    }
    SeriesMatrix::new(
        series.len(),
        dims,
        values,
        series.dt_minutes,
        series.labels.clone(),
    )
}

/// Inverse of `apply_norm`.
pub fn invert_norm(series: &SeriesMatrix, stats: &NormStats) -> Result<SeriesMatrix> {
    if series.dims() != stats.mean.len() {
        return Err(Error::Dimension {
            op: "invert_norm",
            lhs: vec![series.dims()],
            rhs: vec![stats.mean.len()],
        });
    }
    let dims = series.dims();
    let mut values = series.values().to_vec();
    for (i, v) in values.iter_mut().enumerate() {
        let d = i % dims;
        *v = *v * stats.std[d] + stats.mean[d];
    }
    SeriesMatrix::new(
        series.len(),
        dims,
        values,
        series.dt_minutes,
        series.labels.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(values: Vec<f64>, dims: usize) -> RunRecord {
        let t = values.len() / dims;
        RunRecord::new(0, 0, SeriesMatrix::new(t, dims, values, 3.0, None).unwrap()).unwrap()
    }

    #[test]
    fn hand_example_single_feature() {
        let stats = fit_norm_stats(&[record(vec![1.0, 3.0], 1)], STD_FLOOR).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        let normed = apply_norm(
            &SeriesMatrix::new(2, 1, vec![1.0, 3.0], 3.0, None).unwrap(),
            &stats,
        )
        .unwrap();
        assert_eq!(normed.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn training_concatenation_has_zero_mean() {
        let runs = vec![
            record(vec![1.0, 5.0, 2.0, 6.0], 2),
            record(vec![3.0, 7.0, 0.5, 4.5], 2),
        ];
        let stats = fit_norm_stats(&runs, STD_FLOOR).unwrap();
        let mut sums = vec![0.0; 2];
        let mut count = 0;
        for r in &runs {
            let normed = apply_norm(&r.series, &stats).unwrap();
            for t in 0..normed.len() {
                for (s, v) in sums.iter_mut().zip(normed.row(t)) {
                    *s += v;
                }
            }
            count += r.series.len();
        }
        for s in sums {
            assert!((s / count as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_feature_normalizes_to_zero() {
        let stats = fit_norm_stats(&[record(vec![4.0, 4.0, 4.0], 1)], STD_FLOOR).unwrap();
        assert_eq!(stats.std, vec![STD_FLOOR]);
        let normed = apply_norm(
            &SeriesMatrix::new(3, 1, vec![4.0; 3], 3.0, None).unwrap(),
            &stats,
        )
        .unwrap();
        assert!(normed.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(fit_norm_stats(&[], STD_FLOOR).is_err());
    }
}
