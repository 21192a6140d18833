//! Sliding-window extraction.

use serde::{Deserialize, Serialize};

use super::series::SeriesMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub width: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(width: usize, stride: usize) -> Result<Self> {
        if width == 0 || stride == 0 {
            return Err(Error::contract("window width and stride must be >= 1"));
        }
        Ok(WindowSpec { width, stride })
    }
}

/// A w×D slice of a series together with its start index.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub values: Vec<f64>,
    pub width: usize,
    pub dims: usize,
}

impl Window {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    /// Index of the last series time step this window covers.
    pub fn end(&self) -> usize {
        self.start + self.width - 1
    }
}

/// Windows at starts 0, s, 2s, … while start + w <= T;
/// count = floor((T-w)/s) + 1.
pub fn make_windows(series: &SeriesMatrix, spec: &WindowSpec) -> Result<Vec<Window>> {
    let t = series.len();
    let w = spec.width;
    if w > t {
        return Err(Error::contract(format!(
            "window width {w} exceeds series length {t}"
        )));
    }
    let dims = series.dims();
    let count = (t - w) / spec.stride + 1;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    while start + w <= t {
        out.push(Window {
            start,
            values: series.values()[start * dims..(start + w) * dims].to_vec(),
            width: w,
            dims,
        });
        start += spec.stride;
    }
    debug_assert_eq!(out.len(), count);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(t: usize, d: usize) -> SeriesMatrix {
        let values: Vec<f64> = (0..t * d).map(|i| i as f64).collect();
        SeriesMatrix::new(t, d, values, 3.0, None).unwrap()
    }

    #[test]
    fn window_counts() {
        let s = series(10, 2);
        assert_eq!(
            make_windows(&s, &WindowSpec::new(4, 1).unwrap()).unwrap().len(),
            7
        );
        assert_eq!(
            make_windows(&s, &WindowSpec::new(4, 2).unwrap()).unwrap().len(),
            4
        );
        let s1 = series(4, 2);
        assert_eq!(
            make_windows(&s1, &WindowSpec::new(4, 1).unwrap()).unwrap().len(),
            1
        );
    }

    #[test]
    fn width_beyond_length_is_contract_error() {
        let s = series(3, 1);
        assert!(make_windows(&s, &WindowSpec::new(4, 1).unwrap()).is_err());
    }

    #[test]
    fn windows_round_trip_cover_original() {
        let s = series(11, 3);
        let windows = make_windows(&s, &WindowSpec::new(4, 2).unwrap()).unwrap();
        let mut rebuilt = vec![f64::NAN; 11 * 3];
        for w in &windows {
            for t in 0..w.width {
                for d in 0..w.dims {
                    rebuilt[(w.start + t) * 3 + d] = w.row(t)[d];
                }
            }
        }
        for (i, v) in rebuilt.iter().enumerate() {
            if !v.is_nan() {
                assert_eq!(*v, s.values()[i]);
            }
        }
    }
}
