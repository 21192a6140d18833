//! Input-corruption schemes used by masking-based reconstructors, plus
//! windowed signature matrices.

use rand::Rng;

use super::series::SeriesMatrix;
use super::window::Window;
use crate::{Error, Result};

const GENAD_FOLDS: usize = 5;

/// Signature matrices: at each valid end time t (stepping by `scale`),
/// S_ij = (1/w)·Σ_{τ=t-w+1..t} x_iτ·x_jτ. Returns (end time, row-major D×D).
pub fn signature_matrices(
    series: &SeriesMatrix,
    width: usize,
    scale: usize,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let t_len = series.len();
    if width == 0 || width > t_len {
        return Err(Error::contract(format!(
            "signature width {width} invalid for series length {t_len}"
        )));
    }
    if scale == 0 {
        return Err(Error::contract("signature scale must be >= 1"));
    }
    let d = series.dims();
    let mut out = Vec::new();
    let mut end = width - 1;
    while end < t_len {
        let mut s = vec![0.0; d * d];
        for tau in end + 1 - width..=end {
            let row = series.row(tau);
            for i in 0..d {
                for j in i..d {
                    s[i * d + j] += row[i] * row[j];
                }
            }
        }
        for v in &mut s {
            *v /= width as f64;
        }
        for i in 0..d {
            for j in 0..i {
                s[i * d + j] = s[j * d + i];
            }
        }
        out.push((end, s));
        end += scale;
    }
    Ok(out)
}

fn masked_feature_count(dims: usize, fraction: f64) -> Result<usize> {
    let m = (fraction * dims as f64).round() as usize;
    if m == 0 {
        return Err(Error::contract(format!(
            "masking fraction {fraction} rounds to zero features of {dims}"
        )));
    }
    Ok(m.min(dims))
}

fn apply_feature_mask(window: &Window, features: &[usize], fold_index: usize) -> (Window, Vec<u8>) {
    let fold_len = window.width / GENAD_FOLDS;
    let t0 = fold_index * fold_len;
    let t1 = t0 + fold_len;
    let mut values = window.values.clone();
    let mut mask = vec![0u8; window.width * window.dims];
    for t in t0..t1 {
        for &f in features {
            values[t * window.dims + f] = 0.0;
            mask[t * window.dims + f] = 1;
        }
    }
    (
        Window {
            start: window.start,
            values,
            width: window.width,
            dims: window.dims,
        },
        mask,
    )
}

/// Splits the window along time into five equal folds and zeroes
/// round(fraction·D) randomly chosen feature rows inside `fold_index` only.
/// Returns the masked window and a binary mask marking zeroed cells.
pub fn mask_features_genad(
    window: &Window,
    fraction: f64,
    fold_index: usize,
    rng: &mut impl Rng,
) -> Result<(Window, Vec<u8>)> {
    if window.width % GENAD_FOLDS != 0 {
        return Err(Error::contract(format!(
            "window width {} must be divisible by {GENAD_FOLDS}",
            window.width
        )));
    }
    if fold_index >= GENAD_FOLDS {
        return Err(Error::contract(format!(
            "fold_index must be < {GENAD_FOLDS}, got {fold_index}"
        )));
    }
    let m = masked_feature_count(window.dims, fraction)?;
    let mut features: Vec<usize> = (0..window.dims).collect();
    for i in (1..features.len()).rev() {
        let j = rng.gen_range(0..=i);
        features.swap(i, j);
    }
    features.truncate(m);
    Ok(apply_feature_mask(window, &features, fold_index))
}

/// Sweep over mask groups that together mask each feature exactly once.
pub struct GenadSweep {
    groups: Vec<Vec<usize>>,
    next: usize,
    fold_index: usize,
}

impl GenadSweep {
    pub fn new(
        dims: usize,
        width: usize,
        fraction: f64,
        fold_index: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if width % GENAD_FOLDS != 0 {
            return Err(Error::contract(format!(
                "window width {width} must be divisible by {GENAD_FOLDS}"
            )));
        }
        if fold_index >= GENAD_FOLDS {
            return Err(Error::contract(format!(
                "fold_index must be < {GENAD_FOLDS}, got {fold_index}"
            )));
        }
        let m = masked_feature_count(dims, fraction)?;
        let mut features: Vec<usize> = (0..dims).collect();
        for i in (1..features.len()).rev() {
            let j = rng.gen_range(0..=i);
            features.swap(i, j);
        }
        let groups = features.chunks(m).map(|c| c.to_vec()).collect();
        Ok(GenadSweep {
            groups,
            next: 0,
            fold_index,
        })
    }

    pub fn remaining(&self) -> usize {
        self.groups.len() - self.next
    }

    /// Masks the next feature group; None once every feature has been masked.
    pub fn mask_next(&mut self, window: &Window) -> Option<(Window, Vec<u8>)> {
        let group = self.groups.get(self.next)?;
        self.next += 1;
        Some(apply_feature_mask(window, group, self.fold_index))
    }
}

/// Zeroes each (t, d) cell independently with probability `rate`; the mask
/// marks zeroed cells for loss weighting.
pub fn mask_cells_donut(
    window: &Window,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<(Window, Vec<u8>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!(
            "donut mask rate must be in [0, 1), got {rate}"
        )));
    }
    let mut values = window.values.clone();
    let mut mask = vec![0u8; values.len()];
    for (v, m) in values.iter_mut().zip(&mut mask) {
        if rng.gen::<f64>() < rate {
            *v = 0.0;
            *m = 1;
        }
    }
    Ok((
        Window {
            start: window.start,
            values,
            width: window.width,
            dims: window.dims,
        },
        mask,
    ))
}
