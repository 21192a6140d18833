//! Transformations from raw model errors to calibrated per-time-step anomaly
//! scores, shared across detectors.
//!
//! Conventions fixed here so oracles match: diagonal covariance everywhere,
//! population (1/N) variance with a floor of 1e-6, and a centralized warm-up
//! fill rule (uncovered leading steps copy the first computed score).

use crate::numkit::LN_2PI;
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Max,
}

/// Per-time-step per-feature error matrix.
#[derive(Debug, Clone)]
pub struct ErrorSeries {
    pub errors: Vec<Vec<f64>>,
    pub reduction: Reduction,
}

impl ErrorSeries {
    pub fn new(errors: Vec<Vec<f64>>, reduction: Reduction) -> Result<Self> {
        for row in &errors {
            if row.len() != errors[0].len() {
                return Err(Error::contract("error rows have unequal widths"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("error series"));
            }
        }
        Ok(ErrorSeries { errors, reduction })
    }
}

/// Collapses per-feature errors into one score per time step.
pub fn reduce_errors(err: &ErrorSeries) -> Vec<f64> {
    err.errors
        .iter()
        .map(|row| match err.reduction {
            Reduction::Mean => row.iter().sum::<f64>() / row.len().max(1) as f64,
            Reduction::Max => row.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

/// Diagonal Gaussian fitted to validation errors.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub variance_floor: f64,
}

/// Population mean/variance per coordinate over N >= 2 rows, with the
/// variance floored.
pub fn fit_gaussian(errors: &[Vec<f64>]) -> Result<GaussianModel> {
    if errors.len() < 2 {
        return Err(Error::contract(format!(
            "fit_gaussian needs at least 2 rows, got {}",
            errors.len()
        )));
    }
    let dim = errors[0].len();
    if errors.iter().any(|r| r.len() != dim) {
        return Err(Error::contract("fit_gaussian rows have unequal widths"));
    }
    let n = errors.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in errors {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut variance = vec![0.0; dim];
    for row in errors {
        for ((var, v), m) in variance.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *var += d * d;
        }
    }
    for var in &mut variance {
        *var = (*var / n).max(VARIANCE_FLOOR);
    }
    Ok(GaussianModel {
        mean,
        variance,
        variance_floor: VARIANCE_FLOOR,
    })
}

/// Negative log-likelihood of an error vector under the fitted Gaussian.
pub fn nll(model: &GaussianModel, e: &[f64]) -> Result<f64> {
    if e.len() != model.mean.len() {
        return Err(Error::Dimension {
            op: "nll",
            lhs: vec![model.mean.len()],
            rhs: vec![e.len()],
        });
    }
    let mut acc = 0.0;
    for ((v, m), var) in e.iter().zip(&model.mean).zip(&model.variance) {
        let d = v - m;
        acc += LN_2PI + var.ln() + d * d / var;
    }
    Ok(0.5 * acc)
}

/// s_0 = x_0; s_t = alpha·x_t + (1-alpha)·s_{t-1}.
pub fn ewma(scores: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!(
            "ewma alpha must be in (0, 1], got {alpha}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::contract("ewma needs at least one value"));
    }
    let mut out = Vec::with_capacity(scores.len());
    let mut s = scores[0];
    out.push(s);
    for &x in &scores[1..] {
        s = alpha * x + (1.0 - alpha) * s;
        out.push(s);
    }
    Ok(out)
}

/// Averages all window scores targeting each time step and fills uncovered
/// steps: leading steps copy the first computed score, later gaps carry the
/// previous value forward. Targets outside [0, T) are dropped.
pub fn aggregate_overlaps(scored: &[(usize, f64)], len: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::contract("aggregate_overlaps: empty output"));
    }
    let mut sums = vec![0.0; len];
    let mut counts = vec![0usize; len];
    for &(t, s) in scored {
        if t < len {
            sums[t] += s;
            counts[t] += 1;
        }
    }
    let first_covered = counts.iter().position(|&c| c > 0).ok_or_else(|| {
        Error::contract("aggregate_overlaps: no time step is covered by any score")
    })?;
    let first_value = sums[first_covered] / counts[first_covered] as f64;
    let mut out = vec![0.0; len];
    let mut last = first_value;
    for t in 0..len {
        if counts[t] > 0 {
            last = sums[t] / counts[t] as f64;
        }
        out[t] = if t < first_covered { first_value } else { last };
    }
    Ok(out)
}

/// Closed-form KL between diagonal Gaussians, KL(q ‖ p).
pub fn kl_diag_gaussians(
    q_mean: &[f64],
    q_var: &[f64],
    p_mean: &[f64],
    p_var: &[f64],
) -> Result<f64> {
    let dim = q_mean.len();
    if q_var.len() != dim || p_mean.len() != dim || p_var.len() != dim {
        return Err(Error::Dimension {
            op: "kl_diag_gaussians",
            lhs: vec![dim],
            rhs: vec![q_var.len(), p_mean.len(), p_var.len()],
        });
    }
    if q_var.iter().chain(p_var).any(|v| *v <= 0.0) {
        return Err(Error::contract("kl_diag_gaussians: non-positive variance"));
    }
    let mut acc = 0.0;
    for i in 0..dim {
        let dm = q_mean[i] - p_mean[i];
        acc += (p_var[i] / q_var[i]).ln() + (q_var[i] + dm * dm) / p_var[i] - 1.0;
    }
    Ok(0.5 * acc)
}

/// Diagonal-Gaussian log-density of x.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != var.len() {
        return Err(Error::Dimension {
            op: "gaussian_log_density",
            lhs: vec![x.len()],
            rhs: vec![mean.len(), var.len()],
        });
    }
    if var.iter().any(|v| *v <= 0.0) {
        return Err(Error::contract(
            "gaussian_log_density: non-positive variance",
        ));
    }
    let mut acc = 0.0;
    for ((v, m), s2) in x.iter().zip(mean).zip(var) {
        let d = v - m;
        acc += LN_2PI + s2.ln() + d * d / s2;
    }
    Ok(-0.5 * acc)
}

/// ELBO = E_q[log p(x|z)] − KL(q ‖ prior), with the reconstruction term
/// evaluated in closed form at the given decoder output.
pub fn elbo(
    x: &[f64],
    posterior_mean: &[f64],
    posterior_var: &[f64],
    recon_mean: &[f64],
    recon_var: &[f64],
    prior_mean: &[f64],
    prior_var: &[f64],
) -> Result<f64> {
    let recon = gaussian_log_density(x, recon_mean, recon_var)?;
    let kl = kl_diag_gaussians(posterior_mean, posterior_var, prior_mean, prior_var)?;
    Ok(recon - kl)
}

/// Monte-Carlo reconstruction probability: the mean over `samples` posterior
/// draws of log p(x|z), with the decoder mapping z to a Gaussian over x.
pub fn reconstruction_probability<F>(
    x: &[f64],
    posterior_mean: &[f64],
    posterior_var: &[f64],
    samples: usize,
    rng: &mut impl rand::Rng,
    mut decoder: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> (Vec<f64>, Vec<f64>),
{
    if samples == 0 {
        return Err(Error::contract(
            "reconstruction_probability: samples must be >= 1",
        ));
    }
    if posterior_var.iter().any(|v| *v <= 0.0) {
        return Err(Error::contract(
            "reconstruction_probability: non-positive variance",
        ));
    }
    use rand_distr::{Distribution, StandardNormal};
    let mut acc = 0.0;
    let mut z = vec![0.0; posterior_mean.len()];
    for _ in 0..samples {
        for (zi, (m, v)) in z.iter_mut().zip(posterior_mean.iter().zip(posterior_var)) {
            let eps: f64 = StandardNormal.sample(rng);
            *zi = m + v.sqrt() * eps;
        }
        let (mean, var) = decoder(&z);
        acc += gaussian_log_density(x, &mean, &var)?;
    }
    Ok(acc / samples as f64)
}

/// lambda·a + (1−lambda)·b with lambda in [0, 1].
pub fn convex_combine(a: f64, b: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!(
            "convex_combine lambda must be in [0, 1], got {lambda}"
        )));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Numeric("convex_combine"));
    }
    Ok(lambda * a + (1.0 - lambda) * b)
}
