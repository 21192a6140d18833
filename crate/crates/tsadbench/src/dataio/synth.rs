//! Seeded synthetic process-with-faults generator: a desk-scale stand-in for
//! the plant simulator.
//!
//! The base process is a stable linear stochastic recursion
//! s_{t+1} = A·s_t + w_t with A a random orthogonal mixing matrix scaled to
//! spectral radius 0.9 (shared by every run of a seed), observed with
//! additive measurement noise. Faults are injected on a per-run feature
//! subset at `fault_onset`, scaled in units of the feature's own clean
//! standard deviation, and labels are 1 exactly on [fault_onset, T).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::series::{RunRecord, SeriesMatrix};
use crate::numkit::stream;
use crate::{Error, Result};

const SPECTRAL_RADIUS: f64 = 0.9;
const PROCESS_NOISE_STD: f64 = 0.5;
const MEASUREMENT_NOISE_STD: f64 = 0.1;
const BURN_IN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// No fault; fault_id 0, labels all zero.
    None,
    /// Additive offset on the affected features.
    Step,
    /// Linear ramp from zero to full magnitude over [onset, T).
    Drift,
    /// Affected features frozen at their onset value.
    Stuck,
    /// Measurement noise on the affected features inflated to the given
    /// magnitude.
    Noise,
}

impl FaultKind {
    pub fn fault_id(self) -> u8 {
        match self {
            FaultKind::None => 0,
            FaultKind::Step => 1,
            FaultKind::Drift => 2,
            FaultKind::Stuck => 3,
            FaultKind::Noise => 4,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FaultKind::None),
            "step" => Ok(FaultKind::Step),
            "drift" => Ok(FaultKind::Drift),
            "stuck" => Ok(FaultKind::Stuck),
            "noise" => Ok(FaultKind::Noise),
            other => Err(Error::config(format!("unknown fault_kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub runs: usize,
    pub len: usize,
    pub dims: usize,
    pub fault_kind: FaultKind,
    pub fault_onset: usize,
    /// Fault size in units of the affected feature's clean std.
    pub fault_magnitude: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.dims < 2 {
            return Err(Error::config("synth: dims must be >= 2"));
        }
        if self.len < 16 {
            return Err(Error::config("synth: len must be >= 16"));
        }
        if self.runs == 0 {
            return Err(Error::config("synth: runs must be >= 1"));
        }
        if self.fault_kind != FaultKind::None {
            if self.fault_onset == 0 || self.fault_onset >= self.len {
                return Err(Error::config(format!(
                    "synth: fault_onset must be in [1, {}), got {}",
                    self.len, self.fault_onset
                )));
            }
            if !self.fault_magnitude.is_finite() {
                return Err(Error::config("synth: fault_magnitude must be finite"));
            }
        }
        Ok(())
    }
}

/// Random orthogonal matrix from Gram-Schmidt on a seeded Gaussian matrix.
fn orthogonal_mixing(dims: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "synth.coupling");
    let mut cols: Vec<Vec<f64>> = (0..dims)
        .map(|_| {
            (0..dims)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    for j in 0..dims {
        for k in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            let prev = cols[k].clone();
            for (v, p) in cols[j].iter_mut().zip(&prev) {
                *v -= dot * p;
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut a = vec![0.0; dims * dims];
    for i in 0..dims {
        for (j, col) in cols.iter().enumerate() {
            a[i * dims + j] = col[i];
        }
    }
    a
}

fn per_feature_std(values: &[f64], len: usize, dims: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dims];
    for t in 0..len {
        for d in 0..dims {
            mean[d] += values[t * dims + d];
        }
    }
    for m in &mut mean {
        *m /= len as f64;
    }
    let mut var = vec![0.0; dims];
    for t in 0..len {
        for d in 0..dims {
            let dv = values[t * dims + d] - mean[d];
            var[d] += dv * dv;
        }
    }
    var.iter()
        .map(|v| (v / len as f64).sqrt().max(1e-12))
        .collect()
}

/// Generates `config.runs` runs of one fault kind.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let dims = config.dims;
    let len = config.len;
    let coupling = {
        let q = orthogonal_mixing(dims, config.seed);
        q.iter().map(|v| v * SPECTRAL_RADIUS).collect::<Vec<f64>>()
    };
    let fault_id = config.fault_kind.fault_id();

    let mut out = Vec::with_capacity(config.runs);
    for run_id in 0..config.runs {
        let mut rng = stream(
            config.seed,
            &format!("synth.run.{}.{}", fault_id, run_id),
        );

        let mut state = vec![0.0; dims];
        let mut next = vec![0.0; dims];
        let mut values = vec![0.0; len * dims];
        for t in 0..BURN_IN + len {
            next.fill(0.0);
            for i in 0..dims {
                let row = &coupling[i * dims..(i + 1) * dims];
                let mut acc = 0.0;
                for (a, s) in row.iter().zip(&state) {
                    acc += a * s;
                }
                let w: f64 = StandardNormal.sample(&mut rng);
                next[i] = acc + PROCESS_NOISE_STD * w;
            }
            std::mem::swap(&mut state, &mut next);
            if t >= BURN_IN {
                let row = &mut values[(t - BURN_IN) * dims..(t - BURN_IN + 1) * dims];
                for (v, s) in row.iter_mut().zip(&state) {
                    let m: f64 = StandardNormal.sample(&mut rng);
                    *v = s + MEASUREMENT_NOISE_STD * m;
                }
            }
        }

        let labels = if config.fault_kind == FaultKind::None {
            None
        } else {
            let onset = config.fault_onset;
            let clean_std = per_feature_std(&values, len, dims);
            let n_affected = (dims / 4).max(1);
            let mut affected: Vec<usize> = (0..dims).collect();
            for i in (1..affected.len()).rev() {
                let j = rng.gen_range(0..=i);
                affected.swap(i, j);
            }
            affected.truncate(n_affected);

            match config.fault_kind {
                FaultKind::Step => {
                    for t in onset..len {
                        for &f in &affected {
                            values[t * dims + f] += config.fault_magnitude * clean_std[f];
                        }
                    }
                }
                FaultKind::Drift => {
                    let span = (len - 1 - onset).max(1) as f64;
                    for t in onset..len {
                        let ramp = (t - onset) as f64 / span;
                        for &f in &affected {
                            values[t * dims + f] +=
                                config.fault_magnitude * clean_std[f] * ramp;
                        }
                    }
                }
                FaultKind::Stuck => {
                    for &f in &affected {
                        let frozen = values[onset * dims + f];
                        for t in onset..len {
                            values[t * dims + f] = frozen;
                        }
                    }
                }
                FaultKind::Noise => {
                    for t in onset..len {
                        for &f in &affected {
                            let w: f64 = StandardNormal.sample(&mut rng);
                            values[t * dims + f] += config.fault_magnitude * clean_std[f] * w;
                        }
                    }
                }
                FaultKind::None => unreachable!(),
            }

            let mut l = vec![0u8; len];
            for v in &mut l[onset..] {
                *v = 1;
            }
            Some(l)
        };

        let series = SeriesMatrix::new(len, dims, values, 3.0, labels)?;
        out.push(RunRecord::new(run_id as u32, fault_id, series)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: FaultKind) -> SynthConfig {
        SynthConfig {
            runs: 2,
            len: 200,
            dims: 4,
            fault_kind: kind,
            fault_onset: 100,
            fault_magnitude: 5.0,
            seed: 42,
        }
    }

    #[test]
    fn same_seed_identical_output() {
        let a = synth_generate(&config(FaultKind::Step)).unwrap();
        let b = synth_generate(&config(FaultKind::Step)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_follow_onset_contract() {
        for kind in [
            FaultKind::Step,
            FaultKind::Drift,
            FaultKind::Stuck,
            FaultKind::Noise,
        ] {
            let runs = synth_generate(&config(kind)).unwrap();
            for r in &runs {
                let labels = r.series.labels.as_ref().unwrap();
                assert!(labels[..100].iter().all(|l| *l == 0));
                assert!(labels[100..].iter().all(|l| *l == 1));
            }
        }
        let clean = synth_generate(&config(FaultKind::None)).unwrap();
        assert!(clean.iter().all(|r| r.series.labels.is_none()));
        assert!(clean.iter().all(|r| r.fault_id == 0));
    }

    #[test]
    fn step_fault_moves_affected_feature_several_sigma() {
        // z-score the faulty run with the clean-train statistics and check
        // the affected span stands out
        let train = synth_generate(&SynthConfig {
            runs: 4,
            fault_kind: FaultKind::None,
            ..config(FaultKind::None)
        })
        .unwrap();
        let stats = super::super::norm::fit_norm_stats(&train, 1e-6).unwrap();
        let faulty = synth_generate(&config(FaultKind::Step)).unwrap();
        for r in &faulty {
            let z = super::super::norm::apply_norm(&r.series, &stats).unwrap();
            // strongest feature shift over the faulty span
            let mut best = 0.0f64;
            for d in 0..z.dims() {
                let m: f64 =
                    (100..200).map(|t| z.get(t, d).abs()).sum::<f64>() / 100.0;
                best = best.max(m);
            }
            assert!(best >= 3.0, "mean |z| over faulty span = {best}");
        }
    }

    #[test]
    fn stuck_freezes_feature() {
        let runs = synth_generate(&SynthConfig {
            runs: 1,
            ..config(FaultKind::Stuck)
        })
        .unwrap();
        let s = &runs[0].series;
        let frozen: Vec<usize> = (0..s.dims())
            .filter(|&d| (101..200).all(|t| s.get(t, d) == s.get(100, d)))
            .collect();
        assert_eq!(frozen.len(), 1); // dims/4 = 1 affected feature
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(synth_generate(&SynthConfig { dims: 1, ..config(FaultKind::Step) }).is_err());
        assert!(synth_generate(&SynthConfig { len: 8, ..config(FaultKind::Step) }).is_err());
        assert!(synth_generate(&SynthConfig {
            fault_onset: 0,
            ..config(FaultKind::Step)
        })
        .is_err());
        assert!(synth_generate(&SynthConfig {
            fault_onset: 200,
            ..config(FaultKind::Step)
        })
        .is_err());
        assert!(FaultKind::parse("wobble").is_err());
    }

    #[test]
    fn different_fault_batches_have_different_noise() {
        let a = synth_generate(&config(FaultKind::None)).unwrap();
        let b = synth_generate(&config(FaultKind::Step)).unwrap();
        assert_ne!(a[0].series.values()[..8], b[0].series.values()[..8]);
    }
}
