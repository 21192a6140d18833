//! Uniform detector interface: fit on fault-free data, emit per-time-step
//! anomaly scores (higher = more anomalous). Thirteen concrete variants
//! covering reconstruction, forecasting, and generative families.

mod dense;
mod lstm;
mod persist;
mod tcn;
mod train;
mod vae;

pub use lstm::reversed_target;
pub use persist::{load_model, save_model};
pub use vae::interpolated_prior_mean;

use serde::{Deserialize, Serialize};

use crate::dataio::{
    apply_norm, fit_norm_stats, DatasetSplit, NormStats, SeriesMatrix, WindowSpec,
};
use crate::scoring::{aggregate_overlaps, fit_gaussian, GaussianModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    DenseAe,
    LstmAe,
    LstmMaxAe,
    UntrainedLstmAe,
    Usad,
    TcnS2sAe,
    LstmP,
    TcnP,
    TcnS2sP,
    LstmVae,
    DonutMv,
    LstmDvae,
    BeatGan,
}

pub const ALL_VARIANTS: [Variant; 13] = [
    Variant::DenseAe,
    Variant::LstmAe,
    Variant::LstmMaxAe,
    Variant::UntrainedLstmAe,
    Variant::Usad,
    Variant::TcnS2sAe,
    Variant::LstmP,
    Variant::TcnP,
    Variant::TcnS2sP,
    Variant::LstmVae,
    Variant::DonutMv,
    Variant::LstmDvae,
    Variant::BeatGan,
];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::DenseAe => "dense_ae",
            Variant::LstmAe => "lstm_ae",
            Variant::LstmMaxAe => "lstm_max_ae",
            Variant::UntrainedLstmAe => "untrained_lstm_ae",
            Variant::Usad => "usad",
            Variant::TcnS2sAe => "tcn_s2s_ae",
            Variant::LstmP => "lstm_p",
            Variant::TcnP => "tcn_p",
            Variant::TcnS2sP => "tcn_s2s_p",
            Variant::LstmVae => "lstm_vae",
            Variant::DonutMv => "donut_mv",
            Variant::LstmDvae => "lstm_dvae",
            Variant::BeatGan => "beatgan",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::config(format!("unknown detector variant `{name}`")))
    }

    /// Method family as reported in ranking tables.
    pub fn method_type(self) -> &'static str {
        match self {
            Variant::DenseAe
            | Variant::LstmAe
            | Variant::LstmMaxAe
            | Variant::UntrainedLstmAe
            | Variant::Usad
            | Variant::TcnS2sAe => "Reconstruction",
            Variant::LstmP | Variant::TcnP | Variant::TcnS2sP => "Forecasting",
            Variant::LstmVae | Variant::DonutMv | Variant::LstmDvae => "Generative-VAE",
            Variant::BeatGan => "Generative-GAN",
        }
    }

    pub fn is_forecasting(self) -> bool {
        matches!(self, Variant::LstmP | Variant::TcnP | Variant::TcnS2sP)
    }

    /// Variants whose score is a plain reconstruction error.
    pub fn is_reconstruction(self) -> bool {
        matches!(
            self,
            Variant::DenseAe
                | Variant::LstmAe
                | Variant::LstmMaxAe
                | Variant::UntrainedLstmAe
                | Variant::Usad
                | Variant::TcnS2sAe
        )
    }

    /// Variants that calibrate a Gaussian on a held-out validation set.
    pub fn needs_validation(self) -> bool {
        matches!(self, Variant::TcnS2sAe | Variant::LstmP | Variant::TcnS2sP)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Mean,
}

/// A detector family variant plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub variant: Variant,
    pub window: WindowSpec,
    pub hidden_size: usize,
    pub latent_dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Prediction horizon k for forecasting variants.
    pub horizon: usize,
    /// Monte-Carlo samples L for variational scores.
    pub mc_samples: usize,
    pub usad_alpha: f64,
    pub usad_beta: f64,
    /// Feature-matching weight in the adversarial generator loss.
    pub gan_lambda: f64,
    /// Cell-masking rate for masking-trained reconstructors.
    pub mask_rate: f64,
    /// Input-noise std for denoising variational training.
    pub noise_std: f64,
    /// Encoder state pooling (max by default, mean available).
    pub latent_pool: PoolKind,
    pub batch_size: usize,
    pub seed: u64,
}

impl DetectorSpec {
    /// Desk-scale defaults.
    pub fn defaults(variant: Variant, seed: u64) -> Self {
        let layers = match variant {
            Variant::LstmP => 2,
            Variant::TcnS2sP => 3,
            Variant::TcnS2sAe | Variant::BeatGan => 2,
            _ => 1,
        };
        DetectorSpec {
            variant,
            window: WindowSpec {
                width: 32,
                stride: 1,
            },
            hidden_size: 32,
            latent_dim: 8,
            layers,
            epochs: 50,
            learning_rate: 1e-3,
            horizon: 1,
            mc_samples: 16,
            usad_alpha: 0.5,
            usad_beta: 0.5,
            gan_lambda: 1.0,
            mask_rate: 0.1,
            noise_std: 0.1,
            latent_pool: PoolKind::Max,
            batch_size: 32,
            seed,
        }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        if self.window.width == 0 || self.window.stride == 0 {
            return Err(Error::contract("window width and stride must be >= 1"));
        }
        if self.epochs == 0 && self.variant != Variant::UntrainedLstmAe {
            return Err(Error::contract("epochs must be >= 1"));
        }
        if self.batch_size == 0 || self.hidden_size == 0 || self.latent_dim == 0 || self.layers == 0
        {
            return Err(Error::contract(
                "hidden_size, latent_dim, layers, batch_size must be >= 1",
            ));
        }
        if self.variant.is_forecasting() && self.horizon == 0 {
            return Err(Error::contract(
                "prediction horizon must be >= 1 for forecasting variants",
            ));
        }
        let autoencoding = self.variant.is_reconstruction()
            || matches!(
                self.variant,
                Variant::LstmVae | Variant::DonutMv | Variant::LstmDvae | Variant::BeatGan
            );
        if autoencoding && self.latent_dim >= self.window.width * dims {
            return Err(Error::contract(format!(
                "latent_dim {} must be smaller than window·D = {} for autoencoding variants",
                self.latent_dim,
                self.window.width * dims
            )));
        }
        if self.variant == Variant::TcnS2sP && self.layers < 3 {
            return Err(Error::contract(
                "tcn_s2s_p needs at least 3 dilated layers",
            ));
        }
        if matches!(self.variant, Variant::TcnP) && self.window.width % 4 != 0 {
            return Err(Error::contract(
                "tcn_p needs a window width divisible by 4 (two pooling stages)",
            ));
        }
        if self.mc_samples == 0 {
            return Err(Error::contract("mc_samples must be >= 1"));
        }
        Ok(())
    }
}

/// Per-time-step anomaly scores aligned with the scored series.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub scores: Vec<f64>,
    /// Number of leading steps filled by the warm-up rule rather than
    /// computed from a full window.
    pub warmup_len: usize,
}

/// Trained parameters plus score calibration and normalization reference.
#[derive(Debug, Clone)]
pub struct FittedDetector {
    pub spec: DetectorSpec,
    pub params: crate::numkit::ParamStore,
    pub calibration: Option<GaussianModel>,
    pub norm: NormStats,
    /// Mean training loss per epoch (empty for the untrained baseline and
    /// for models restored from disk).
    pub epoch_losses: Vec<f64>,
}

/// Trains a detector on the fault-free split. Variants that calibrate a
/// Gaussian additionally require a non-empty validation set.
pub fn fit(spec: &DetectorSpec, data: &DatasetSplit) -> Result<FittedDetector> {
    if data.train.is_empty() {
        return Err(Error::contract("fit: training split is empty"));
    }
    if spec.variant.needs_validation() && data.validation.is_empty() {
        return Err(Error::contract(format!(
            "fit: {} calibrates on a validation set, but the validation split is empty",
            spec.variant.name()
        )));
    }
    let dims = data.train[0].series.dims();
    spec.validate(dims)?;

    let norm = fit_norm_stats(&data.train, crate::dataio::STD_FLOOR)?;
    let train_series: Vec<SeriesMatrix> = data
        .train
        .iter()
        .map(|r| apply_norm(&r.series, &norm))
        .collect::<Result<_>>()?;

    let (params, epoch_losses) = match spec.variant {
        Variant::DenseAe => dense::train_dense_ae(spec, dims, &train_series)?,
        Variant::Usad => dense::train_usad(spec, dims, &train_series)?,
        Variant::DonutMv => dense::train_donut(spec, dims, &train_series)?,
        Variant::LstmAe => lstm::train_lstm_ae(spec, dims, &train_series, false)?,
        Variant::UntrainedLstmAe => lstm::train_lstm_ae(spec, dims, &train_series, true)?,
        Variant::LstmMaxAe => lstm::train_lstm_max_ae(spec, dims, &train_series)?,
        Variant::LstmP => lstm::train_lstm_p(spec, dims, &train_series)?,
        Variant::TcnS2sAe => tcn::train_tcn_s2s_ae(spec, dims, &train_series)?,
        Variant::TcnP => tcn::train_tcn_p(spec, dims, &train_series)?,
        Variant::TcnS2sP => tcn::train_tcn_s2s_p(spec, dims, &train_series)?,
        Variant::BeatGan => tcn::train_beatgan(spec, dims, &train_series)?,
        Variant::LstmVae => vae::train_lstm_vae(spec, dims, &train_series, false)?,
        Variant::LstmDvae => vae::train_lstm_vae(spec, dims, &train_series, true)?,
    };

    let calibration = if spec.variant.needs_validation() {
        let val_series: Vec<SeriesMatrix> = data
            .validation
            .iter()
            .map(|r| apply_norm(&r.series, &norm))
            .collect::<Result<_>>()?;
        let mut errors = Vec::new();
        for s in &val_series {
            errors.extend(calibration_errors(spec, &params, s)?);
        }
        Some(fit_gaussian(&errors)?)
    } else {
        None
    };

    Ok(FittedDetector {
        spec: spec.clone(),
        params,
        calibration,
        norm,
        epoch_losses,
    })
}

fn calibration_errors(
    spec: &DetectorSpec,
    params: &crate::numkit::ParamStore,
    series: &SeriesMatrix,
) -> Result<Vec<Vec<f64>>> {
    match spec.variant {
        Variant::TcnS2sAe => tcn::tcn_s2s_ae_errors(spec, params, series),
        Variant::TcnS2sP => tcn::tcn_s2s_p_errors(spec, params, series).map(|v| {
            v.into_iter().map(|(_, e)| e).collect()
        }),
        Variant::LstmP => lstm::lstm_p_errors(spec, params, series).map(|v| {
            v.into_iter().map(|(_, e)| e).collect()
        }),
        _ => Err(Error::contract("variant has no calibration errors")),
    }
}

/// Scores a series with a fitted detector. The series feature count must
/// match the training data.
pub fn score(model: &FittedDetector, series: &SeriesMatrix) -> Result<ScoreSeries> {
    if series.dims() != model.norm.mean.len() {
        return Err(Error::contract(format!(
            "score: series has {} features, detector was trained on {}",
            series.dims(),
            model.norm.mean.len()
        )));
    }
    let spec = &model.spec;
    let needed = scoring_span(spec);
    if series.len() < needed {
        return Err(Error::contract(format!(
            "score: series length {} shorter than required span {needed}",
            series.len()
        )));
    }
    let normed = apply_norm(series, &model.norm)?;

    let scored: Vec<(usize, f64)> = match spec.variant {
        Variant::DenseAe => dense::score_dense_ae(model, &normed)?,
        Variant::Usad => dense::score_usad(model, &normed)?,
        Variant::DonutMv => dense::score_donut(model, &normed)?,
        Variant::LstmAe | Variant::UntrainedLstmAe => lstm::score_lstm_ae(model, &normed)?,
        Variant::LstmMaxAe => lstm::score_lstm_max_ae(model, &normed)?,
        Variant::LstmP => lstm::score_lstm_p(model, &normed)?,
        Variant::TcnS2sAe => tcn::score_tcn_s2s_ae(model, &normed)?,
        Variant::TcnP => tcn::score_tcn_p(model, &normed)?,
        Variant::TcnS2sP => tcn::score_tcn_s2s_p(model, &normed)?,
        Variant::BeatGan => tcn::score_beatgan(model, &normed)?,
        Variant::LstmVae | Variant::LstmDvae => vae::score_lstm_vae(model, &normed)?,
    };

    let scores = aggregate_overlaps(&scored, series.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("score series"));
    }
    let warmup_len = scored.iter().map(|(t, _)| *t).min().unwrap_or(0);
    Ok(ScoreSeries { scores, warmup_len })
}

/// Minimum series length a variant can score.
fn scoring_span(spec: &DetectorSpec) -> usize {
    match spec.variant {
        Variant::LstmP | Variant::TcnP => spec.window.width + spec.horizon,
        Variant::TcnS2sP => spec.window.width + 1,
        _ => spec.window.width,
    }
}

/// Scores several series; with the `parallel` feature the runs are scored on
/// the rayon pool, results in input order either way.
pub fn score_all(model: &FittedDetector, series: &[SeriesMatrix]) -> Result<Vec<ScoreSeries>> {
    let results = crate::exec::map_vec(series.iter().collect::<Vec<_>>(), |s| score(model, s));
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in ALL_VARIANTS {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("nope").is_err());
    }

    #[test]
    fn defaults_validate_against_desk_dims() {
        for v in ALL_VARIANTS {
            let spec = DetectorSpec::defaults(v, 0);
            spec.validate(8).unwrap();
        }
    }

    #[test]
    fn compression_invariant_enforced() {
        let mut spec = DetectorSpec::defaults(Variant::DenseAe, 0);
        spec.latent_dim = 64;
        spec.window.width = 8;
        assert!(spec.validate(8).is_err()); // 64 >= 8*8
        spec.latent_dim = 63;
        assert!(spec.validate(8).is_ok());
    }

    #[test]
    fn forecasting_horizon_required() {
        let mut spec = DetectorSpec::defaults(Variant::LstmP, 0);
        spec.horizon = 0;
        assert!(spec.validate(8).is_err());
    }
}
