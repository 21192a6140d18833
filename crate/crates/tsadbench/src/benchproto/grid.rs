//! Time-budgeted grid search over detector hyperparameters with
//! fold-based selection and neighbor-excluded evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::folds::{eval_folds_for, FoldPlan};
use crate::dataio::DatasetSplit;
use crate::detectors::{fit, score_all, DetectorSpec, PoolKind, ScoreSeries};
use crate::evalkit::{evaluate_concat, MetricReport};
use crate::{Error, Result};

/// Per-hyperparameter candidate lists expanded into a cartesian grid in
/// declaration order, plus the per-method wall-clock budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub budget_seconds: f64,
    pub params: Vec<(String, Vec<String>)>,
}

impl GridSpec {
    pub fn single(budget_seconds: f64) -> Self {
        GridSpec {
            budget_seconds,
            params: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.budget_seconds > 0.0) {
            return Err(Error::config("grid budget_seconds must be positive"));
        }
        if self.params.iter().any(|(_, vs)| vs.is_empty()) {
            return Err(Error::config("grid parameter with no candidate values"));
        }
        Ok(())
    }
}

/// Applies one hyperparameter override to a spec.
pub fn apply_param(spec: &mut DetectorSpec, key: &str, value: &str) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse()
            .map_err(|e| Error::config(format!("bad value `{value}` for `{key}`: {e}")))
    }
    match key {
        "window" => spec.window.width = parse(key, value)?,
        "stride" => spec.window.stride = parse(key, value)?,
        "hidden_size" => spec.hidden_size = parse(key, value)?,
        "latent_dim" => spec.latent_dim = parse(key, value)?,
        "layers" => spec.layers = parse(key, value)?,
        "epochs" => spec.epochs = parse(key, value)?,
        "learning_rate" => spec.learning_rate = parse(key, value)?,
        "horizon" => spec.horizon = parse(key, value)?,
        "mc_samples" => spec.mc_samples = parse(key, value)?,
        "usad_alpha" => spec.usad_alpha = parse(key, value)?,
        "usad_beta" => spec.usad_beta = parse(key, value)?,
        "gan_lambda" => spec.gan_lambda = parse(key, value)?,
        "mask_rate" => spec.mask_rate = parse(key, value)?,
        "noise_std" => spec.noise_std = parse(key, value)?,
        "batch_size" => spec.batch_size = parse(key, value)?,
        "latent_pool" => {
            spec.latent_pool = match value {
                "max" => PoolKind::Max,
                "mean" => PoolKind::Mean,
                other => {
                    return Err(Error::config(format!(
                        "latent_pool must be max or mean, got `{other}`"
                    )))
                }
            }
        }
        other => return Err(Error::config(format!("unknown grid parameter `{other}`"))),
    }
    Ok(())
}

/// Cartesian expansion of the grid over a base spec, in declaration order.
pub fn expand_grid(base: &DetectorSpec, grid: &GridSpec) -> Result<Vec<DetectorSpec>> {
    grid.validate()?;
    let mut configs = vec![base.clone()];
    for (key, values) in &grid.params {
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for config in &configs {
            for value in values {
                let mut c = config.clone();
                apply_param(&mut c, key, value)?;
                next.push(c);
            }
        }
        configs = next;
    }
    Ok(configs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub selected_config: usize,
    pub selected: DetectorSpec,
    pub best_f1: f64,
    pub auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub method: String,
    pub folds: Vec<FoldOutcome>,
    pub mean_best_f1: f64,
    pub mean_auprc: f64,
    pub configs_completed: usize,
    pub configs_total: usize,
    /// True when the budget cut the grid short.
    pub partial: bool,
    /// Human-readable notes: budget truncation, failed configs.
    pub warnings: Vec<String>,
}

impl BenchmarkResult {
    pub fn recompute_means(&mut self) {
        let n = self.folds.len().max(1) as f64;
        self.mean_best_f1 = self.folds.iter().map(|f| f.best_f1).sum::<f64>() / n;
        self.mean_auprc = self.folds.iter().map(|f| f.auprc).sum::<f64>() / n;
    }
}

struct ConfigRun {
    index: usize,
    scores: Vec<ScoreSeries>,
}

fn fit_and_score(
    config: &DetectorSpec,
    data: &DatasetSplit,
    test_series: &[crate::dataio::SeriesMatrix],
) -> Result<Vec<ScoreSeries>> {
    let model = fit(config, data)?;
    score_all(&model, test_series)
}

/// Fits every config within the wall-clock budget (a started config is never
/// aborted, at least one always completes), selects per fold by best F1,
/// and evaluates the selection on the neighbor-excluded folds,
/// micro-aggregated over their runs.
pub fn grid_search(
    base: &DetectorSpec,
    grid: &GridSpec,
    data: &DatasetSplit,
    plan: &FoldPlan,
) -> Result<BenchmarkResult> {
    let configs = expand_grid(base, grid)?;
    let k = plan.folds.len();
    for i in 0..k {
        if eval_folds_for(i, k, plan.exclusion_radius).is_empty() {
            return Err(Error::contract(format!(
                "fold {i} has no evaluation folds under exclusion radius {}",
                plan.exclusion_radius
            )));
        }
    }
    let n_runs: usize = plan.folds.iter().map(|f| f.len()).sum();
    if n_runs != data.test.len() {
        return Err(Error::contract(format!(
            "fold plan covers {n_runs} runs but the test set has {}",
            data.test.len()
        )));
    }
    let labels: Vec<&[u8]> = data
        .test
        .iter()
        .map(|r| {
            r.series
                .labels
                .as_deref()
                .ok_or_else(|| Error::data(format!("test run {} has no labels", r.run_id)))
        })
        .collect::<Result<_>>()?;
    let test_series: Vec<crate::dataio::SeriesMatrix> =
        data.test.iter().map(|r| r.series.clone()).collect();

    let start = Instant::now();
    let mut warnings = Vec::new();
    let mut completed: Vec<ConfigRun> = Vec::new();
    let mut next = 0;
    let mut truncated = false;
    while next < configs.len() {
        if !completed.is_empty() && start.elapsed().as_secs_f64() > grid.budget_seconds {
            truncated = true;
            break;
        }
        // the first wave is a single config so the at-least-one floor does
        // not depend on the worker count
        let wave_size = if next == 0 {
            1
        } else {
            wave_width().min(configs.len() - next)
        };
        let wave: Vec<(usize, &DetectorSpec)> = (next..next + wave_size)
            .map(|i| (i, &configs[i]))
            .collect();
        let results = crate::exec::map_vec(wave, |(index, config)| {
            (index, fit_and_score(config, data, &test_series))
        });
        for (index, result) in results {
            match result {
                Ok(scores) => completed.push(ConfigRun { index, scores }),
                Err(e) => warnings.push(format!("config {index} failed: {e}")),
            }
        }
        next += wave_size;
    }
    if truncated {
        warnings.push(format!(
            "budget of {}s exhausted after {} of {} configs",
            grid.budget_seconds,
            next,
            configs.len()
        ));
    }
    if completed.is_empty() {
        return Err(Error::contract(
            "no grid config completed successfully".to_string(),
        ));
    }

    let micro = |run_ids: &[usize], scores: &[ScoreSeries]| -> Result<MetricReport> {
        let pairs: Vec<(&[f64], &[u8])> = run_ids
            .iter()
            .map(|&ri| (scores[ri].scores.as_slice(), labels[ri]))
            .collect();
        evaluate_concat(&pairs)
    };

    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let mut best: Option<(usize, f64, &ConfigRun)> = None;
        for run in &completed {
            let report = micro(&plan.folds[i], &run.scores)?;
            let better = match &best {
                None => true,
                Some((_, f1, _)) => report.best_f1 > *f1,
            };
            if better {
                best = Some((run.index, report.best_f1, run));
            }
        }
        let (selected_config, _, run) = best.expect("at least one config completed");
        let eval_runs: Vec<usize> = eval_folds_for(i, k, plan.exclusion_radius)
            .into_iter()
            .flat_map(|j| plan.folds[j].iter().copied())
            .collect();
        let report = micro(&eval_runs, &run.scores)?;
        folds.push(FoldOutcome {
            fold: i,
            selected_config,
            selected: configs[selected_config].clone(),
            best_f1: report.best_f1,
            auprc: report.auprc,
        });
    }

    let mut result = BenchmarkResult {
        method: base.variant.name().to_string(),
        folds,
        mean_best_f1: 0.0,
        mean_auprc: 0.0,
        configs_completed: completed.len(),
        configs_total: configs.len(),
        partial: truncated,
        warnings,
    };
    result.recompute_means();
    Ok(result)
}

#[cfg(feature = "parallel")]
fn wave_width() -> usize {
    rayon::current_num_threads().max(1)
}

#[cfg(not(feature = "parallel"))]
fn wave_width() -> usize {
    1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{split_train_validation, synth_generate, FaultKind, SynthConfig};
    use crate::detectors::Variant;

    fn data() -> DatasetSplit {
        let clean = synth_generate(&SynthConfig {
            runs: 4,
            len: 80,
            dims: 3,
            fault_kind: FaultKind::None,
            fault_onset: 0,
            fault_magnitude: 0.0,
            seed: 31,
        })
        .unwrap();
        let faulty = synth_generate(&SynthConfig {
            runs: 10,
            len: 80,
            dims: 3,
            fault_kind: FaultKind::Step,
            fault_onset: 40,
            fault_magnitude: 6.0,
            seed: 31,
        })
        .unwrap();
        split_train_validation(clean, faulty).unwrap()
    }

    fn base() -> DetectorSpec {
        let mut spec = DetectorSpec::defaults(Variant::DenseAe, 3);
        spec.window.width = 16;
        spec.window.stride = 2;
        spec.hidden_size = 8;
        spec.latent_dim = 3;
        spec.epochs = 4;
        spec
    }

    #[test]
    fn expansion_is_cartesian_in_declaration_order() {
        let grid = GridSpec {
            budget_seconds: 60.0,
            params: vec![
                ("hidden_size".into(), vec!["4".into(), "8".into()]),
                ("epochs".into(), vec!["2".into(), "3".into(), "4".into()]),
            ],
        };
        let configs = expand_grid(&base(), &grid).unwrap();
        assert_eq!(configs.len(), 6);
        assert_eq!(configs[0].hidden_size, 4);
        assert_eq!(configs[0].epochs, 2);
        assert_eq!(configs[1].epochs, 3);
        assert_eq!(configs[3].hidden_size, 8);
    }

    #[test]
    fn unknown_parameter_is_config_error() {
        let grid = GridSpec {
            budget_seconds: 60.0,
            params: vec![("nonsense".into(), vec!["1".into()])],
        };
        assert!(matches!(
            expand_grid(&base(), &grid),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_config_selected_on_every_fold() {
        let data = data();
        let plan = super::super::make_folds(data.test.len(), 5, 1).unwrap();
        let result = grid_search(&base(), &GridSpec::single(120.0), &data, &plan).unwrap();
        assert_eq!(result.folds.len(), 5);
        assert!(result.folds.iter().all(|f| f.selected_config == 0));
        assert!(!result.partial);
        assert_eq!(result.configs_completed, 1);
        let mean: f64 = result.folds.iter().map(|f| f.best_f1).sum::<f64>() / 5.0;
        assert!((result.mean_best_f1 - mean).abs() < 1e-15);
    }

    #[test]
    fn dominant_config_wins_all_folds() {
        let data = data();
        let plan = super::super::make_folds(data.test.len(), 5, 1).unwrap();
        // epochs 0 is invalid, so dominate via an untrainable-vs-trained pair:
        // one epoch vs a properly trained config
        let grid = GridSpec {
            budget_seconds: 300.0,
            params: vec![("epochs".into(), vec!["1".into(), "6".into()])],
        };
        let result = grid_search(&base(), &grid, &data, &plan).unwrap();
        assert_eq!(result.configs_completed, 2);
        // the better-trained config should win on every fold for this
        // clearly separable data; at minimum the selection must be identical
        // and deterministic across folds
        let selected: Vec<usize> = result.folds.iter().map(|f| f.selected_config).collect();
        let rerun = grid_search(&base(), &grid, &data, &plan).unwrap();
        let selected2: Vec<usize> = rerun.folds.iter().map(|f| f.selected_config).collect();
        assert_eq!(selected, selected2);
        assert_eq!(result, rerun);
    }

    #[test]
    fn tiny_budget_still_completes_one_config() {
        let data = data();
        let plan = super::super::make_folds(data.test.len(), 5, 1).unwrap();
        let grid = GridSpec {
            budget_seconds: 1e-9,
            params: vec![("hidden_size".into(), vec!["4".into(), "8".into(), "12".into()])],
        };
        let result = grid_search(&base(), &grid, &data, &plan).unwrap();
        assert!(result.configs_completed >= 1);
        assert!(result.partial);
        assert!(result.warnings.iter().any(|w| w.contains("budget")));
    }

    #[test]
    fn unlabeled_test_runs_rejected() {
        let mut data = data();
        data.test = synth_generate(&SynthConfig {
            runs: 5,
            len: 80,
            dims: 3,
            fault_kind: FaultKind::None,
            fault_onset: 0,
            fault_magnitude: 0.0,
            seed: 77,
        })
        .unwrap();
        let plan = super::super::make_folds(5, 5, 1).unwrap();
        assert!(grid_search(&base(), &GridSpec::single(60.0), &data, &plan).is_err());
    }
}
