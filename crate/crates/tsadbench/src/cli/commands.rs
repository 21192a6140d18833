//! Command implementations. Flags override config-file values; every source
//! of randomness flows from the single master seed.

use std::path::{Path, PathBuf};

use super::config::ConfigFile;
use crate::benchproto::{
    grid_search, make_folds, persist_results, rank_methods, write_ranking_csv, BenchmarkResult,
    GridSpec,
};
use crate::dataio::{
    load_runs_csv, split_train_validation, synth_generate, write_runs_csv, CsvSchema,
    DatasetSplit, FaultKind, RunRecord, SynthConfig,
};
use crate::detectors::{fit, load_model, save_model, score, DetectorSpec, Variant, ALL_VARIANTS};
use crate::evalkit::{auprc, best_f1, pr_curve, MetricReport};
use crate::{Error, Result};

/// Synthetic dataset shape: fault-free training runs plus labeled fault runs
/// of each requested kind.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub train_runs: usize,
    pub test_runs_per_fault: usize,
    pub len: usize,
    pub dims: usize,
    pub fault_kinds: Vec<FaultKind>,
    pub fault_onset: usize,
    pub fault_magnitude: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            train_runs: 8,
            test_runs_per_fault: 5,
            len: 400,
            dims: 8,
            fault_kinds: vec![
                FaultKind::Step,
                FaultKind::Drift,
                FaultKind::Stuck,
                FaultKind::Noise,
            ],
            fault_onset: 200,
            fault_magnitude: 5.0,
        }
    }
}

impl SynthOptions {
    fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let mut o = SynthOptions::default();
        if let Some(v) = cfg.get_parsed("synth", "train_runs")? {
            o.train_runs = v;
        }
        if let Some(v) = cfg.get_parsed("synth", "test_runs_per_fault")? {
            o.test_runs_per_fault = v;
        }
        if let Some(v) = cfg.get_parsed("synth", "len")? {
            o.len = v;
        }
        if let Some(v) = cfg.get_parsed("synth", "dims")? {
            o.dims = v;
        }
        if let Some(v) = cfg.get_parsed("synth", "fault_onset")? {
            o.fault_onset = v;
        }
        if let Some(v) = cfg.get_parsed("synth", "fault_magnitude")? {
            o.fault_magnitude = v;
        }
        if let Some(kinds) = cfg.get_list("synth", "fault_kinds") {
            o.fault_kinds = kinds
                .iter()
                .map(|k| FaultKind::parse(k))
                .collect::<Result<_>>()?;
        }
        Ok(o)
    }

    /// Fault-free training runs and labeled test runs.
    pub fn generate(&self, seed: u64) -> Result<(Vec<RunRecord>, Vec<RunRecord>)> {
        let train = synth_generate(&SynthConfig {
            runs: self.train_runs,
            len: self.len,
            dims: self.dims,
            fault_kind: FaultKind::None,
            fault_onset: 0,
            fault_magnitude: 0.0,
            seed,
        })?;
        let mut test = Vec::new();
        for kind in &self.fault_kinds {
            if *kind == FaultKind::None {
                return Err(Error::config(
                    "fault_kinds for the test set must not include `none`",
                ));
            }
            test.extend(synth_generate(&SynthConfig {
                runs: self.test_runs_per_fault,
                len: self.len,
                dims: self.dims,
                fault_kind: *kind,
                fault_onset: self.fault_onset,
                fault_magnitude: self.fault_magnitude,
                seed,
            })?);
        }
        Ok((train, test))
    }
}

/// Where the benchmark data comes from: CSV files or the seeded generator.
#[derive(Debug, Clone)]
pub enum DatasetOptions {
    Csv {
        train: PathBuf,
        test: PathBuf,
        schema: CsvSchema,
    },
    Synthetic(SynthOptions),
}

impl DatasetOptions {
    fn from_config(cfg: &ConfigFile) -> Result<Self> {
        match (cfg.get("dataset", "train"), cfg.get("dataset", "test")) {
            (Some(train), Some(test)) => {
                let schema = CsvSchema {
                    dt_minutes: cfg.get_parsed("dataset", "dt_minutes")?.unwrap_or(3.0),
                    fault_onset: cfg.get_parsed("dataset", "fault_onset")?,
                };
                Ok(DatasetOptions::Csv {
                    train: PathBuf::from(train),
                    test: PathBuf::from(test),
                    schema,
                })
            }
            (None, None) => Ok(DatasetOptions::Synthetic(SynthOptions::from_config(cfg)?)),
            _ => Err(Error::config(
                "[dataset] must set both `train` and `test`, or neither",
            )),
        }
    }

    pub fn load(&self, seed: u64) -> Result<DatasetSplit> {
        let (train, test) = match self {
            DatasetOptions::Csv { train, test, schema } => {
                let train_runs = load_runs_csv(train, schema)?;
                if train_runs.iter().any(|r| r.fault_id != 0) {
                    return Err(Error::data(
                        "training file contains fault runs; train on fault-free data only",
                    ));
                }
                (train_runs, load_runs_csv(test, schema)?)
            }
            DatasetOptions::Synthetic(synth) => synth.generate(seed)?,
        };
        split_train_validation(train, test)
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &ConfigFile) -> Result<u64> {
    flag.or(cfg.get_parsed("benchmark", "seed")?)
        .ok_or_else(|| Error::config("a seed is required (--seed or [benchmark] seed)"))
}

// ── generate ────────────────────────────────────────────────────────

pub fn cmd_generate(synth: &SynthOptions, seed: u64, out: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out)?;
    let (train, test) = synth.generate(seed)?;
    let train_path = out.join("train.csv");
    let test_path = out.join("test.csv");
    write_runs_csv(&train_path, &train)?;
    write_runs_csv(&test_path, &test)?;
    println!(
        "generated {} fault-free runs -> {}",
        train.len(),
        train_path.display()
    );
    let mut by_fault: Vec<(u8, usize)> = Vec::new();
    for r in &test {
        match by_fault.iter_mut().find(|(f, _)| *f == r.fault_id) {
            Some((_, n)) => *n += 1,
            None => by_fault.push((r.fault_id, 1)),
        }
    }
    for (fault, n) in &by_fault {
        println!("  fault {fault}: {n} runs of {} steps", synth.len);
    }
    println!("wrote test runs -> {}", test_path.display());
    Ok((train_path, test_path))
}

pub(super) fn run_generate(config: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<i32> {
    let cfg = load_config(config.as_deref())?;
    let synth = SynthOptions::from_config(&cfg)?;
    let seed = resolve_seed(seed, &cfg)?;
    cmd_generate(&synth, seed, out)?;
    Ok(0)
}

// ── train ───────────────────────────────────────────────────────────

fn base_spec(cfg: &ConfigFile, variant: Variant, seed: u64) -> Result<DetectorSpec> {
    let mut spec = DetectorSpec::defaults(variant, seed);
    for key in cfg.section_keys("detectors") {
        if key == "list" {
            continue;
        }
        let value = cfg.get("detectors", &key).expect("listed key");
        crate::benchproto::apply_param(&mut spec, &key, value)?;
    }
    Ok(spec)
}

pub fn cmd_train(spec: &DetectorSpec, data: &DatasetSplit, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let model = fit(spec, data)?;
    let path = out.join(format!("{}.model", spec.variant.name()));
    save_model(&model, &path)?;
    match model.epoch_losses.last() {
        Some(l) => println!(
            "trained {} for {} epochs, final loss {l:.6} -> {}",
            spec.variant.name(),
            model.epoch_losses.len(),
            path.display()
        ),
        None => println!(
            "initialized {} (no training) -> {}",
            spec.variant.name(),
            path.display()
        ),
    }
    Ok(path)
}

pub(super) fn run_train(
    config: Option<PathBuf>,
    detector: &str,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32> {
    let cfg = load_config(config.as_deref())?;
    let seed = resolve_seed(seed, &cfg)?;
    let variant = Variant::parse(detector)?;
    let spec = base_spec(&cfg, variant, seed)?;
    let data = DatasetOptions::from_config(&cfg)?.load(seed)?;
    cmd_train(&spec, &data, out)?;
    Ok(0)
}

// ── score ───────────────────────────────────────────────────────────

pub fn cmd_score(model_path: &Path, data: &Path, out: &Path) -> Result<PathBuf> {
    let model = load_model(model_path)?;
    let runs = load_runs_csv(data, &CsvSchema::default())?;
    if runs.len() != 1 {
        return Err(Error::data(format!(
            "score expects a single-run series file, found {} runs",
            runs.len()
        )));
    }
    let scores = score(&model, &runs[0].series)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("scores.csv");
    let mut text = String::from("timestep,score\n");
    for (t, s) in scores.scores.iter().enumerate() {
        text.push_str(&format!("{t},{s}\n"));
    }
    std::fs::write(&path, text)?;
    println!(
        "scored {} steps (warm-up {}) -> {}",
        scores.scores.len(),
        scores.warmup_len,
        path.display()
    );
    Ok(path)
}

// ── evaluate ────────────────────────────────────────────────────────

fn read_scores_csv(path: &Path) -> Result<Vec<f64>> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "timestep,score" => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `timestep,score` header, got `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty score file".to_string(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (_, s) = line.split_once(',').ok_or(Error::Parse {
            line: idx + 1,
            msg: format!("expected `timestep,score`, got `{line}`"),
        })?;
        out.push(s.trim().parse().map_err(|e| Error::Parse {
            line: idx + 1,
            msg: format!("bad score: {e}"),
        })?);
    }
    Ok(out)
}

/// Evaluates a score file against the labels of a dataset CSV (runs
/// concatenated in file order). Prints the JSON report; optionally writes
/// report.json and pr_curve.csv.
pub fn cmd_evaluate(scores_path: &Path, labels_path: &Path, out: Option<&Path>) -> Result<MetricReport> {
    let scores = read_scores_csv(scores_path)?;
    let runs = load_runs_csv(labels_path, &CsvSchema::default())?;
    let mut labels = Vec::new();
    for r in &runs {
        match &r.series.labels {
            Some(l) => labels.extend_from_slice(l),
            None => labels.extend(std::iter::repeat(0).take(r.series.len())),
        }
    }
    if labels.len() != scores.len() {
        return Err(Error::data(format!(
            "scores ({}) and labels ({}) differ in length",
            scores.len(),
            labels.len()
        )));
    }
    let (threshold, f1) = best_f1(&scores, &labels)?;
    let curve = pr_curve(&scores, &labels)?;
    let report = MetricReport {
        best_f1: f1,
        best_threshold: threshold,
        auprc: auprc(&curve),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::contract(format!("report serialization: {e}")))?;
    println!("{json}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), format!("{json}\n"))?;
        let mut pr = String::from("recall,precision,threshold\n");
        for p in &curve.points {
            pr.push_str(&format!("{},{},{}\n", p.recall, p.precision, p.threshold));
        }
        std::fs::write(dir.join("pr_curve.csv"), pr)?;
    }
    Ok(report)
}

// ── benchmark ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub dataset: DatasetOptions,
    pub detectors: Vec<Variant>,
    pub grid: Vec<(String, Vec<String>)>,
    pub budget_seconds: f64,
    pub folds: usize,
    pub exclusion_radius: usize,
    pub seed: u64,
}

impl BenchmarkOptions {
    pub fn from_sources(
        cfg: &ConfigFile,
        detectors_flag: Option<&str>,
        budget_flag: Option<f64>,
        seed_flag: Option<u64>,
    ) -> Result<Self> {
        let seed = resolve_seed(seed_flag, cfg)?;
        let names: Vec<String> = match detectors_flag {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
            None => cfg
                .get_list("detectors", "list")
                .unwrap_or_else(|| ALL_VARIANTS.iter().map(|v| v.name().to_string()).collect()),
        };
        let detectors: Vec<Variant> = names
            .iter()
            .filter(|n| !n.is_empty())
            .map(|n| Variant::parse(n))
            .collect::<Result<_>>()?;
        if detectors.is_empty() {
            return Err(Error::config("no detectors selected"));
        }
        let grid: Vec<(String, Vec<String>)> = cfg
            .section_keys("grid")
            .into_iter()
            .map(|key| {
                let values = cfg.get_list("grid", &key).unwrap_or_default();
                (key, values)
            })
            .collect();
        Ok(BenchmarkOptions {
            dataset: DatasetOptions::from_config(cfg)?,
            detectors,
            grid,
            budget_seconds: budget_flag
                .or(cfg.get_parsed("benchmark", "budget_seconds")?)
                .unwrap_or(60.0),
            folds: cfg.get_parsed("benchmark", "folds")?.unwrap_or(5),
            exclusion_radius: cfg.get_parsed("benchmark", "exclusion_radius")?.unwrap_or(1),
            seed,
        })
    }
}

/// Runs the full protocol. Per-method failures are recorded and the run
/// continues; the exit code is 3 when any method failed.
pub fn cmd_benchmark(options: &BenchmarkOptions, cfg: &ConfigFile, out: &Path) -> Result<i32> {
    std::fs::create_dir_all(out)?;
    let data = options.dataset.load(options.seed)?;
    let plan = make_folds(data.test.len(), options.folds, options.exclusion_radius)?;
    println!(
        "benchmark: {} detectors, {} test runs in {} folds, budget {}s/method, seed {}",
        options.detectors.len(),
        data.test.len(),
        options.folds,
        options.budget_seconds,
        options.seed
    );

    let grid = GridSpec {
        budget_seconds: options.budget_seconds,
        params: options.grid.clone(),
    };
    let mut results: Vec<BenchmarkResult> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    for variant in &options.detectors {
        let base = base_spec(cfg, *variant, options.seed)?;
        match grid_search(&base, &grid, &data, &plan) {
            Ok(result) => {
                println!(
                    "  {:<18} F1 {:.4}  AUPRC {:.4}  ({}/{} configs{})",
                    result.method,
                    result.mean_best_f1,
                    result.mean_auprc,
                    result.configs_completed,
                    result.configs_total,
                    if result.partial { ", budget hit" } else { "" }
                );
                for w in &result.warnings {
                    eprintln!("  warning [{}]: {w}", result.method);
                }
                results.push(result);
            }
            Err(e) => {
                eprintln!("  {:<18} FAILED: {e}", variant.name());
                failures.push((variant.name().to_string(), e.to_string()));
            }
        }
    }
    if results.is_empty() {
        return Err(Error::data("every method failed; nothing to rank"));
    }

    let results_path = out.join("results.jsonl");
    persist_results(&results, &results_path)?;

    let rows: Vec<(String, String, f64, f64)> = results
        .iter()
        .map(|r| {
            let variant = Variant::parse(&r.method).expect("method names come from the registry");
            (
                r.method.clone(),
                variant.method_type().to_string(),
                r.mean_best_f1,
                r.mean_auprc,
            )
        })
        .collect();
    let ranking = rank_methods(&rows);
    let ranking_path = out.join("ranking.csv");
    write_ranking_csv(&ranking, &ranking_path)?;

    println!("results -> {}", results_path.display());
    println!("ranking -> {}", ranking_path.display());
    if !failures.is_empty() {
        let failures_path = out.join("failures.txt");
        let mut text = String::new();
        for (m, e) in &failures {
            text.push_str(&format!("{m}: {e}\n"));
        }
        std::fs::write(&failures_path, text)?;
        eprintln!(
            "{} of {} methods failed (see {})",
            failures.len(),
            options.detectors.len(),
            failures_path.display()
        );
        return Ok(3);
    }
    Ok(0)
}

pub(super) fn run_benchmark(
    config: Option<PathBuf>,
    detectors: Option<String>,
    budget_seconds: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32> {
    let cfg = load_config(config.as_deref())?;
    let options =
        BenchmarkOptions::from_sources(&cfg, detectors.as_deref(), budget_seconds, seed)?;
    cmd_benchmark(&options, &cfg, out)
}
