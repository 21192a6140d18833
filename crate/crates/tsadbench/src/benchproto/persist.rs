//! Results and ranking files.
//!
//! Results are line-delimited: a header line, then one JSON object per
//! (method, fold). The ranking table is CSV in the fixed column order
//! Method, Method Type, F1-Score, F1-Score Ranking, AUPRC, AUPRC Ranking,
//! Total Ranking.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{BenchmarkResult, FoldOutcome};
use super::ranking::RankingRow;
use crate::{Error, Result};

const RESULTS_HEADER: &str = "#tsadbench-results v1";

#[derive(Debug, Serialize, Deserialize)]
struct FoldRecord {
    method: String,
    fold: usize,
    selected_config: usize,
    selected: crate::detectors::DetectorSpec,
    best_f1: f64,
    auprc: f64,
    configs_completed: usize,
    configs_total: usize,
    partial: bool,
    warnings: Vec<String>,
}

pub fn persist_results(results: &[BenchmarkResult], path: &Path) -> Result<()> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        for f in &r.folds {
            let record = FoldRecord {
                method: r.method.clone(),
                fold: f.fold,
                selected_config: f.selected_config,
                selected: f.selected.clone(),
                best_f1: f.best_f1,
                auprc: f.auprc,
                configs_completed: r.configs_completed,
                configs_total: r.configs_total,
                partial: r.partial,
                warnings: r.warnings.clone(),
            };
            out.push_str(
                &serde_json::to_string(&record)
                    .map_err(|e| Error::contract(format!("result serialization: {e}")))?,
            );
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Rebuilds per-method results; aggregate means are recomputed from the
/// per-fold records, so the round trip preserves the means invariant.
pub fn load_results(path: &Path) -> Result<Vec<BenchmarkResult>> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `{RESULTS_HEADER}`, got `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty results file".to_string(),
            })
        }
    }
    let mut results: Vec<BenchmarkResult> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record: FoldRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: format!("record {}: {e}", idx),
        })?;
        let outcome = FoldOutcome {
            fold: record.fold,
            selected_config: record.selected_config,
            selected: record.selected,
            best_f1: record.best_f1,
            auprc: record.auprc,
        };
        match results.last_mut() {
            Some(r) if r.method == record.method => r.folds.push(outcome),
            _ => results.push(BenchmarkResult {
                method: record.method,
                folds: vec![outcome],
                mean_best_f1: 0.0,
                mean_auprc: 0.0,
                configs_completed: record.configs_completed,
                configs_total: record.configs_total,
                partial: record.partial,
                warnings: record.warnings,
            }),
        }
    }
    for r in &mut results {
        r.recompute_means();
    }
    Ok(results)
}

pub fn write_ranking_csv(rows: &[RankingRow], path: &Path) -> Result<()> {
    let mut out = String::from(
        "Method,Method Type,F1-Score,F1-Score Ranking,AUPRC,AUPRC Ranking,Total Ranking\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{},{:.4},{},{}\n",
            r.method, r.method_type, r.f1, r.f1_rank, r.auprc, r.auprc_rank, r.total_rank
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
