//! The evaluation protocol: fold construction with neighbor exclusion,
//! time-budgeted hyperparameter grid search, result aggregation, and
//! ranking with persistence.

mod folds;
mod grid;
mod persist;
mod ranking;

pub use folds::{eval_folds_for, make_folds, FoldPlan};
pub use grid::{apply_param, expand_grid, grid_search, BenchmarkResult, FoldOutcome, GridSpec};
pub use persist::{load_results, persist_results, write_ranking_csv};
pub use ranking::{competition_rank_desc, rank_methods, total_rank, RankingRow};
