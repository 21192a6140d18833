//! Dataset ingestion, normalization, windowing, masking schemes, signature
//! matrices, and a seeded synthetic process-with-faults generator.

mod csvio;
mod mask;
mod norm;
mod series;
mod synth;
mod window;

pub use csvio::{load_runs_csv, write_runs_csv, CsvSchema};
pub use mask::{mask_cells_donut, mask_features_genad, signature_matrices, GenadSweep};
pub use norm::{apply_norm, fit_norm_stats, invert_norm, NormStats, STD_FLOOR};
pub use series::{split_train_validation, DatasetSplit, RunRecord, SeriesMatrix};
pub use synth::{synth_generate, FaultKind, SynthConfig};
pub use window::{make_windows, Window, WindowSpec};
