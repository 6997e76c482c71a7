//! Series ingestion, normalization, windowing, overlap-cover assembly,
//! metrics, synthetic generators and the persistence baseline.

mod metrics;
mod synth;
mod table;
mod windows;

pub use metrics::{mean_abs, metrics, persistence_baseline, root_mean_square, MetricsReport, Units};
pub use synth::{mutation_schedule, synth_series, Jump, SynthKind};
pub use table::{load_csv, read_csv, NormalizationState, TimeSeriesTable};
pub use windows::{assemble_predictions, make_windows, Forecast, Window, WindowedDataset};
