//! Data ingestion, synthetic generators, metrics, configuration and the
//! fit / predict / bench drivers behind the command-line tool. Everything
//! here works in `f64`.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod runner;
pub mod synth;

pub use config::{InducingConfig, Normalization, RunConfig, Variant};
pub use dataset::{DatasetCounts, GridDataset, Row};
pub use metrics::{metrics, nlpd, rmse, Prediction, Scores};
pub use runner::{
    bench, evaluate, fit_dataset, kfold_split, predict_dataset, split_dataset, write_bench_csv,
    write_predictions, BenchRow, FittedModel, RunMetrics, TrainedState,
};
pub use synth::{synthesize, PseudoPeriodic, SynthKind, SynthSpec, Synthetic};
