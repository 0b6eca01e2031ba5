//! Configuration, experiment drivers, metrics files and checkpoints.

mod checkpoint;
mod config;
mod experiment;
mod metrics;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{
    apply_override, AdaptationSection, BufferSection, ExperimentConfig, GridSection, Method,
    ModelSection,
};
pub use experiment::{
    domains, evaluate, grid_batchsize, grid_buffersize, metrics_csv, run_experiment, run_method,
    run_seed, source_model, summary_csv, write_runs, ExperimentReport, GridReport, GridRow,
    RunControl, SeedRun, METRICS_COLUMNS,
};
pub use metrics::{fmt_f64, mean_std, Csv};
