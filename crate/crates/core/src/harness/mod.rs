//! Experiment configuration, seeded runs, per-epoch records, aggregation
//! across seeds and plot-data files.

mod config;
mod record;
mod run;

pub use config::{
    check_shared_parameters, BarycenterParams, CboParams, DataParams, ExperimentConfig, ExperimentId, HybridParams,
    Method, NetworkParams,
};
pub use record::{
    aggregate, emit_plot_data, mean, median, read_plot_data, AggregateRecord, EpochRow, PlotPoint, RunRecord,
    RunStatus, PLOT_HEADER,
};
pub use run::{resolve_out_dir, run_and_write, run_experiment, run_seed, RunOutputs, OUT_DIR_ENV};
