//! Config-driven runs, parallel sweeps and plot-data emission.

mod config;
pub mod csv;
mod plotdata;
mod run;
mod sweep;

pub use config::{load_task_config, DataConfig, ExperimentConfig, SnapshotPlan, SweepAxes, SweepCell};
pub use plotdata::{emit_plotdata, Figure, MARGIN_LAMBDAS, PLOT_COLUMNS};
pub use run::{
    list_snapshots, load_run_dataset, run_experiment, score_run_inference, snapshot_file_name, train_experiment,
    Manifest, RunOutput, TrainedRun, DATA_FILE, JACCARD_COLUMNS, JACCARD_FILE, MANIFEST_FILE, METRICS_FILE,
};
pub use sweep::{
    run_dir_name, run_sweep, summarize, summary_table, sweep_table, sweep_threads, SummaryRow, SweepOutput,
    SweepRow, SUMMARY_FILE, SWEEP_FILE, THREADS_ENV,
};
