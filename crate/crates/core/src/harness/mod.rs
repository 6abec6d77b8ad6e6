//! Experiment harness behind the `ofdm-eq` command line tool.

pub mod config;
pub mod dataset;
pub mod plot;
pub mod sweep;
pub mod training;
pub mod validate;

pub use config::{noise_variance_for_snr, EqualizerChoice, ExperimentConfig, TrainingOptions};
pub use dataset::{generate_dataset, Dataset};
pub use plot::{csv_to_columns, plot_file};
pub use sweep::{
    evaluate_frame, load_configured_model, run_sweep, run_sweep_with_model, wilson_interval, ErrorCounts,
    SimulatedFrame, Simulator, StageResult, SweepPoint, SweepResult, CSV_HEADER,
};
pub use training::{load_or_generate, run_training, train_config, TrainingOutcome};
pub use validate::{default_cir_lengths, validate_model, ValidationReport, MODEL_TOLERANCE};
