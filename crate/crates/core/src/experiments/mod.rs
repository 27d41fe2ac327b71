//! Experiment configs and presets, the Monte Carlo runner, result files and
//! the acceptance checks.

pub mod config;
pub mod presets;
pub mod records;
pub mod run;
pub mod validation;

pub use config::{ExperimentConfig, ExperimentKind};
pub use presets::{preset, PRESET_NAMES, PRESET_VERSION};
pub use records::{
    aggregate, read_results, write_results, FeatureRecord, Manifest, ResultFormat, ResultRecord,
    ResultsDocument, SummaryRow,
};
pub use run::{run_document, run_experiment, run_experiment_with_progress, run_feature_experiment};
