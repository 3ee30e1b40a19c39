//! Experiment harness: configuration, run directories, the command
//! implementations behind the `splitflow` binary, and SVG plots.

mod commands;
mod config;
mod svg;

pub use commands::{
    cmd_converge, cmd_eval, cmd_gen_data, cmd_sample, cmd_table1, cmd_train, RunContext, RunManifest, Table1Row,
    MANIFEST_FILE,
};
pub use config::{
    ConvergeConfig, DataConfig, Distribution, ExperimentConfig, MetricsConfig, Paradigm, TrainingConfigs,
    CONFIG_FORMAT_VERSION,
};
pub use svg::convergence_svg;

/// Version string embedded in every artifact.
pub const SOFTWARE_VERSION: &str = concat!("splitflow ", env!("CARGO_PKG_VERSION"));
