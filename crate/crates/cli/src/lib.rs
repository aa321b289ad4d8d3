//! Command-line front end: run configs, stage orchestration with an artifact
//! manifest and checkpoint cache, and plot-data emission.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plots;

pub use commands::{main_with_args, Cli};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, Manifest, Stage};
pub use plots::{emit_plot_data, PlotKind, TidyTable};
