//! Stage implementations behind the `regimenet` binary.
//!
//! Every stage reads the artifacts of the stages before it from
//! `<out_dir>/<run_name>/{panels,hmms,model,predictions,backtest}` and writes
//! its own outputs there. Re-running a stage with unchanged inputs rewrites
//! byte-identical files.

pub mod config;
pub mod stages;

use std::path::PathBuf;

use thiserror::Error;

pub use config::RunConfig;
pub use stages::{Overrides, Stage, Workspace};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// An input produced by an earlier stage is absent. Exit code 2.
    #[error("missing {}; run `regimenet {stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    /// Anything wrong with the data itself. Exit code 2.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::MissingArtifact { .. } | CliError::Data(_) => 2,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    regimenet_core::pipeline::PipelineError,
    regimenet_core::bayesnet::NetError,
    regimenet_core::structure::StructureError,
    regimenet_core::backtest::BacktestError,
    regimenet_core::dag::DagError,
    regimenet_core::dataset::DataError,
    regimenet_data::FetchError,
    std::io::Error,
    csv::Error,
    serde_json::Error
);
