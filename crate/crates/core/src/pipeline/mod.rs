//! Monthly series preparation: cleaning, alignment, target construction,
//! chronological splits and HMM discretization into regime labels.

mod discretize;
mod panel;
mod series;

use thiserror::Error;

use crate::dataset::DataError;
use crate::hmm::HmmError;

pub use discretize::{
    column_seed, discretize_apply, discretize_train, load_models, save_models, store_stem,
    to_emissions, DiscretizeSettings, RegimeMap, TrainedModels, FORECAST_COLUMN,
};
pub use panel::{add_targets, align, split, Panel, RegimePanel, SplitSpec};
pub use series::{clean_series, read_raw_csv, write_raw_csv, Month, RawRecord, TimeSeries, MISSING_TOKEN};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("series `{0}` has no usable values")]
    UnusableSeries(String),
    #[error("series do not overlap: {0}")]
    NoOverlap(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no trained model for column `{0}`")]
    MissingModel(String),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
