//! Structure learning: decomposable scores, hill-climb search and the IC algorithm.

pub mod ic;
pub mod score;
pub mod search;

use thiserror::Error;

use crate::bayesnet::NetError;
use crate::dag::DagError;
use crate::dataset::DataError;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] DagError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T> = std::result::Result<T, StructureError>;

pub use ic::{chi2_ci_test, ic_learn, learn_markov_blankets, CiTestResult, Pdag};
pub use score::{
    bd_family_score, bic_family_score, bic_family_score_with, family_score, network_score,
    Penalty, ScoreCache, ScoreFn, ScoredFamily, Scorer,
};
pub use search::{hill_climb, write_trace_csv, GraphPrior, SearchConfig, SearchOutcome, TraceEntry};
