//! Regime detection and Bayesian-network forecasting for monthly macro series.

pub mod backtest;
pub mod bayesnet;
pub mod dag;
pub mod dataset;
pub mod hmm;
pub mod inference;
pub mod pipeline;
pub mod structure;
pub mod textbook;
mod math;

pub use bayesnet::{fit_bayesian, fit_mle, BayesianNetwork, Cpd, DirichletPrior, DiscreteVariable};
pub use dag::Dag;
pub use dataset::DiscreteDataset;
pub use hmm::DtHmm;
pub use inference::{joint_probability, map_predict, query, Evidence, Posterior};
