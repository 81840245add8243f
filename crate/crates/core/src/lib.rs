//! Consensus-based optimization with noisy and subsampled objective
//! oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod objectives;
pub mod oracle;
pub mod rng;
pub mod suite;

pub use dataset::{accuracy, load_dataset, split_dataset, synthetic_dataset, Dataset, LabelColumn};
pub use engine::{consensus_point, run, step, transition_matrix, ConsensusPoint, RunOptions, RunRecord, Solver};
pub use error::{CboError, Result};
pub use harness::{emit_results, percentile_summary, run_experiment, ExperimentConfig, OutputFormat, ResultRow, StatsSummary};
pub use model::{init_ensemble, theta, CboParams, Ensemble, InitSpec, NoiseMode};
pub use objectives::Objective;
pub use oracle::{NoiseSpec, OracleSpec, Problem, SubsampleSpec};
pub use rng::{Lane, SeedSpec, StreamId};
