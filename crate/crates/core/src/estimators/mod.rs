//! Query-probability estimators.
//!
//! Every estimator meters its own model calls, so [`Estimate::model_calls`]
//! is exactly the number of next-token evaluations the run performed.

mod beam;
mod estimate;
mod exact;
mod ground_truth;
mod hybrid;
mod sampling;
mod sweep;

use thiserror::Error;

use crate::model::ModelError;
use crate::query::QueryError;

pub use beam::{
    coverage_beam, coverage_beam_part, fixed_beam, fixed_beam_part, tail_split_beam, tail_split_part,
    tail_split_index, Beam, BeamSet, CoverageSchedule, ProposalTree, TreeNode, DEFAULT_WIDTH_CAP,
};
pub use estimate::{Estimate, PartEstimate};
pub use exact::{exact, exact_part, DEFAULT_EXACT_CAP};
pub use ground_truth::{surrogate_ground_truth, GroundTruthConfig, StopReason};
pub use hybrid::{hybrid, hybrid_part};
pub use sampling::{allocate, importance_sampling, naive_mc, uniform_mc, Allocation};
pub use sweep::{hitting_time_sweep, SweepMethod, SweepResult};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("query has {size} sequences, more than the enumeration cap {cap}")]
    SizeCapExceeded { size: String, cap: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported method: {0}")]
    UnsupportedMethod(String),
}
