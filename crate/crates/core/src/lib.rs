//! Probabilistic queries over autoregressive categorical sequence models.
//!
//! A [`Query`](query::Query) is a disjoint union of per-step restricted
//! domain products. Estimators in [`estimators`] answer it against any
//! [`SequenceModel`](model::SequenceModel), and [`markov`] supplies exact
//! answers for explicit chains.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod markov;
pub mod model;
pub mod proposal;
pub mod query;
pub mod rng;
pub mod stats;

pub use estimators::{Estimate, EstimateError, PartEstimate};
pub use model::{Distribution, ModelError, SequenceModel};
pub use query::{History, ProductQuery, Query, QueryError, RestrictedDomain, Token, Vocab};
