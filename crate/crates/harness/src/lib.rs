//! Experiment harness for seqquery: configs, query instances, experiment
//! recipes, CSV output and model validation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod instances;
pub mod methods;
pub mod table;
pub mod validate;
