//! Bayesian network meta-analysis of diagnostic test accuracy when tests are
//! binary or continuous and studies report accuracy at several thresholds.

pub mod cli;
pub mod dataset;
pub mod inference;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod networks;
pub mod summaries;
