//! Retrieval and answer-quality evaluation over golden query sets.

pub mod metrics;
pub mod run;
