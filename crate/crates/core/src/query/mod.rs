//! Online query path: parse, score, plan, execute, compose.

pub mod engine;
pub mod parse;
pub mod plan;
pub mod score;
