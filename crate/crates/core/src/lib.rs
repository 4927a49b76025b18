//! Rule-based blocking for entity resolution.
//!
//! Matching dependencies are compiled into an execution plan (predicate
//! ordering, scored execution tree, flat instruction path) and evaluated over
//! hash partitions of a relation by a work-stealing parallel engine.

pub mod engine;
pub mod epg;
pub mod metrics;
pub mod error;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod prepared;
pub mod rules;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
