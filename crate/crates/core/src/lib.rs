//! Tree-structured location-scale models for binary and ordinal responses.
//!
//! Both the location term and the scale (dispersion) term of a cumulative
//! model are grown as binary trees. Candidate splits are ranked by
//! likelihood-ratio statistics and accepted only when a permutation test on
//! the maximally selected statistic is significant.

pub mod data;
pub mod error;
pub mod estimation;
pub mod model;
pub mod split;
pub mod inference;
pub mod builder;
pub mod io;
pub mod simulate;
pub mod cli;

pub use error::{Error, Result};
