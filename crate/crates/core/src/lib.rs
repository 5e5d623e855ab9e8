//! Outcome-predictive topic discovery over embedded text corpora.

// `!(x > y)` rejects NaN along with the failing comparison
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod enrichment;
pub mod error;
pub mod hash;
pub mod mediation;
pub mod pipeline;
pub mod reduction;
pub mod similarity;
pub mod stats;
pub mod synth;
pub mod text;
pub mod topics;

pub use error::{Error, Result};
