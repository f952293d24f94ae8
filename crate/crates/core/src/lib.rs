//! Knowledge-graph-to-text generation with a learned triplet description
//! order, a POS-fused transformer generator, and a copy-or-predict gate
//! regularised by POS and sliding-window context scores.

pub mod autodiff;
pub mod copy_gate;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod evaluate;
pub mod kg_data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod pipeline;
pub mod plot;
pub mod seq2seq;
pub mod sorting;
pub mod supervision;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
