//! Counterfactual story rewriting in two stages: a sketch stage labels which
//! ending tokens depend on the condition and blanks them out, and a customize
//! stage refills the resulting skeleton under a new condition.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod skeleton;
pub mod synthetic;
pub mod tagger;
pub mod train;

pub use error::{Error, ErrorKind, Result};
