//! Minimal from-scratch neural building blocks shared by both stages.

pub mod init;
pub mod optim;
mod tape;
pub mod transformer;

pub use optim::{Adam, AdamConfig};
pub use tape::{softmax_rows, Mat, ParamId, ParamSet, Tape, Target, Var, PROB_EPS};
pub use transformer::{Encoder, EncoderConfig};
