//! Keyphrase extraction for noisy live-stream transcripts.

pub mod augmentation;
pub mod autograd;
pub mod checkpoint;
pub mod chitchat;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod extractor;
pub mod model;
pub mod nn;
pub mod reinforcement;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
