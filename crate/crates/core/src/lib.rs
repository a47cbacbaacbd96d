//! Joint entity recognition, coreference and relation extraction over whole
//! documents, with knowledge-base entity vectors mixed into span
//! representations.

pub mod corpus;
pub mod encoder;
mod error;
pub mod experiment;
pub mod heads;
pub mod kbembed;
pub mod kbmodule;
pub mod kbstore;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod postproc;
pub mod rng;
pub mod spans;
pub mod train;

pub use error::{KbieError, Result};
