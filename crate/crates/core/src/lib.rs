//! Edge-cloud cooperative inference.
//!
//! A teacher network is compressed layer by layer by a recurrent policy
//! trained with REINFORCE; the resulting student runs at the edge next to a
//! small supervised gate that decides, from the student's logits, which
//! samples to offload to the teacher in the cloud.

pub mod config;
pub mod data;
pub mod error;
pub mod gate;
pub mod model_spec;
pub mod nn;
pub mod rl;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
