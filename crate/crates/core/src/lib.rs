//! Event-referenced keyword spotting from multichannel neural recordings.

pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod operate;
pub mod nncore;
pub mod rng;
pub mod sampling;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
