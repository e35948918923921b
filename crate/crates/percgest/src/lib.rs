//! File formats, the streaming engine and the command line around
//! `percgest-core`.

pub mod analysis;
pub mod bench;
pub mod bundle;
pub mod cli;
pub mod engine;
mod error;
pub mod manifest;
pub mod report;
pub mod synth;
pub mod wav;

pub use error::{exit, Error, Result};
pub use percgest_core as core;
