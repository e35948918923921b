//! Signal processing, small convolutional networks and evaluation routines for
//! real-time recognition of percussive hits on a six-channel instrument body.
//!
//! Everything here is `no_std` (with `alloc`) and free of IO: the
//! `percgest` crate layers file formats, streaming and the command line on top.
#![no_std]

// Float math comes from `num_traits::Float` (libm). When std is linked its
// inherent methods win, so those imports carry `allow(unused_imports)`.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod dsp;
pub mod eval;
pub mod models;
pub mod nn;
pub mod onset;
pub mod train;

mod error;

pub use error::{Error, Result};
