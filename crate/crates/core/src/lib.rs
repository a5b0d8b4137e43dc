//! Style/content latent generation for semi-supervised segmentation.
//!
//! The crate is `no_std` (with `alloc`): every routine here is pure
//! computation seeded from explicit `u64` seeds. File formats, checkpoints
//! and the command-line pipeline live in the `udgen` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod features;
pub mod genmodule;
pub mod gradcheck;
pub mod latent;
pub mod mlp;
pub mod optim;
pub mod policy;
pub mod seg;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
