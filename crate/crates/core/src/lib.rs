//! Open compound domain adaptation for semantic segmentation, without `std`.
//!
//! The crate covers the whole algorithmic path: LAB style statistics and
//! histogram matching, silhouette-driven subdomain discovery, per-subdomain
//! style purification, bidirectional photometric mixing, a tiny convolutional
//! segmentation network with hand-written gradients, multi-teacher
//! distillation with entropy-weighted fusion, online consistency updating, and
//! a synthetic compound-domain benchmark to exercise all of it.
//!
//! Everything here is a pure function of its inputs plus explicit seeds. File
//! formats, the CLI and threading live in the `ocda` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod color;
pub mod error;
pub mod image;
pub mod math;
pub mod metrics;
pub mod mixing;
pub mod net;
pub mod pipeline;
pub mod purify;
pub mod rng;
pub mod separate;
pub mod synth;

pub use error::{Error, Result};
pub use image::{BinaryMask, Image, LabelMap, Sample, IGNORE};
