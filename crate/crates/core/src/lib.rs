//! Vanishing-point geometry, edge-alignment loss, detection, dataset
//! tooling, mask construction, diffusion guidance arithmetic and evaluation
//! metrics.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod detect;
pub mod edge;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod guidance;
pub mod mask;
pub mod math;
pub mod metrics;
pub mod outline;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, HomogeneousPoint, LineSegment, Point2, UnitVector2};
pub use raster::{BinaryImage, ScalarField};
