//! Checkerboard detection and stereo camera calibration.
//!
//! The crate is `no_std` with `alloc`. File formats, command line tools and
//! external process handling live in the `stereocal` crate.

#![no_std]

extern crate alloc;

pub mod boardfinder;
pub mod calibrate;
pub mod cameramodel;
pub mod edgesegments;
pub mod error;
pub mod imagegrad;
pub mod lm;
pub mod math;
pub mod refine;
pub mod synthoracle;

pub use error::{Error, Result};
