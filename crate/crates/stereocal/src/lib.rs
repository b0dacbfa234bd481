//! File formats, the external odometry runner and the command-line surface
//! around `stereocal-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod kittiio;
pub mod runner;

pub use error::{Error, Result};
pub use stereocal_core as core;
