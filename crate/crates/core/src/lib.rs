//! Simulation and post-processing for polarization-encoded BB84 links that
//! share a fiber with classical data traffic.

pub mod analytic;
pub mod datacom;
pub mod detection;
pub mod error;
pub mod harness;
pub mod optics;
pub mod postproc;
pub mod source;
pub mod timetag;
pub mod units;

pub use error::{Error, Result};
