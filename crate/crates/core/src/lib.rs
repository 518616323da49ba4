//! Monte Carlo simulation of a pulsed quantum-dot single-photon source,
//! an optional difference-frequency conversion stage, HBT and HOM
//! measurement setups, and the correlation analysis that recovers lifetime,
//! g²(0), interference visibility and conversion efficiency from the
//! simulated time tags.

pub mod analysis;
pub mod cli;
pub mod conversion;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod math;
pub mod model;
pub mod optics;
pub mod par;
pub mod source;

pub use error::{Error, Result};
