//! Controlled reflected diffusions in the nonnegative orthant.

pub mod error;
pub mod model;
pub mod queue;
pub mod skorokhod;
pub mod hjb;
pub mod montecarlo;
pub mod testfn;

pub use error::{Error, Result};
