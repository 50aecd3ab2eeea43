pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod msunet;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
