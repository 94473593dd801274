//! File formats, corpus generation, run directories, plots, and the
//! command-line tool built on `interlace-core`.

pub use interlace_core as core;

pub mod cli;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod plots;
pub mod runs;

pub use error::{Error, Result};
