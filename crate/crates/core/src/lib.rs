//! Interlaced mechanical metastructures: geometry generation, a planar
//! frame-element dynamics solver, and the attention-based forward and inverse
//! models that map between geometry rasters and transmissibility spectra.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, checkpoints, and the command-line tool live in the
//! companion `interlace` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod fem;
pub mod forward;
pub mod inverse;
pub mod lattice;
pub mod losses;
pub mod math;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
