//! Reservoir-computing laboratory core: echo state network simulation,
//! readout-matrix construction, winner-take-all accuracy theory, and
//! memory-capacity analysis.
//!
//! The crate is `no_std`-compatible (requires `alloc`); enable the default
//! `std` feature for std environments.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod codec;
pub mod error;
pub mod readout;
pub mod reservoir;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
