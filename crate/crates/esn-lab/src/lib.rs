//! Experiment drivers, configuration, and output plumbing for the
//! reservoir-computing laboratory. The numerical core lives in `esn-core`;
//! this crate adds end-to-end task drivers (trajectory association in
//! streaming and fixed-length form, the 5-bit memory task with
//! minimal-reservoir search), a named-experiment registry, and CSV/JSON
//! emission used by the `esnlab` binary.

pub mod config;
pub mod fivebit;
pub mod output;
pub mod registry;
pub mod runner;
pub mod tasks;
