//! File formats, synthetic dataset tooling, pipeline glue and the `caufc`
//! command-line interface on top of [`caufc_core`].
//!
//! - [`caft`]: CAFT tensor files.
//! - [`manifest`]: dataset manifests.
//! - [`dataset`]: synthetic datasets on disk.
//! - [`model_file`]: CAFM model files.
//! - [`pipeline`]: train, encode, decode, evaluate and plot over files.
//! - [`cli`]: the `caufc` executable.

pub mod caft;
pub mod cli;
pub mod dataset;
mod error;
mod fsutil;
pub mod manifest;
pub mod model_file;
pub mod pipeline;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
