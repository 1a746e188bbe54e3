//! Std companion to `lrmpc-core`: LRMT containers, share and material files,
//! a TCP transport, party sessions, the ablation bench and the CLI.

pub mod bench;
pub mod cli;
pub mod container;
pub mod error;
pub mod files;
pub mod session;
pub mod tcp;

pub use error::{Error, Result};
