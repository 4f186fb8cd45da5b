//! File formats, checkpoints, command line and HTTP service for
//! `simile-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod engine;
mod error;
pub mod io;
pub mod service;

pub use error::{Error, Result};
