//! Simile interpolation: locate an insertion point in plain text, then
//! generate a simile conditioned on that location.
//!
//! The crate is `no_std` + `alloc`. File formats, the CLI and the HTTP
//! service live in the companion `simile` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod corpus;
pub mod locate_gen;
pub mod metrics;
pub mod nn;
pub mod vocab;
mod error;
pub mod params;
pub mod retrieval;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::{Precision, Real, Tensor};
