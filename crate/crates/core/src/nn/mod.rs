//! Transformer encoder-decoder with the pointer head and insertion bias.

mod config;
pub(crate) mod layers;
mod model;

pub use config::ModelConfig;
pub use layers::Dropout;
pub use model::{select_insertion, EncoderOutput, LocateGen, Side};
pub(crate) use model::Encoder;
