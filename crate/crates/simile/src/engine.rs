//! Precision-erased inference over a loaded checkpoint.

use simile_core::locate_gen::{Candidate, Decoding, PolishResult, Polisher};
use simile_core::vocab::Vocabulary;
use simile_core::{Error as CoreError, Result as CoreResult};

use crate::checkpoint::{AnyModel, LoadedModel};

/// Largest beam accepted from callers.
pub const MAX_BEAM: usize = 64;

#[derive(Debug, Clone)]
pub struct Engine {
    model: AnyModel,
    vocab: Vocabulary,
    id: String,
}

macro_rules! with_polisher {
    ($self:ident, $p:ident => $body:expr) => {
        match &$self.model {
            AnyModel::F32(m) => {
                let $p = Polisher::new(m, &$self.vocab)?;
                $body
            }
            AnyModel::F64(m) => {
                let $p = Polisher::new(m, &$self.vocab)?;
                $body
            }
        }
    };
}

/// `1` means greedy; larger sizes run beam search.
pub fn decoding_for(beam_size: usize) -> CoreResult<Decoding> {
    match beam_size {
        0 => Err(CoreError::Invalid("beam_size must be at least 1".into())),
        1 => Ok(Decoding::Greedy),
        k if k > MAX_BEAM => Err(CoreError::Invalid(format!("beam_size must be at most {MAX_BEAM}"))),
        k => Ok(Decoding::Beam(k)),
    }
}

impl Engine {
    pub fn new(loaded: LoadedModel) -> CoreResult<Self> {
        let engine = Self {
            model: loaded.model,
            vocab: loaded.vocab,
            id: loaded.id,
        };
        with_polisher!(engine, _p => ());
        Ok(engine)
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.id
    }

    pub fn model(&self) -> &AnyModel {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Longest text the model accepts, in characters.
    pub fn max_text_chars(&self) -> usize {
        self.model.config().max_text_chars()
    }

    pub fn locate(&self, text: &str) -> CoreResult<Vec<f64>> {
        with_polisher!(self, p => p.locate(text))
    }

    pub fn generate(&self, text: &str, position: usize, decoding: Decoding) -> CoreResult<Vec<Candidate>> {
        with_polisher!(self, p => p.generate(text, position, decoding))
    }

    /// Automatic mode without a position, semi-automatic with one.
    pub fn polish(&self, text: &str, position: Option<usize>, decoding: Decoding) -> CoreResult<PolishResult> {
        with_polisher!(self, p => match position {
            None => p.polish_automatic(text, decoding),
            Some(pos) => p.polish_semi_automatic(text, pos, decoding),
        })
    }
}
