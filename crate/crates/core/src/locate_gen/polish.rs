use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{select_insertion, EncoderOutput, LocateGen};
use crate::tensor::Real;
use crate::vocab::{Vocabulary, SPECIALS};

use super::decode::{beam_search, greedy_decode, BeamHypothesis, ModelScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "size")]
pub enum Decoding {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub simile: String,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishResult {
    /// Character offset of the insertion (equal to the pointer slot).
    pub position: usize,
    /// Pointer distribution over slots `0..=len(text)`.
    pub pointer_probs: Vec<f64>,
    pub simile: String,
    pub candidates: Vec<Candidate>,
    pub polished_text: String,
}

/// Text-level inference over a model and its vocabulary.
pub struct Polisher<'m, T> {
    model: &'m LocateGen<T>,
    vocab: &'m Vocabulary,
}

struct Prepared<T> {
    chars: Vec<char>,
    enc: EncoderOutput<T>,
}

impl<'m, T: Real> Polisher<'m, T> {
    pub fn new(model: &'m LocateGen<T>, vocab: &'m Vocabulary) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Config(alloc::format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        Ok(Self { model, vocab })
    }

    pub fn model(&self) -> &LocateGen<T> {
        self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.vocab
    }

    /// Rejects texts longer than the encoder window instead of truncating.
    fn prepare(&self, text: &str) -> Result<Prepared<T>> {
        let chars: Vec<char> = text.chars().collect();
        let max = self.model.config().max_text_chars();
        if chars.len() > max {
            return Err(Error::TooLong {
                what: "text",
                len: chars.len(),
                max,
            });
        }
        let mut ids = Vec::with_capacity(chars.len() + 1);
        ids.push(SPECIALS.cls);
        ids.extend(chars.iter().map(|&c| self.vocab.id(c)));
        let enc = self.model.encode(&ids)?;
        Ok(Prepared { chars, enc })
    }

    fn pointer(&self, p: &Prepared<T>) -> Result<Vec<f64>> {
        Ok(self
            .model
            .pointer_distribution(&p.enc)?
            .into_iter()
            .map(|x| x.as_f64())
            .collect())
    }

    fn decode(&self, p: &Prepared<T>, position: usize, decoding: Decoding) -> Result<Vec<BeamHypothesis>> {
        if position > p.chars.len() {
            return Err(Error::OutOfRange {
                what: "position",
                index: position,
                limit: p.chars.len() + 1,
            });
        }
        let scorer = ModelScorer::new(self.model, &p.enc, position)?;
        match decoding {
            Decoding::Greedy => Ok(alloc::vec![greedy_decode(&scorer)?]),
            Decoding::Beam(k) => beam_search(&scorer, k),
        }
    }

    fn candidates(&self, hyps: &[BeamHypothesis]) -> Vec<Candidate> {
        hyps.iter()
            .map(|h| Candidate {
                simile: self.vocab.decode(h.body()),
                log_prob: h.log_prob,
            })
            .collect()
    }

    /// Insertion-slot distribution for `text`.
    pub fn locate(&self, text: &str) -> Result<Vec<f64>> {
        let p = self.prepare(text)?;
        self.pointer(&p)
    }

    /// Ranked simile candidates for a given character offset.
    pub fn generate(&self, text: &str, position: usize, decoding: Decoding) -> Result<Vec<Candidate>> {
        let p = self.prepare(text)?;
        Ok(self.candidates(&self.decode(&p, position, decoding)?))
    }

    /// Model-chosen position, then generation there.
    pub fn polish_automatic(&self, text: &str, decoding: Decoding) -> Result<PolishResult> {
        let p = self.prepare(text)?;
        let probs = self.pointer(&p)?;
        let position = select_insertion(&probs);
        self.finish(&p, probs, position, decoding)
    }

    /// User-forced position; the pointer distribution is still reported.
    pub fn polish_semi_automatic(&self, text: &str, position: usize, decoding: Decoding) -> Result<PolishResult> {
        let p = self.prepare(text)?;
        let probs = self.pointer(&p)?;
        self.finish(&p, probs, position, decoding)
    }

    fn finish(&self, p: &Prepared<T>, pointer_probs: Vec<f64>, position: usize, decoding: Decoding) -> Result<PolishResult> {
        let hyps = self.decode(p, position, decoding)?;
        let candidates = self.candidates(&hyps);
        let simile = candidates.first().map(|c| c.simile.clone()).unwrap_or_default();
        Ok(PolishResult {
            position,
            pointer_probs,
            polished_text: splice(&p.chars, position, &simile),
            simile,
            candidates,
        })
    }
}

/// Inserts `simile` at character offset `position`.
pub fn splice(chars: &[char], position: usize, simile: &str) -> String {
    let mut out = String::with_capacity(chars.len() * 3 + simile.len());
    out.extend(&chars[..position]);
    out.push_str(simile);
    out.extend(&chars[position..]);
    out
}
