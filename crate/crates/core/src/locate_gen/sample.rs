use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::vocab::{Vocabulary, SPECIALS};

/// One training/evaluation record in token space.
///
/// `gold_position` is a pointer slot: the simile goes after encoder token
/// `gold_position`, so slot 0 (CLS) means "before the first character" and
/// slot `p` equals character offset `p` in the raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimileSample {
    pub context_ids: Vec<usize>,
    pub gold_position: usize,
    pub simile_ids: Vec<usize>,
}

impl SimileSample {
    pub fn new(context_ids: Vec<usize>, gold_position: usize, simile_ids: Vec<usize>) -> Result<Self> {
        let s = Self {
            context_ids,
            gold_position,
            simile_ids,
        };
        s.check_shape()?;
        Ok(s)
    }

    /// Tokenizes a `(context, position, simile)` triple; `position` is a
    /// character offset into `context`.
    pub fn from_text(context: &str, position: usize, simile: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut context_ids = Vec::with_capacity(context.len() + 1);
        context_ids.push(SPECIALS.cls);
        context_ids.extend(vocab.encode(context));
        let mut simile_ids = Vec::with_capacity(simile.len() + 2);
        simile_ids.push(SPECIALS.bos);
        simile_ids.extend(vocab.encode(simile));
        simile_ids.push(SPECIALS.eos);
        Self::new(context_ids, position, simile_ids)
    }

    fn check_shape(&self) -> Result<()> {
        if self.context_ids.first() != Some(&SPECIALS.cls) {
            return Err(Error::Invalid("context must start with CLS".into()));
        }
        let real = self.context_ids.iter().skip(1).filter(|&&i| i != SPECIALS.pad).count();
        if self.gold_position > real {
            return Err(Error::OutOfRange {
                what: "gold position",
                index: self.gold_position,
                limit: real + 1,
            });
        }
        let n = self.simile_ids.len();
        if n < 3 || self.simile_ids[0] != SPECIALS.bos || self.simile_ids[n - 1] != SPECIALS.eos {
            return Err(Error::Invalid("simile must be BOS, at least one token, EOS".into()));
        }
        Ok(())
    }

    /// Checks the length caps of a model configuration.
    pub fn fits(&self, config: &ModelConfig) -> Result<()> {
        if self.context_ids.len() > config.max_context_len {
            return Err(Error::TooLong {
                what: "context",
                len: self.context_ids.len(),
                max: config.max_context_len,
            });
        }
        // decoder consumes BOS..y_T and predicts y_1..EOS
        if self.simile_ids.len() - 1 > config.max_simile_len {
            return Err(Error::TooLong {
                what: "simile",
                len: self.simile_ids.len() - 1,
                max: config.max_simile_len,
            });
        }
        Ok(())
    }

    /// Teacher-forcing split: decoder input and next-token targets.
    pub fn decoder_io(&self) -> (&[usize], &[usize]) {
        let n = self.simile_ids.len();
        (&self.simile_ids[..n - 1], &self.simile_ids[1..])
    }

    /// Number of characters in the simile (BOS/EOS excluded).
    pub fn simile_len(&self) -> usize {
        self.simile_ids.len() - 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_text_frames_tokens() {
        let v = Vocabulary::build(["abc|"]).unwrap();
        let s = SimileSample::from_text("ab|c", 3, "cab", &v).unwrap();
        assert_eq!(s.context_ids.len(), 5);
        assert_eq!(s.context_ids[0], SPECIALS.cls);
        assert_eq!(s.simile_ids.first(), Some(&SPECIALS.bos));
        assert_eq!(s.simile_ids.last(), Some(&SPECIALS.eos));
        let (inp, tgt) = s.decoder_io();
        assert_eq!(inp.len(), 4);
        assert_eq!(tgt.last(), Some(&SPECIALS.eos));
        assert_eq!(s.simile_len(), 3);
    }

    #[test]
    fn rejects_bad_records() {
        let v = Vocabulary::build(["abc"]).unwrap();
        assert!(SimileSample::from_text("ab", 3, "c", &v).is_err());
        assert!(SimileSample::from_text("ab", 2, "", &v).is_err());
        assert!(SimileSample::new(vec![7, 8], 0, vec![SPECIALS.bos, 7, SPECIALS.eos]).is_err());
    }

    #[test]
    fn length_caps() {
        let v = Vocabulary::build(["abcdefgh"]).unwrap();
        let mut c = ModelConfig::toy(v.len());
        c.max_context_len = 4;
        c.max_simile_len = 3;
        assert!(SimileSample::from_text("abc", 1, "ab", &v).unwrap().fits(&c).is_ok());
        assert!(SimileSample::from_text("abcd", 1, "ab", &v).unwrap().fits(&c).is_err());
        assert!(SimileSample::from_text("abc", 1, "abc", &v).unwrap().fits(&c).is_err());
    }
}
