//! Character-level vocabulary with a fixed block of special tokens.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Ids of the special tokens. They occupy the first slots of every vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: usize,
    pub unk: usize,
    pub cls: usize,
    pub sep: usize,
    pub bos: usize,
    pub eos: usize,
}

pub const SPECIALS: SpecialTokens = SpecialTokens {
    pad: 0,
    unk: 1,
    cls: 2,
    sep: 3,
    bos: 4,
    eos: 5,
};

pub const SPECIAL_NAMES: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary ordered by (frequency desc, codepoint asc).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut freq: BTreeMap<char, u64> = BTreeMap::new();
        for text in texts {
            for ch in text.chars() {
                *freq.entry(ch).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut by_freq: Vec<(char, u64)> = freq.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(Self::from_chars(by_freq.into_iter().map(|(c, _)| c).collect()))
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + SPECIAL_NAMES.len()))
            .collect();
        Self { chars, index }
    }

    /// Rebuilds a vocabulary from its token list (specials first, then one
    /// character per token), as produced by [`Vocabulary::tokens`].
    pub fn from_tokens(tokens: &[String]) -> Result<Self> {
        if tokens.len() < SPECIAL_NAMES.len() || tokens[..SPECIAL_NAMES.len()] != SPECIAL_NAMES {
            return Err(Error::Invalid("vocabulary must start with the special tokens".into()));
        }
        let mut chars = Vec::with_capacity(tokens.len() - SPECIAL_NAMES.len());
        for t in &tokens[SPECIAL_NAMES.len()..] {
            let mut it = t.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(Error::Invalid(alloc::format!("token {t:?} is not a single character"))),
            }
        }
        let v = Self::from_chars(chars);
        if v.index.len() != v.chars.len() {
            return Err(Error::Invalid("duplicate character in vocabulary".into()));
        }
        Ok(v)
    }

    pub fn tokens(&self) -> Vec<String> {
        SPECIAL_NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(self.chars.iter().map(|c| c.to_string()))
            .collect()
    }

    pub fn len(&self) -> usize {
        SPECIAL_NAMES.len() + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn specials(&self) -> SpecialTokens {
        SPECIALS
    }

    pub fn id(&self, ch: char) -> usize {
        self.index.get(&ch).copied().unwrap_or(SPECIALS.unk)
    }

    pub fn contains(&self, ch: char) -> bool {
        self.index.contains_key(&ch)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Character for a non-special id.
    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(SPECIAL_NAMES.len()).and_then(|i| self.chars.get(i).copied())
    }

    /// Joins the characters of `ids`; special tokens are dropped, except UNK
    /// which renders as U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| if id == SPECIALS.unk { Some('\u{FFFD}') } else { self.char_of(id) })
            .collect()
    }

    /// FNV-1a over the token list; stored in checkpoints to detect mismatches.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tokens() {
            for b in t.bytes().chain(core::iter::once(0)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_codepoint_order() {
        let v = Vocabulary::build(["aab", "cb"]).unwrap();
        // a:2 b:2 c:1 -> a, b tie on frequency and break by codepoint
        assert_eq!(v.id('a'), 6);
        assert_eq!(v.id('b'), 7);
        assert_eq!(v.id('c'), 8);
        assert_eq!(v.len(), 9);
        let v = Vocabulary::build(["aab"]).unwrap();
        assert!(v.id('a') < v.id('b'));
    }

    #[test]
    fn round_trip_and_unknown() {
        let corpus = ["他像幽灵一样出现那里", "hello, world"];
        let v = Vocabulary::build(corpus).unwrap();
        for s in corpus {
            assert_eq!(v.decode(&v.encode(s)), s);
        }
        assert_eq!(v.id('龙'), SPECIALS.unk);
        assert!(Vocabulary::build([""]).is_err());
    }

    #[test]
    fn token_list_round_trip() {
        let v = Vocabulary::build(["xyzzy"]).unwrap();
        let back = Vocabulary::from_tokens(&v.tokens()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.checksum(), back.checksum());
        let mut bad = v.tokens();
        bad.push("ab".into());
        assert!(Vocabulary::from_tokens(&bad).is_err());
    }
}
