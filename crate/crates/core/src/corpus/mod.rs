//! Simile corpus construction: pattern extraction, downsampling, splits,
//! vocabulary and a synthetic corpus with a known rule.

mod extract;
mod lexicon;
mod stats;
mod synth;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locate_gen::SimileSample;
use crate::vocab::Vocabulary;

pub use extract::{extract, extract_all, extract_windowed, RawDocument, CONTEXT_WINDOW};
pub use lexicon::PatternLexicon;
pub use stats::{CorpusStats, PositionShare};
pub use synth::{generate_synthetic, synthetic_rule, SYNTH_FILLER, SYNTH_KEYWORDS, SYNTH_MARKER};

/// A simile removed from its context; `position` is a character offset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub context: String,
    pub position: usize,
    pub simile: String,
}

impl CorpusRecord {
    /// The original text span: `simile` put back at `position`.
    pub fn reinsert(&self) -> String {
        let chars: Vec<char> = self.context.chars().collect();
        crate::locate_gen::splice(&chars, self.position.min(chars.len()), &self.simile)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.context.chars().count();
        if self.position > len {
            return Err(Error::OutOfRange {
                what: "record position",
                index: self.position,
                limit: len + 1,
            });
        }
        if self.simile.is_empty() {
            return Err(Error::Invalid("record simile is empty".into()));
        }
        Ok(())
    }

    pub fn to_sample(&self, vocab: &Vocabulary) -> Result<SimileSample> {
        self.validate()?;
        SimileSample::from_text(&self.context, self.position, &self.simile, vocab)
    }
}

/// Similes seen more than `cap` times keep each occurrence with probability
/// `cap / count`. Order of survivors is preserved.
pub fn downsample_with_cap(records: &[CorpusRecord], cap: usize, seed: u64) -> Vec<CorpusRecord> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.simile.as_str()).or_default() += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .filter(|r| {
            let c = counts[r.simile.as_str()];
            c <= cap || rng.random_bool(cap as f64 / c as f64)
        })
        .cloned()
        .collect()
}

/// Keep ratio `100 / occurrence` for similes occurring over 100 times.
pub fn downsample(records: &[CorpusRecord], seed: u64) -> Vec<CorpusRecord> {
    downsample_with_cap(records, 100, seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<CorpusRecord>,
    pub dev: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
}

/// Shuffled disjoint `(train, dev, test)` splits of the given sizes.
pub fn split(records: &[CorpusRecord], sizes: (usize, usize, usize), seed: u64) -> Result<Splits> {
    let need = sizes.0 + sizes.1 + sizes.2;
    if need > records.len() {
        return Err(Error::Invalid(alloc::format!(
            "splits need {need} records, corpus has {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |r: core::ops::Range<usize>| order[r].iter().map(|&i| records[i].clone()).collect();
    Ok(Splits {
        train: take(0..sizes.0),
        dev: take(sizes.0..sizes.0 + sizes.1),
        test: take(sizes.0 + sizes.1..need),
    })
}

/// Character vocabulary over contexts and similes.
pub fn build_vocab(records: &[CorpusRecord]) -> Result<Vocabulary> {
    Vocabulary::build(records.iter().flat_map(|r| [r.context.as_str(), r.simile.as_str()]))
}
