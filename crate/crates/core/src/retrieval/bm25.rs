use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float as F;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;
/// Characters kept on each side of an insertion point.
pub const HALF_WINDOW: usize = 8;

/// Up to [`HALF_WINDOW`] characters on each side of `position`; sides are
/// truncated at the text boundary, never rebalanced.
pub fn context_window(context: &str, position: usize) -> String {
    let chars: Vec<char> = context.chars().collect();
    let p = position.min(chars.len());
    let from = p.saturating_sub(HALF_WINDOW);
    let to = (p + HALF_WINDOW).min(chars.len());
    chars[from..to].iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub record: u32,
    pub tf: u32,
}

/// Character-unigram inverted index over context windows; every entry
/// carries the simile of its record.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    windows: Vec<String>,
    similes: Vec<String>,
    postings: BTreeMap<char, Vec<Posting>>,
    lengths: Vec<u32>,
    avg_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub record: usize,
    pub simile: String,
    pub score: f64,
}

impl InvertedIndex {
    /// Indexes `(window, simile)` entries in order; entry `i` is record `i`.
    pub fn build(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let (windows, similes): (Vec<String>, Vec<String>) = entries.into_iter().unzip();
        if windows.is_empty() {
            return Err(Error::Empty("retrieval corpus"));
        }
        let mut postings: BTreeMap<char, Vec<Posting>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(windows.len());
        for (i, w) in windows.iter().enumerate() {
            let mut tf: BTreeMap<char, u32> = BTreeMap::new();
            let mut len = 0;
            for c in w.chars() {
                *tf.entry(c).or_default() += 1;
                len += 1;
            }
            lengths.push(len);
            for (c, n) in tf {
                postings.entry(c).or_default().push(Posting { record: i as u32, tf: n });
            }
        }
        let avg_len = lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64;
        Ok(Self {
            windows,
            similes,
            postings,
            lengths,
            avg_len,
        })
    }

    /// Reassembles a persisted index. The parts must equal a fresh build of
    /// `entries`, so a corrupted file cannot yield silently different scores.
    pub fn from_parts(
        entries: impl IntoIterator<Item = (String, String)>,
        postings: BTreeMap<char, Vec<Posting>>,
        lengths: Vec<u32>,
    ) -> Result<Self> {
        let fresh = Self::build(entries)?;
        if fresh.postings != postings || fresh.lengths != lengths {
            return Err(Error::Invalid("index postings do not match its entries".into()));
        }
        Ok(fresh)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window(&self, record: usize) -> &str {
        &self.windows[record]
    }

    pub fn simile(&self, record: usize) -> &str {
        &self.similes[record]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.windows.iter().map(String::as_str).zip(self.similes.iter().map(String::as_str))
    }

    pub fn postings(&self, term: char) -> &[Posting] {
        self.postings.get(&term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (char, &[Posting])> {
        self.postings.iter().map(|(&c, p)| (c, p.as_slice()))
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    pub fn average_len(&self) -> f64 {
        self.avg_len
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`, non-negative for every `n`.
    pub fn idf(&self, term: char) -> f64 {
        let n = self.postings(term).len() as f64;
        let docs = self.len() as f64;
        F::ln(1.0 + (docs - n + 0.5) / (n + 0.5))
    }

    /// Okapi BM25 (k1 = 1.2, b = 0.75) of every record sharing a term with
    /// `query`; repeated query characters count repeatedly. Sorted by score
    /// descending, then record id.
    pub fn search(&self, query: &str, topk: usize) -> Result<Vec<Hit>> {
        if query.is_empty() {
            return Err(Error::Empty("query"));
        }
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for q in query.chars() {
            let idf = self.idf(q);
            for p in self.postings(q) {
                let tf = p.tf as f64;
                let norm = K1 * (1.0 - B + B * self.lengths[p.record as usize] as f64 / self.avg_len);
                *scores.entry(p.record).or_default() += idf * tf * (K1 + 1.0) / (tf + norm);
            }
        }
        let mut hits: Vec<Hit> = scores
            .into_iter()
            .map(|(r, score)| Hit {
                record: r as usize,
                simile: self.similes[r as usize].clone(),
                score,
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.record.cmp(&b.record)));
        hits.truncate(topk);
        Ok(hits)
    }
}

/// Indexes the window around each training record's insertion point.
pub fn index_similes(records: &[CorpusRecord]) -> Result<InvertedIndex> {
    InvertedIndex::build(
        records
            .iter()
            .map(|r| (context_window(&r.context, r.position), r.simile.clone())),
    )
}

/// BM25 candidates for the window around `position` in `context`.
pub fn bm25_retrieve(index: &InvertedIndex, context: &str, position: usize, topk: usize) -> Result<Vec<Hit>> {
    index.search(&context_window(context, position), topk)
}
