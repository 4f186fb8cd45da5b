use alloc::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::CorpusRecord;

/// Share of insertion points near the start (first 10% of the context),
/// the end (last 10%) and in between.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PositionShare {
    pub start: f64,
    pub middle: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub mean_context_len: f64,
    pub mean_simile_len: f64,
    pub unique_similes: usize,
    pub positions: PositionShare,
}

impl CorpusStats {
    /// Lengths are in characters. An empty corpus yields all zeros.
    pub fn compute(records: &[CorpusRecord]) -> Self {
        if records.is_empty() {
            return Self::default();
        }
        let n = records.len() as f64;
        let (mut ctx, mut sim) = (0usize, 0usize);
        let mut share = PositionShare::default();
        for r in records {
            let len = r.context.chars().count();
            ctx += len;
            sim += r.simile.chars().count();
            let rel = if len == 0 { 0.0 } else { r.position as f64 / len as f64 };
            if rel <= 0.1 {
                share.start += 1.0;
            } else if rel >= 0.9 {
                share.end += 1.0;
            } else {
                share.middle += 1.0;
            }
        }
        let unique: BTreeSet<&str> = records.iter().map(|r| r.simile.as_str()).collect();
        Self {
            count: records.len(),
            mean_context_len: ctx as f64 / n,
            mean_simile_len: sim as f64 / n,
            unique_similes: unique.len(),
            positions: PositionShare {
                start: share.start / n,
                middle: share.middle / n,
                end: share.end / n,
            },
        }
    }
}
