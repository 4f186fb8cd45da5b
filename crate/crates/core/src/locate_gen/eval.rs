use alloc::vec::Vec;

use crate::autodiff::log_softmax;
use crate::error::{Error, Result};
use crate::nn::{select_insertion, LocateGen};
use crate::tensor::Real;

use super::decode::{greedy_decode, ModelScorer};
use super::SimileSample;

/// Model-level accuracies over a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    /// Fraction of samples whose argmax pointer equals the gold slot.
    pub positioning_accuracy: f64,
    /// Teacher-forced argmax accuracy over every gold target token, EOS included.
    pub token_accuracy: f64,
    /// Fraction of samples whose greedy decode at the gold slot equals the gold simile.
    pub exact_match: f64,
}

/// Argmax pointer slot per sample.
pub fn predict_positions<T: Real>(model: &LocateGen<T>, samples: &[SimileSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            let enc = model.encode(&s.context_ids)?;
            Ok(select_insertion(&model.pointer_distribution(&enc)?))
        })
        .collect()
}

/// Teacher-forced log-probabilities of the gold simile tokens (after BOS) at
/// the gold slot, without label smoothing.
pub fn gold_log_probs<T: Real>(model: &LocateGen<T>, sample: &SimileSample) -> Result<Vec<f64>> {
    let enc = model.encode(&sample.context_ids)?;
    ModelScorer::new(model, &enc, sample.gold_position)?.token_log_probs(&sample.simile_ids)
}

pub fn fit_report<T: Real>(model: &LocateGen<T>, samples: &[SimileSample]) -> Result<FitReport> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let (mut pos_hits, mut tok_hits, mut tokens, mut exact) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let enc = model.encode(&s.context_ids)?;
        if select_insertion(&model.pointer_distribution(&enc)?) == s.gold_position {
            pos_hits += 1;
        }
        let bias = model.insertion_bias(&enc, s.gold_position)?;
        let (input, gold) = s.decoder_io();
        let logits = model.decoder_logits(&enc, input, &bias)?;
        for (t, &g) in gold.iter().enumerate() {
            if select_insertion(&log_softmax(logits.row(t))) == g {
                tok_hits += 1;
            }
        }
        tokens += gold.len();
        let out = greedy_decode(&ModelScorer::new(model, &enc, s.gold_position)?)?;
        if out.tokens == s.simile_ids {
            exact += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(FitReport {
        positioning_accuracy: pos_hits as f64 / n,
        token_accuracy: tok_hits as f64 / tokens as f64,
        exact_match: exact as f64 / n,
    })
}
