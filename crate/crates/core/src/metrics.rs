//! Automatic metrics: positioning accuracy, corpus BLEU, perplexity,
//! distinct-n and embedding similarity, aggregated into a report.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float as F;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::locate_gen::{gold_log_probs, SimileSample};
use crate::nn::LocateGen;
use crate::retrieval::{cosine, EmbeddingTable};
use crate::tensor::Real;

fn aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(alloc::format!("{a} predictions for {b} references")));
    }
    Ok(())
}

pub fn positioning_accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    aligned(predictions.len(), golds.len())?;
    if golds.is_empty() {
        return Err(Error::Empty("position list"));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

fn ngram_counts<T: Ord>(seq: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus BLEU-n on a 0–100 scale: clipped n-gram precisions up to `n` with
/// uniform weights and the multi-bleu brevity penalty; no smoothing, so a
/// zero precision gives 0.
pub fn bleu<T: Ord>(hypotheses: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    aligned(hypotheses.len(), references.len())?;
    if hypotheses.is_empty() {
        return Err(Error::Empty("hypothesis set"));
    }
    if n == 0 {
        return Err(Error::Invalid("BLEU order must be at least 1".into()));
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (h, r) in hypotheses.iter().zip(references) {
            let rc = ngram_counts(r, k);
            for (g, c) in ngram_counts(h, k) {
                matched += c.min(rc.get(g).copied().unwrap_or(0));
                total += c;
            }
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += F::ln(matched as f64 / total as f64);
    }
    let c: usize = hypotheses.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c < r { F::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    Ok(100.0 * bp * F::exp(log_sum / n as f64))
}

/// BLEU-n over characters.
pub fn bleu_n(hypotheses: &[String], references: &[String], n: usize) -> Result<f64> {
    let h: Vec<Vec<char>> = hypotheses.iter().map(|s| s.chars().collect()).collect();
    let r: Vec<Vec<char>> = references.iter().map(|s| s.chars().collect()).collect();
    bleu(&h, &r, n)
}

/// `exp(-mean log-prob)` over all tokens of all sequences.
pub fn perplexity_from_log_probs<I: IntoIterator<Item = Vec<f64>>>(per_sequence: I) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for seq in per_sequence {
        sum += seq.iter().sum::<f64>();
        count += seq.len();
    }
    if count == 0 {
        return Err(Error::Empty("test set"));
    }
    Ok(F::exp(-sum / count as f64))
}

/// Teacher-forced perplexity of the gold similes (EOS included) at the gold
/// positions, without label smoothing.
pub fn perplexity<T: Real>(model: &LocateGen<T>, samples: &[SimileSample]) -> Result<f64> {
    let lps = samples.iter().map(|s| gold_log_probs(model, s)).collect::<Result<Vec<_>>>()?;
    perplexity_from_log_probs(lps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distinct {
    pub dist1: f64,
    pub dist2: f64,
    pub dist_s: f64,
}

/// Distinct unigram, bigram and whole-sequence ratios. A ratio with an empty
/// denominator is 0.
pub fn distinct<T: Ord>(hypotheses: &[Vec<T>]) -> Distinct {
    let ratio = |k: usize| {
        let mut uniq = BTreeSet::new();
        let mut total = 0usize;
        for h in hypotheses {
            if h.len() >= k {
                for w in h.windows(k) {
                    uniq.insert(w);
                    total += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            uniq.len() as f64 / total as f64
        }
    };
    let sentences: BTreeSet<&Vec<T>> = hypotheses.iter().collect();
    Distinct {
        dist1: ratio(1),
        dist2: ratio(2),
        dist_s: if hypotheses.is_empty() {
            0.0
        } else {
            sentences.len() as f64 / hypotheses.len() as f64
        },
    }
}

pub fn distinct_chars(hypotheses: &[String]) -> Distinct {
    let seqs: Vec<Vec<char>> = hypotheses.iter().map(|s| s.chars().collect()).collect();
    distinct(&seqs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub ea: f64,
    pub gm: f64,
    pub ve: f64,
}

fn extrema(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vs[0].clone();
    for v in &vs[1..] {
        for (o, &x) in out.iter_mut().zip(v) {
            if x.abs() > o.abs() || (x.abs() == o.abs() && x > *o) {
                *o = x;
            }
        }
    }
    out
}

fn mean(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut m = alloc::vec![0.0; vs[0].len()];
    for v in vs {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= vs.len() as f64);
    m
}

fn greedy_side(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / from.len() as f64
}

/// Embedding average, greedy match and vector extrema between a simile and
/// its context; unknown characters are skipped.
pub fn embedding_similarity(simile: &str, context: &str, table: &EmbeddingTable) -> Result<Similarity> {
    let s = table.lookup(simile);
    let c = table.lookup(context);
    if s.is_empty() || c.is_empty() {
        return Err(Error::Invalid("no known tokens on one side".into()));
    }
    Ok(Similarity {
        ea: cosine(&mean(&s), &mean(&c)),
        gm: (greedy_side(&s, &c) + greedy_side(&c, &s)) / 2.0,
        ve: cosine(&extrema(&s), &extrema(&c)),
    })
}

/// One system output: predicted position and generated simile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutput {
    pub position: usize,
    pub simile: String,
}

/// Length, similarity and diversity of a set of similes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimileProfile {
    pub mean_length: f64,
    pub ea: Option<f64>,
    pub gm: Option<f64>,
    pub ve: Option<f64>,
    pub dist1: f64,
    pub dist2: f64,
    pub dist_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sample_count: usize,
    pub positioning_accuracy: f64,
    pub ppl: Option<f64>,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub generated: SimileProfile,
    pub ground_truth: SimileProfile,
}

fn profile(similes: &[String], contexts: &[&str], table: Option<&EmbeddingTable>) -> SimileProfile {
    let n = similes.len() as f64;
    let d = distinct_chars(similes);
    let (mut ea, mut gm, mut ve) = (None, None, None);
    if let Some(t) = table {
        let sims: Vec<Similarity> = similes
            .iter()
            .zip(contexts)
            .filter_map(|(s, c)| embedding_similarity(s, c, t).ok())
            .collect();
        if !sims.is_empty() {
            let k = sims.len() as f64;
            ea = Some(sims.iter().map(|s| s.ea).sum::<f64>() / k);
            gm = Some(sims.iter().map(|s| s.gm).sum::<f64>() / k);
            ve = Some(sims.iter().map(|s| s.ve).sum::<f64>() / k);
        }
    }
    SimileProfile {
        mean_length: similes.iter().map(|s| s.chars().count() as f64).sum::<f64>() / n,
        ea,
        gm,
        ve,
        dist1: d.dist1,
        dist2: d.dist2,
        dist_s: d.dist_s,
    }
}

/// Aggregates every metric for aligned outputs and gold records. Embedding
/// scores average over the samples where both sides have known tokens.
pub fn evaluate(
    outputs: &[RunOutput],
    golds: &[CorpusRecord],
    ppl: Option<f64>,
    table: Option<&EmbeddingTable>,
) -> Result<MetricsReport> {
    aligned(outputs.len(), golds.len())?;
    if golds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pred: Vec<usize> = outputs.iter().map(|o| o.position).collect();
    let gold_pos: Vec<usize> = golds.iter().map(|g| g.position).collect();
    let hyps: Vec<String> = outputs.iter().map(|o| o.simile.clone()).collect();
    let refs: Vec<String> = golds.iter().map(|g| g.simile.clone()).collect();
    let contexts: Vec<&str> = golds.iter().map(|g| g.context.as_str()).collect();
    Ok(MetricsReport {
        sample_count: golds.len(),
        positioning_accuracy: positioning_accuracy(&pred, &gold_pos)?,
        ppl,
        bleu1: bleu_n(&hyps, &refs, 1)?,
        bleu2: bleu_n(&hyps, &refs, 2)?,
        bleu3: bleu_n(&hyps, &refs, 3)?,
        generated: profile(&hyps, &contexts, table),
        ground_truth: profile(&refs, &contexts, table),
    })
}

struct Opt(Option<f64>);

impl fmt::Display for Opt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:>8.3}"),
            None => write!(f, "{:>8}", "-"),
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "", "Acc", "PPL", "BLEU1", "BLEU2", "BLEU3", "Len", "EA", "GM", "VE", "Dist1", "Dist2", "DistS"
        )?;
        for (name, p, gen) in [("Generated", &self.generated, true), ("G.T.", &self.ground_truth, false)] {
            if gen {
                write!(
                    f,
                    "{name:<10} {:>8.3} {} {:>8.2} {:>8.2} {:>8.2}",
                    self.positioning_accuracy,
                    Opt(self.ppl),
                    self.bleu1,
                    self.bleu2,
                    self.bleu3
                )?;
            } else {
                write!(f, "{name:<10} {:>8} {:>8} {:>8} {:>8} {:>8}", "-", "-", "-", "-", "-")?;
            }
            writeln!(
                f,
                " {:>8.2} {} {} {} {:>8.3} {:>8.3} {:>8.3}",
                p.mean_length,
                Opt(p.ea),
                Opt(p.gm),
                Opt(p.ve),
                p.dist1,
                p.dist2,
                p.dist_s
            )?;
        }
        write!(f, "samples: {}", self.sample_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn accuracy_extremes() {
        assert_eq!(positioning_accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(positioning_accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert!(positioning_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let h = vec!["abcd".to_string(), "xyz".into()];
        for n in 1..=3 {
            assert!((bleu_n(&h, &h, n).unwrap() - 100.0).abs() < 1e-9);
        }
        assert_eq!(bleu_n(&["ab".into()], &["cd".into()], 1).unwrap(), 0.0);
        assert!(bleu_n(&[], &[], 1).is_err());
    }

    #[test]
    fn bleu_brevity_penalty() {
        // 2 of 2 unigrams match, c = 2 < r = 4: BP = e^(1 - 2)
        let b = bleu_n(&["ab".into()], &["abcd".into()], 1).unwrap();
        assert!((b - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn distinct_hand_counts() {
        assert!((distinct(&[words("a a a")]).dist1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct(&[words("a b"), words("b a")]).dist2, 1.0);
        let same = vec![words("x y"); 4];
        assert_eq!(distinct(&same).dist_s, 0.25);
    }

    #[test]
    fn perplexity_anchors() {
        let v = 37.0f64;
        let uniform = vec![vec![-v.ln(); 5], vec![-v.ln(); 3]];
        assert!((perplexity_from_log_probs(uniform).unwrap() - v).abs() < 1e-9);
        assert_eq!(perplexity_from_log_probs(vec![vec![0.0; 4]]).unwrap(), 1.0);
        assert!(perplexity_from_log_probs(Vec::<Vec<f64>>::new()).is_err());
    }
}
