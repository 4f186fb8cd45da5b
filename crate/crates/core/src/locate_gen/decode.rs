use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::autodiff::log_softmax;
use crate::error::{Error, Result};
use crate::nn::{EncoderOutput, LocateGen};
use crate::tensor::{Real, Tensor};
use crate::vocab::SPECIALS;

/// Next-token log-probabilities given a BOS-prefixed prefix.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    /// Longest prefix the scorer accepts (BOS included).
    fn max_prefix(&self) -> usize;
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// Decoder conditioned on one encoded context and one insertion slot.
pub struct ModelScorer<'m, T> {
    model: &'m LocateGen<T>,
    enc: &'m EncoderOutput<T>,
    bias: Tensor<T>,
}

impl<'m, T: Real> ModelScorer<'m, T> {
    pub fn new(model: &'m LocateGen<T>, enc: &'m EncoderOutput<T>, position: usize) -> Result<Self> {
        let bias = model.insertion_bias(enc, position)?;
        Ok(Self { model, enc, bias })
    }

    /// Teacher-forced log-probability of every token after BOS in `tokens`.
    pub fn token_log_probs(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.len() < 2 {
            return Err(Error::Invalid("sequence needs BOS and at least one token".into()));
        }
        let logits = self.model.decoder_logits(self.enc, &tokens[..tokens.len() - 1], &self.bias)?;
        Ok(tokens[1..]
            .iter()
            .enumerate()
            .map(|(t, &tok)| log_softmax(logits.row(t))[tok].as_f64())
            .collect())
    }

    /// Sum of [`Self::token_log_probs`].
    pub fn sequence_log_prob(&self, tokens: &[usize]) -> Result<f64> {
        Ok(self.token_log_probs(tokens)?.iter().sum())
    }
}

impl<T: Real> StepScorer for ModelScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn max_prefix(&self) -> usize {
        self.model.config().max_simile_len
    }

    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.model.decode_step(self.enc, prefix, &self.bias)?;
        Ok(log_softmax(&logits).into_iter().map(|l| l.as_f64()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// BOS-prefixed token ids, EOS included when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Generated ids without BOS and the closing EOS.
    pub fn body(&self) -> &[usize] {
        let end = if self.finished { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1..end]
    }
}

/// Higher score first, then lexicographically smaller token sequence.
fn rank(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Argmax decoding (ties to the lowest id) until EOS or the length cap.
pub fn greedy_decode(scorer: &impl StepScorer) -> Result<BeamHypothesis> {
    let mut tokens = vec![SPECIALS.bos];
    let mut log_prob = 0.0;
    while tokens.len() <= scorer.max_prefix() {
        let lp = scorer.next_log_probs(&tokens)?;
        let mut best = 0;
        for (i, &l) in lp.iter().enumerate().skip(1) {
            if l > lp[best] {
                best = i;
            }
        }
        log_prob += lp[best];
        tokens.push(best);
        if best == SPECIALS.eos {
            return Ok(BeamHypothesis {
                tokens,
                log_prob,
                finished: true,
            });
        }
    }
    Ok(BeamHypothesis {
        tokens,
        log_prob,
        finished: false,
    })
}

/// Length-unnormalized beam search. Hypotheses that emit EOS retire into the
/// result pool; the search ends once no live hypothesis can beat the
/// `beam_size`-th retired score, or at the length cap. Zero-probability
/// extensions are never taken.
pub fn beam_search(scorer: &impl StepScorer, beam_size: usize) -> Result<Vec<BeamHypothesis>> {
    if beam_size == 0 {
        return Err(Error::Invalid("beam_size must be at least 1".into()));
    }
    let mut alive = vec![BeamHypothesis {
        tokens: vec![SPECIALS.bos],
        log_prob: 0.0,
        finished: false,
    }];
    let mut done: Vec<BeamHypothesis> = Vec::new();
    while !alive.is_empty() && alive[0].tokens.len() <= scorer.max_prefix() {
        let mut cand = Vec::with_capacity(alive.len() * scorer.vocab_size());
        for h in &alive {
            let lp = scorer.next_log_probs(&h.tokens)?;
            for (tok, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = Vec::with_capacity(h.tokens.len() + 1);
                tokens.extend_from_slice(&h.tokens);
                tokens.push(tok);
                cand.push(BeamHypothesis {
                    tokens,
                    log_prob: h.log_prob + l,
                    finished: tok == SPECIALS.eos,
                });
            }
        }
        if cand.len() > beam_size {
            cand.select_nth_unstable_by(beam_size - 1, rank);
            cand.truncate(beam_size);
        }
        cand.sort_by(rank);
        alive.clear();
        for c in cand {
            if c.finished {
                done.push(c);
            } else {
                alive.push(c);
            }
        }
        if done.len() >= beam_size {
            done.sort_by(rank);
            done.truncate(beam_size);
            let floor = done[beam_size - 1].log_prob;
            // scores only fall as tokens append
            if alive.first().is_none_or(|h| h.log_prob <= floor) {
                alive.clear();
            }
        }
    }
    done.append(&mut alive);
    done.sort_by(rank);
    done.truncate(beam_size);
    Ok(done)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 6;
    const B: usize = 7;
    const EOS: usize = SPECIALS.eos;

    /// Three live symbols {A, B, EOS}; distributions depend on the prefix.
    struct Table {
        max: usize,
    }

    impl Table {
        fn probs(prefix: &[usize]) -> [f64; 3] {
            match prefix[1..] {
                [] => [0.5, 0.4, 0.1],
                [A] => [0.3, 0.3, 0.4],
                [B] => [0.05, 0.05, 0.9],
                [A, A] => [0.2, 0.2, 0.6],
                [A, B] => [0.1, 0.1, 0.8],
                [B, A] => [0.7, 0.2, 0.1],
                [B, B] => [0.3, 0.3, 0.4],
                _ => [1.0 / 3.0; 3],
            }
        }
    }

    impl StepScorer for Table {
        fn vocab_size(&self) -> usize {
            8
        }
        fn max_prefix(&self) -> usize {
            self.max
        }
        fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let p = Self::probs(prefix);
            let mut lp = vec![f64::NEG_INFINITY; 8];
            lp[A] = p[0].ln();
            lp[B] = p[1].ln();
            lp[EOS] = p[2].ln();
            Ok(lp)
        }
    }

    fn enumerate(max: usize) -> Vec<BeamHypothesis> {
        let mut out = Vec::new();
        let mut stack = vec![(vec![SPECIALS.bos], 0.0)];
        while let Some((seq, lp)) = stack.pop() {
            if seq.len() > max {
                out.push(BeamHypothesis {
                    tokens: seq,
                    log_prob: lp,
                    finished: false,
                });
                continue;
            }
            let p = Table::probs(&seq);
            for (tok, pr) in [(A, p[0]), (B, p[1]), (EOS, p[2])] {
                let mut s = seq.clone();
                s.push(tok);
                if tok == EOS {
                    out.push(BeamHypothesis {
                        tokens: s,
                        log_prob: lp + pr.ln(),
                        finished: true,
                    });
                } else {
                    stack.push((s, lp + pr.ln()));
                }
            }
        }
        out.sort_by(rank);
        out
    }

    #[test]
    fn beam_finds_exhaustive_optimum() {
        let t = Table { max: 3 };
        let all = enumerate(3);
        // greedy takes A then EOS (0.5 * 0.4 = 0.2); B, EOS scores 0.36
        let greedy = greedy_decode(&t).unwrap();
        assert_eq!(greedy.tokens, vec![SPECIALS.bos, A, EOS]);
        assert_eq!(all[0].tokens, vec![SPECIALS.bos, B, EOS]);
        let beams = beam_search(&t, 27).unwrap();
        assert_eq!(beams[0].tokens, all[0].tokens);
        assert!((beams[0].log_prob - 0.36f64.ln()).abs() < 1e-12);
        let beams = beam_search(&t, 2).unwrap();
        assert_eq!(beams[0].tokens, all[0].tokens);
    }

    #[test]
    fn beam_one_is_greedy() {
        for max in 1..5 {
            let t = Table { max };
            assert_eq!(beam_search(&t, 1).unwrap(), vec![greedy_decode(&t).unwrap()]);
        }
    }

    #[test]
    fn output_sorted_and_bounded() {
        let t = Table { max: 3 };
        for k in 1..10 {
            let beams = beam_search(&t, k).unwrap();
            assert!(beams.len() <= k);
            for w in beams.windows(2) {
                assert!(w[0].log_prob >= w[1].log_prob);
            }
            for h in &beams {
                assert_eq!(h.finished, h.tokens.last() == Some(&EOS));
            }
        }
        assert!(beam_search(&t, 0).is_err());
    }

    #[test]
    fn length_cap_leaves_hypotheses_unfinished() {
        let t = Table { max: 1 };
        let g = greedy_decode(&t).unwrap();
        assert_eq!(g.tokens, vec![SPECIALS.bos, A]);
        assert!(!g.finished);
        assert_eq!(g.body(), &[A]);
    }

    struct EosFirst;

    impl StepScorer for EosFirst {
        fn vocab_size(&self) -> usize {
            8
        }
        fn max_prefix(&self) -> usize {
            16
        }
        fn next_log_probs(&self, _: &[usize]) -> Result<Vec<f64>> {
            let mut lp = vec![-30.0; 8];
            lp[EOS] = 0.0;
            Ok(lp)
        }
    }

    #[test]
    fn eos_first_gives_empty_body() {
        let g = greedy_decode(&EosFirst).unwrap();
        assert!(g.finished);
        assert!(g.body().is_empty());
    }
}
