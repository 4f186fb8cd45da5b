use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use num_traits::Float as F;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Ranked;
use crate::autodiff::{AdamConfig, AdamState, Graph, Var};
use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::nn::layers::{Init, Initializer, Linear, Lookup, ParamSource};
use crate::nn::{Dropout, Encoder, ModelConfig};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;
use crate::vocab::{Vocabulary, SPECIALS};

/// Binary context/simile scorer: the shared encoder over
/// `[CLS] context [SEP] simile`, with a linear head on the CLS row.
#[derive(Debug, Clone)]
pub struct Matcher<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    word: ParamId,
    encoder: Encoder,
    head: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchTrainConfig {
    pub negatives: usize,
    /// Positives per step; each brings its negatives along.
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
}

impl Default for MatchTrainConfig {
    fn default() -> Self {
        Self {
            negatives: 5,
            batch_size: 8,
            steps: 300,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl<T: Real> Matcher<T> {
    fn layout(src: &mut impl ParamSource<T>, c: &ModelConfig) -> Result<(ParamId, Encoder, Linear)> {
        let word = src.param("matcher.embed.word", &[c.vocab_size, c.hidden_size], Init::Normal)?;
        let encoder = Encoder::new(src, "matcher.encoder", c)?;
        let head = Linear::new(src, "matcher.head", c.hidden_size, 1, true)?;
        Ok((word, encoder, head))
    }

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (word, encoder, head) = Self::layout(
            &mut Initializer {
                store: &mut params,
                rng: &mut rng,
                std: config.init_std,
            },
            &config,
        )?;
        Ok(Self {
            config,
            params,
            word,
            encoder,
            head,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (word, encoder, head) = Self::layout(&mut Lookup(&params), &config)?;
        Ok(Self {
            config,
            params,
            word,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// `[CLS] context [SEP] simile`, keeping the leading context characters
    /// that fit the encoder window.
    pub fn input_ids(&self, vocab: &Vocabulary, context: &str, simile: &str) -> Result<Vec<usize>> {
        let sim = vocab.encode(simile);
        let room = self
            .config
            .max_context_len
            .checked_sub(sim.len() + 2)
            .ok_or(Error::TooLong {
                what: "simile",
                len: sim.len(),
                max: self.config.max_context_len.saturating_sub(2),
            })?;
        let mut ids = Vec::with_capacity(self.config.max_context_len);
        ids.push(SPECIALS.cls);
        ids.extend(context.chars().take(room).map(|c| vocab.id(c)));
        ids.push(SPECIALS.sep);
        ids.extend(sim);
        Ok(ids)
    }

    /// Two-column logits `[0, s]` so that softmax gives `sigmoid(s)`.
    fn logits_in(&self, g: &mut Graph<'_, T>, ids: &[usize], drop: &mut Dropout) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::OutOfRange {
                what: "token id",
                index: bad,
                limit: self.config.vocab_size,
            });
        }
        let h = self.encoder.forward(g, self.word, ids, drop)?;
        let cls = g.slice_rows(h, 0, 1)?;
        let s = self.head.forward(g, cls)?;
        let zero = g.constant(1, 1, alloc::vec![T::zero()])?;
        g.concat_cols(&[zero, s])
    }

    /// Match probability in (0, 1).
    pub fn score(&self, vocab: &Vocabulary, context: &str, simile: &str) -> Result<f64> {
        let ids = self.input_ids(vocab, context, simile)?;
        let mut g = Graph::inference(&self.params);
        let l = self.logits_in(&mut g, &ids, &mut Dropout::eval())?;
        let s = g.value(l)[1].as_f64();
        Ok(1.0 / (1.0 + F::exp(-s)))
    }
}

/// For each record, `k` indices of records with a different simile, drawn
/// without replacement among distinct similes.
pub fn sample_negatives(records: &[CorpusRecord], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let distinct: BTreeSet<&str> = records.iter().map(|r| r.simile.as_str()).collect();
    if distinct.len() <= k {
        return Err(Error::Invalid(alloc::format!(
            "{k} negatives need more than {k} distinct similes, corpus has {}",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(records
        .iter()
        .map(|r| {
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            seen.insert(&r.simile);
            let mut out = Vec::with_capacity(k);
            while out.len() < k {
                let j = rng.random_range(0..records.len());
                if seen.insert(&records[j].simile) {
                    out.push(j);
                }
            }
            out
        })
        .collect())
}

/// Trains a matcher on gold pairs against sampled negatives with
/// cross-entropy.
pub fn match_rerank_train(
    records: &[CorpusRecord],
    vocab: &Vocabulary,
    config: ModelConfig,
    tc: &MatchTrainConfig,
    seed: u64,
) -> Result<Matcher<f32>> {
    if tc.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let negatives = sample_negatives(records, tc.negatives, seed)?;
    let mut m = Matcher::<f32>::new(config, seed)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    order_rng.set_stream(1);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
    drop_rng.set_stream(2);
    let rate = m.config.dropout_rate;
    let mut adam = AdamState::new(&m.params, tc.adam);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut step = 0;
    while step < tc.steps {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(tc.batch_size) {
            if step == tc.steps {
                break;
            }
            step += 1;
            let grads = {
                let mut g = Graph::with_params(&m.params);
                let mut drop = Dropout {
                    rate,
                    rng: Some(&mut drop_rng),
                };
                let mut rows = Vec::new();
                let mut targets = Vec::new();
                for &i in chunk {
                    let r = &records[i];
                    let pairs = core::iter::once((i, 1)).chain(negatives[i].iter().map(|&j| (j, 0)));
                    for (j, label) in pairs {
                        let ids = m.input_ids(vocab, &r.context, &records[j].simile)?;
                        rows.push(m.logits_in(&mut g, &ids, &mut drop)?);
                        targets.push(Some(label));
                    }
                }
                let logits = g.concat_rows(&rows)?;
                let loss = g.cross_entropy(logits, &targets, 0.0).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        step,
                        source: alloc::boxed::Box::new(e),
                    },
                    other => other,
                })?;
                g.backward(loss)?;
                g.param_grads()
            };
            m.params.set_grads(grads)?;
            adam.step(&mut m.params)?;
            m.params.clear_grads();
        }
    }
    Ok(m)
}

/// Candidates by descending match probability; ties keep input order.
pub fn match_rerank<T: Real>(
    candidates: &[alloc::string::String],
    context: &str,
    matcher: &Matcher<T>,
    vocab: &Vocabulary,
) -> Result<Vec<Ranked>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    let mut out = candidates
        .iter()
        .map(|c| {
            Ok(Ranked {
                simile: c.clone(),
                score: matcher.score(vocab, context, c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}
