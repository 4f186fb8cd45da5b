use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float as F;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Trained,
    External,
}

/// Token -> vector table. Tokens are looked up per character.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
    source: EmbeddingSource,
}

impl EmbeddingTable {
    pub fn new(dim: usize, source: EmbeddingSource) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: BTreeMap::new(),
            source,
        })
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                "embedding",
                alloc::format!("token {token:?} has {} values, table dimension is {}", vector.len(), self.dim),
            ));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "embedding" });
        }
        self.vectors.insert(token.to_string(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Vectors of the known characters of `text`, in order.
    pub fn lookup(&self, text: &str) -> Vec<Vec<f64>> {
        let mut buf = [0u8; 4];
        text.chars()
            .filter_map(|c| self.get(c.encode_utf8(&mut buf)))
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .collect()
    }

    /// Mean vector over known characters, `None` when none are known.
    pub fn mean(&self, text: &str) -> Option<Vec<f64>> {
        let vs = self.lookup(text);
        if vs.is_empty() {
            return None;
        }
        let mut m = vec![0.0; self.dim];
        for v in &vs {
            for (a, b) in m.iter_mut().zip(v) {
                *a += b;
            }
        }
        let n = vs.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        Some(m)
    }
}

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = F::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = F::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 2,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.05,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + F::exp(-x))
}

/// Character CBOW with negative sampling: the mean input vector of a
/// `window`-wide context predicts the centre character. Negatives are drawn
/// uniformly over the character set. Returns the input vectors.
pub fn train_cbow<'a>(texts: impl IntoIterator<Item = &'a str>, cfg: &CbowConfig, seed: u64) -> Result<EmbeddingTable> {
    if cfg.dim == 0 || cfg.window == 0 {
        return Err(Error::Config("cbow dim and window must be positive".into()));
    }
    let seqs: Vec<Vec<char>> = texts.into_iter().map(|t| t.chars().collect()).collect();
    let mut ids: BTreeMap<char, usize> = BTreeMap::new();
    for s in &seqs {
        for &c in s {
            let n = ids.len();
            ids.entry(c).or_insert(n);
        }
    }
    if ids.is_empty() {
        return Err(Error::Empty("embedding corpus"));
    }
    let v = ids.len();
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_in: Vec<f64> = (0..v * d).map(|_| (rng.random::<f64>() - 0.5) / d as f64).collect();
    let mut w_out = vec![0.0f64; v * d];
    let encoded: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().map(|c| ids[c]).collect()).collect();
    let mut h = vec![0.0; d];
    let mut grad_h = vec![0.0; d];
    for _ in 0..cfg.epochs {
        for seq in &encoded {
            for (i, &centre) in seq.iter().enumerate() {
                let ctx: Vec<usize> = (i.saturating_sub(cfg.window)..(i + cfg.window + 1).min(seq.len()))
                    .filter(|&j| j != i)
                    .map(|j| seq[j])
                    .collect();
                if ctx.is_empty() {
                    continue;
                }
                h.iter_mut().for_each(|x| *x = 0.0);
                for &c in &ctx {
                    for k in 0..d {
                        h[k] += w_in[c * d + k];
                    }
                }
                h.iter_mut().for_each(|x| *x /= ctx.len() as f64);
                grad_h.iter_mut().for_each(|x| *x = 0.0);
                for n in 0..=cfg.negatives {
                    let (target, label) = if n == 0 {
                        (centre, 1.0)
                    } else {
                        let t = rng.random_range(0..v);
                        if t == centre {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let out = &mut w_out[target * d..(target + 1) * d];
                    let score: f64 = out.iter().zip(&h).map(|(a, b)| a * b).sum();
                    let g = cfg.learning_rate * (label - sigmoid(score));
                    for k in 0..d {
                        grad_h[k] += g * out[k];
                        out[k] += g * h[k];
                    }
                }
                for &c in &ctx {
                    for k in 0..d {
                        w_in[c * d + k] += grad_h[k] / ctx.len() as f64;
                    }
                }
            }
        }
    }
    let mut table = EmbeddingTable::new(d, EmbeddingSource::Trained)?;
    for (c, &i) in &ids {
        table.insert(&c.to_string(), w_in[i * d..(i + 1) * d].iter().map(|&x| x as f32).collect())?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub simile: String,
    pub score: f64,
}

/// Ranks candidates by cosine between their mean vector and the context's.
/// Candidates without a known character score -1. Ties keep input order.
pub fn cbow_rerank(candidates: &[String], context: &str, table: &EmbeddingTable) -> Result<Vec<Ranked>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    let ctx = table
        .mean(context)
        .ok_or_else(|| Error::Invalid("context has no known tokens".into()))?;
    let mut out: Vec<Ranked> = candidates
        .iter()
        .map(|c| Ranked {
            simile: c.clone(),
            score: table.mean(c).map_or(-1.0, |m| cosine(&m, &ctx)),
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}
