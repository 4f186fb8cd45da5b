//! The Locate&Gen encoder-decoder: a pointer head over encoder states picks
//! the insertion slot, and a projection of that slot's state is added to every
//! decoder input embedding.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{
    causal_mask, key_mask, DecoderLayer, Dims, Dropout, EncoderLayer, Init, Initializer, LayerNorm,
    Linear, Lookup, ParamSource,
};
use crate::autodiff::{softmax_in_place, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};
use crate::vocab::SPECIALS;

/// Which positional table an embedding lookup uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

/// Encoder states `h_0 … h_N` (row 0 is CLS) plus the padding flags.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub hidden: Tensor<T>,
    pub padding: Vec<bool>,
}

impl<T: Real> EncoderOutput<T> {
    /// Number of encoder rows, padded ones included.
    pub fn len(&self) -> usize {
        self.padding.len()
    }

    pub fn is_empty(&self) -> bool {
        self.padding.is_empty()
    }

    pub fn is_real(&self, index: usize) -> bool {
        index < self.padding.len() && !self.padding[index]
    }
}

/// Embedding + transformer stack shared by the Locate&Gen encoder and the
/// cross-matching reranker.
#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    position: ParamId,
    segment: ParamId,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
    max_len: usize,
}

impl Encoder {
    pub fn new<T: Real>(src: &mut impl ParamSource<T>, prefix: &str, c: &ModelConfig) -> Result<Self> {
        let dims = dims(c);
        let position = src.param(&format!("{prefix}.position"), &[c.max_context_len, c.hidden_size], Init::Normal)?;
        let segment = src.param(&format!("{prefix}.segment"), &[1, c.hidden_size], Init::Normal)?;
        let layers = (0..c.encoder_layers)
            .map(|i| EncoderLayer::new(src, &format!("{prefix}.layer{i}"), &dims))
            .collect::<Result<_>>()?;
        let final_ln = LayerNorm::new(src, &format!("{prefix}.final_ln"), c.hidden_size, c.layer_norm_eps)?;
        Ok(Self {
            position,
            segment,
            layers,
            final_ln,
            max_len: c.max_context_len,
        })
    }

    /// Word + segment(0) + learned position embeddings.
    pub fn embed<T: Real>(&self, g: &mut Graph<'_, T>, word: ParamId, ids: &[usize], offset: usize) -> Result<Var> {
        check_len("encoder input", ids.len() + offset, self.max_len)?;
        let table = g.param(word);
        let w = g.gather(table, ids)?;
        let pos_table = g.param(self.position);
        let positions: Vec<usize> = (offset..offset + ids.len()).collect();
        let p = g.gather(pos_table, &positions)?;
        let x = g.add(w, p)?;
        let seg = g.param(self.segment);
        g.add_row(x, seg)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, word: ParamId, ids: &[usize], drop: &mut Dropout) -> Result<Var> {
        let mut x = self.embed(g, word, ids, 0)?;
        x = drop.apply(g, x)?;
        let padding: Vec<bool> = ids.iter().map(|&i| i == SPECIALS.pad).collect();
        let mask = key_mask(g, ids.len(), &padding)?;
        for layer in &self.layers {
            x = layer.forward(g, x, mask, drop)?;
        }
        self.final_ln.forward(g, x)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    position: ParamId,
    layers: Vec<DecoderLayer>,
    final_ln: LayerNorm,
    max_len: usize,
}

#[derive(Debug, Clone)]
pub struct LocateGen<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    word: ParamId,
    encoder: Encoder,
    pointer: Linear,
    insertion: Linear,
    decoder: Decoder,
}

fn dims(c: &ModelConfig) -> Dims {
    Dims {
        hidden: c.hidden_size,
        heads: c.attention_heads,
        ffn: c.ffn_size,
        eps: c.layer_norm_eps,
    }
}

fn check_len(what: &'static str, len: usize, max: usize) -> Result<()> {
    if len > max {
        Err(Error::TooLong { what, len, max })
    } else {
        Ok(())
    }
}

impl<T: Real> LocateGen<T> {
    /// Fresh model: N(0, init_std) weights, zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let mut src = Initializer {
            store: &mut store,
            rng: &mut rng,
            std,
        };
        let (word, encoder, pointer, insertion, decoder) = Self::layout(&mut src, &config)?;
        Ok(Self {
            config,
            params: store,
            word,
            encoder,
            pointer,
            insertion,
            decoder,
        })
    }

    /// Wraps an existing parameter store (e.g. a loaded checkpoint).
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (word, encoder, pointer, insertion, decoder) = Self::layout(&mut Lookup(&params), &config)?;
        Ok(Self {
            config,
            params,
            word,
            encoder,
            pointer,
            insertion,
            decoder,
        })
    }

    #[allow(clippy::type_complexity)]
    fn layout(src: &mut impl ParamSource<T>, c: &ModelConfig) -> Result<(ParamId, Encoder, Linear, Linear, Decoder)> {
        let word = src.param("embed.word", &[c.vocab_size, c.hidden_size], Init::Normal)?;
        let encoder = Encoder::new(src, "encoder", c)?;
        let pointer = Linear::new(src, "pointer", c.hidden_size, 1, false)?;
        let insertion = Linear::new(src, "insertion_bias", c.hidden_size, c.hidden_size, false)?;
        let dims = dims(c);
        let position = src.param("decoder.position", &[c.max_simile_len, c.hidden_size], Init::Normal)?;
        let layers = (0..c.decoder_layers)
            .map(|i| DecoderLayer::new(src, &format!("decoder.layer{i}"), &dims))
            .collect::<Result<_>>()?;
        let final_ln = LayerNorm::new(src, "decoder.final_ln", c.hidden_size, c.layer_norm_eps)?;
        let decoder = Decoder {
            position,
            layers,
            final_ln,
            max_len: c.max_simile_len,
        };
        Ok((word, encoder, pointer, insertion, decoder))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Id of the tied word-embedding / output-projection table.
    pub fn word_embedding(&self) -> ParamId {
        self.word
    }

    pub fn pointer_weight(&self) -> ParamId {
        self.pointer.weight()
    }

    pub fn insertion_weight(&self) -> ParamId {
        self.insertion.weight()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.config.vocab_size) {
            Some(&bad) => Err(Error::OutOfRange {
                what: "token id",
                index: bad,
                limit: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn encode_in(&self, g: &mut Graph<'_, T>, context: &[usize], drop: &mut Dropout) -> Result<Var> {
        if context.first() != Some(&SPECIALS.cls) {
            return Err(Error::Invalid("encoder input must start with CLS".into()));
        }
        self.check_ids(context)?;
        self.encoder.forward(g, self.word, context, drop)
    }

    /// Pointer logits as a `1 × (N+1)` row with padded slots masked out.
    pub(crate) fn pointer_logits_in(&self, g: &mut Graph<'_, T>, enc: Var, padding: &[bool]) -> Result<Var> {
        if padding.iter().all(|&p| p) {
            return Err(Error::Invalid("all encoder positions are masked".into()));
        }
        let logits = self.pointer.forward(g, enc)?;
        let n = g.shape(logits).0;
        let row = g.reshape(logits, 1, n)?;
        match key_mask(g, 1, padding)? {
            Some(m) => g.add(row, m),
            None => Ok(row),
        }
    }

    /// `k = h_i · W_IB`, or `None` when the insertion bias is ablated.
    pub(crate) fn insertion_bias_in(&self, g: &mut Graph<'_, T>, enc: Var, index: usize) -> Result<Option<Var>> {
        if !self.config.use_insertion_bias {
            return Ok(None);
        }
        let h = g.slice_rows(enc, index, 1)?;
        self.insertion.forward(g, h).map(Some)
    }

    /// Decoder logits `t × V` for every prefix position.
    pub(crate) fn decode_in(
        &self,
        g: &mut Graph<'_, T>,
        enc: Var,
        enc_padding: &[bool],
        prev: &[usize],
        bias: Option<Var>,
        drop: &mut Dropout,
    ) -> Result<Var> {
        if prev.is_empty() {
            return Err(Error::Empty("decoder prefix"));
        }
        check_len("decoder input", prev.len(), self.decoder.max_len)?;
        self.check_ids(prev)?;
        let table = g.param(self.word);
        let w = g.gather(table, prev)?;
        let pos_table = g.param(self.decoder.position);
        let positions: Vec<usize> = (0..prev.len()).collect();
        let p = g.gather(pos_table, &positions)?;
        let mut x = g.add(w, p)?;
        if let Some(k) = bias {
            x = g.add_row(x, k)?;
        }
        x = drop.apply(g, x)?;
        let causal = causal_mask(g, prev.len())?;
        let cross = key_mask(g, prev.len(), enc_padding)?;
        for layer in &self.decoder.layers {
            x = layer.forward(g, x, enc, causal, cross, drop)?;
        }
        let s = self.decoder.final_ln.forward(g, x)?;
        g.matmul_nt(s, table)
    }

    /// Embedding rows for `ids` placed at positions `offset..`.
    pub fn embed(&self, ids: &[usize], offset: usize, side: Side) -> Result<Tensor<T>> {
        self.check_ids(ids)?;
        let mut g = Graph::inference(&self.params);
        let v = match side {
            Side::Encoder => self.encoder.embed(&mut g, self.word, ids, offset)?,
            Side::Decoder => {
                check_len("decoder input", ids.len() + offset, self.decoder.max_len)?;
                let table = g.param(self.word);
                let w = g.gather(table, ids)?;
                let pos_table = g.param(self.decoder.position);
                let positions: Vec<usize> = (offset..offset + ids.len()).collect();
                let p = g.gather(pos_table, &positions)?;
                g.add(w, p)?
            }
        };
        Ok(g.to_tensor(v))
    }

    /// Encodes a CLS-prefixed context; PAD ids are masked from attention.
    pub fn encode(&self, context: &[usize]) -> Result<EncoderOutput<T>> {
        let mut g = Graph::inference(&self.params);
        let h = self.encode_in(&mut g, context, &mut Dropout::eval())?;
        Ok(EncoderOutput {
            hidden: g.to_tensor(h),
            padding: context.iter().map(|&i| i == SPECIALS.pad).collect(),
        })
    }

    /// Insertion-position distribution over encoder slots `0..=N`; padded
    /// slots get probability exactly zero.
    pub fn pointer_distribution(&self, enc: &EncoderOutput<T>) -> Result<Vec<T>> {
        let mut g = Graph::inference(&self.params);
        let h = g.input(&enc.hidden)?;
        let logits = self.pointer_logits_in(&mut g, h, &enc.padding)?;
        let mut probs = g.value(logits).to_vec();
        softmax_in_place(&mut probs);
        for (p, &pad) in probs.iter_mut().zip(&enc.padding) {
            if pad {
                *p = T::zero();
            }
        }
        Ok(probs)
    }

    /// Insertion bias vector `1 × H` for slot `index` (zeros when ablated).
    pub fn insertion_bias(&self, enc: &EncoderOutput<T>, index: usize) -> Result<Tensor<T>> {
        if !enc.is_real(index) {
            return Err(Error::OutOfRange {
                what: "insertion position",
                index,
                limit: enc.len(),
            });
        }
        if !self.config.use_insertion_bias {
            return Ok(Tensor::zeros(&[1, self.config.hidden_size]));
        }
        let mut g = Graph::inference(&self.params);
        let h = g.input(&enc.hidden)?;
        let k = self.insertion_bias_in(&mut g, h, index)?.expect("bias enabled");
        Ok(g.to_tensor(k))
    }

    /// Decoder logits for every position of `prev` (BOS-prefixed).
    pub fn decoder_logits(&self, enc: &EncoderOutput<T>, prev: &[usize], bias: &Tensor<T>) -> Result<Tensor<T>> {
        if prev.first() != Some(&SPECIALS.bos) {
            return Err(Error::Invalid("decoder prefix must start with BOS".into()));
        }
        let mut g = Graph::inference(&self.params);
        let h = g.input(&enc.hidden)?;
        let k = if self.config.use_insertion_bias {
            if bias.numel() != self.config.hidden_size {
                return Err(Error::shape("decode_step", "insertion bias must have hidden_size values"));
            }
            Some(g.constant(1, self.config.hidden_size, bias.data().to_vec())?)
        } else {
            None
        };
        let logits = self.decode_in(&mut g, h, &enc.padding, prev, k, &mut Dropout::eval())?;
        Ok(g.to_tensor(logits))
    }

    /// Logits over the vocabulary for the token following `prev`.
    pub fn decode_step(&self, enc: &EncoderOutput<T>, prev: &[usize], bias: &Tensor<T>) -> Result<Vec<T>> {
        let logits = self.decoder_logits(enc, prev, bias)?;
        Ok(logits.row(logits.rows() - 1).to_vec())
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn select_insertion<T: Real>(dist: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    best
}
