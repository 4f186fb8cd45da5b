//! Transformer building blocks over a recording [`Graph`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var, MASKED};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Where parameter handles come from: fresh initialization or an existing store.
pub(crate) trait ParamSource<T: Real> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId>;
}

pub(crate) struct Initializer<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub std: f64,
}

impl<T: Real> ParamSource<T> for Initializer<'_, T> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        match init {
            Init::Normal => self.store.insert_normal(name, shape, self.std, self.rng),
            Init::Zeros => self.store.insert_const(name, shape, 0.0),
            Init::Ones => self.store.insert_const(name, shape, 1.0),
        }
    }
}

/// Resolves handles against an already populated store, checking shapes.
pub(crate) struct Lookup<'a, T>(pub &'a ParamStore<T>);

impl<T: Real> ParamSource<T> for Lookup<'_, T> {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<ParamId> {
        let id = self.0.id(name)?;
        let t = self.0.get(id);
        let numel: usize = shape.iter().product();
        if t.numel() != numel || t.cols() != *shape.last().unwrap_or(&1) {
            return Err(Error::Config(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(id)
    }
}

/// Dropout switch threaded through a forward pass; `rng == None` means eval.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub(crate) fn apply<T: Real>(&mut self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, rng),
            _ => Ok(x),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(src: &mut impl ParamSource<T>, name: &str, inp: usize, out: usize, bias: bool) -> Result<Self> {
        let w = src.param(&format!("{name}.w"), &[inp, out], Init::Normal)?;
        let b = if bias {
            Some(src.param(&format!("{name}.b"), &[1, out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
    eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(src: &mut impl ParamSource<T>, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gain: src.param(&format!("{name}.gain"), &[1, dim], Init::Ones)?,
            bias: src.param(&format!("{name}.bias"), &[1, dim], Init::Zeros)?,
            eps,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias, self.eps)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new<T: Real>(src: &mut impl ParamSource<T>, name: &str, hidden: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(src, &format!("{name}.q"), hidden, hidden, true)?,
            k: Linear::new(src, &format!("{name}.k"), hidden, hidden, true)?,
            v: Linear::new(src, &format!("{name}.v"), hidden, hidden, true)?,
            o: Linear::new(src, &format!("{name}.o"), hidden, hidden, true)?,
            heads,
        })
    }

    /// Multi-head attention of `query` rows over `memory` rows. `mask` is an
    /// additive `query_len × memory_len` constant.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, query: Var, memory: Var, mask: Option<Var>) -> Result<Var> {
        let hidden = g.shape(query).1;
        let dh = hidden / self.heads;
        let q = self.q.forward(g, query)?;
        let q = g.scale(q, T::one() / T::of(dh as f64).sqrt())?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let mut ctx = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let mut scores = g.matmul_nt(qh, kh)?;
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let p = g.softmax(scores)?;
            ctx.push(g.matmul(p, vh)?);
        }
        let joined = if ctx.len() == 1 { ctx[0] } else { g.concat_cols(&ctx)? };
        self.o.forward(g, joined)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    inp: Linear,
    out: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(src: &mut impl ParamSource<T>, name: &str, hidden: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            inp: Linear::new(src, &format!("{name}.in"), hidden, ffn, true)?,
            out: Linear::new(src, &format!("{name}.out"), ffn, hidden, true)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.inp.forward(g, x)?;
        let h = g.gelu(h)?;
        self.out.forward(g, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new<T: Real>(src: &mut impl ParamSource<T>, name: &str, dims: &Dims) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(src, &format!("{name}.ln1"), dims.hidden, dims.eps)?,
            attn: Attention::new(src, &format!("{name}.attn"), dims.hidden, dims.heads)?,
            ln2: LayerNorm::new(src, &format!("{name}.ln2"), dims.hidden, dims.eps)?,
            ffn: FeedForward::new(src, &format!("{name}.ffn"), dims.hidden, dims.ffn)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: Option<Var>, drop: &mut Dropout) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, h, h, mask)?;
        let a = drop.apply(g, a)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        let f = drop.apply(g, f)?;
        g.add(x, f)
    }
}

/// Pre-norm causal self-attention, cross-attention and feed-forward block.
#[derive(Debug, Clone)]
pub(crate) struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new<T: Real>(src: &mut impl ParamSource<T>, name: &str, dims: &Dims) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(src, &format!("{name}.ln1"), dims.hidden, dims.eps)?,
            self_attn: Attention::new(src, &format!("{name}.self_attn"), dims.hidden, dims.heads)?,
            ln2: LayerNorm::new(src, &format!("{name}.ln2"), dims.hidden, dims.eps)?,
            cross_attn: Attention::new(src, &format!("{name}.cross_attn"), dims.hidden, dims.heads)?,
            ln3: LayerNorm::new(src, &format!("{name}.ln3"), dims.hidden, dims.eps)?,
            ffn: FeedForward::new(src, &format!("{name}.ffn"), dims.hidden, dims.ffn)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        memory: Var,
        causal: Option<Var>,
        cross_mask: Option<Var>,
        drop: &mut Dropout,
    ) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.self_attn.forward(g, h, h, causal)?;
        let a = drop.apply(g, a)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let c = self.cross_attn.forward(g, h, memory, cross_mask)?;
        let c = drop.apply(g, c)?;
        let x = g.add(x, c)?;
        let h = self.ln3.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        let f = drop.apply(g, f)?;
        g.add(x, f)
    }
}

pub(crate) struct Dims {
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub eps: f64,
}

/// Additive `rows × keys` mask excluding the flagged key columns.
pub(crate) fn key_mask<T: Real>(g: &mut Graph<'_, T>, rows: usize, excluded: &[bool]) -> Result<Option<Var>> {
    if !excluded.iter().any(|&e| e) {
        return Ok(None);
    }
    let row: Vec<T> = excluded.iter().map(|&e| if e { T::of(MASKED) } else { T::zero() }).collect();
    let data = row.iter().copied().cycle().take(rows * excluded.len()).collect();
    g.constant(rows, excluded.len(), data).map(Some)
}

/// Additive lower-triangular mask: position i may attend to j <= i.
pub(crate) fn causal_mask<T: Real>(g: &mut Graph<'_, T>, len: usize) -> Result<Option<Var>> {
    if len == 1 {
        return Ok(None);
    }
    let mut data = vec![T::zero(); len * len];
    for i in 0..len {
        for j in i + 1..len {
            data[i * len + j] = T::of(MASKED);
        }
    }
    g.constant(len, len, data).map(Some)
}
