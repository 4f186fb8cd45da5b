use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Dropout, LocateGen};
use crate::tensor::Real;
use crate::vocab::SPECIALS;

use super::SimileSample;

/// Loss values for one batch; `total == positioning + generation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    pub total: f64,
    pub positioning: f64,
    pub generation: f64,
}

pub(crate) struct LossVars {
    pub total: Var,
    pub positioning: Var,
    pub generation: Var,
    pub samples: usize,
    pub tokens: usize,
}

/// Records the joint objective for `batch` on `g`. The positioning term is
/// the mean pointer cross-entropy per sample; the generation term is the
/// label-smoothed cross-entropy averaged over every target token, with the
/// decoder conditioned on the gold slot.
pub(crate) fn joint_loss_in<T: Real>(
    model: &LocateGen<T>,
    g: &mut Graph<'_, T>,
    batch: &[SimileSample],
    drop: &mut Dropout,
) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let smoothing = model.config().label_smoothing;
    let mut pointer_rows = Vec::with_capacity(batch.len());
    let mut decoder_rows = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for s in batch {
        s.fits(model.config())?;
        let padding: Vec<bool> = s.context_ids.iter().map(|&i| i == SPECIALS.pad).collect();
        let enc = model.encode_in(g, &s.context_ids, drop)?;
        let ptr = model.pointer_logits_in(g, enc, &padding)?;
        pointer_rows.push(g.cross_entropy(ptr, &[Some(s.gold_position)], 0.0)?);
        let bias = model.insertion_bias_in(g, enc, s.gold_position)?;
        let (input, gold) = s.decoder_io();
        decoder_rows.push(model.decode_in(g, enc, &padding, input, bias, drop)?);
        targets.extend(gold.iter().map(|&t| Some(t)));
    }
    let per_sample = g.concat_rows(&pointer_rows)?;
    let positioning = g.mean(per_sample)?;
    let logits = g.concat_rows(&decoder_rows)?;
    let generation = g.cross_entropy(logits, &targets, smoothing)?;
    let total = g.add(positioning, generation)?;
    Ok(LossVars {
        total,
        positioning,
        generation,
        samples: batch.len(),
        tokens: targets.len(),
    })
}

/// Evaluation-mode joint loss (no dropout).
pub fn joint_loss<T: Real>(model: &LocateGen<T>, batch: &[SimileSample]) -> Result<JointLoss> {
    let mut g = Graph::inference(model.params());
    let v = joint_loss_in(model, &mut g, batch, &mut Dropout::eval())?;
    Ok(read(&g, &v))
}

/// Joint loss and the gradient of its total with respect to every parameter,
/// in store order.
pub fn joint_loss_grads<T: Real>(model: &LocateGen<T>, batch: &[SimileSample]) -> Result<(JointLoss, Vec<Vec<T>>)> {
    let mut g = Graph::with_params(model.params());
    let v = joint_loss_in(model, &mut g, batch, &mut Dropout::eval())?;
    let loss = read(&g, &v);
    g.backward(v.total)?;
    Ok((loss, g.param_grads()))
}

pub(crate) fn read<T: Real>(g: &Graph<'_, T>, v: &LossVars) -> JointLoss {
    let positioning = g.scalar(v.positioning).as_f64();
    let generation = g.scalar(v.generation).as_f64();
    JointLoss {
        total: g.scalar(v.total).as_f64(),
        positioning,
        generation,
    }
}

/// Joint loss over a large set, evaluated in chunks and re-weighted so the
/// result equals a single-batch evaluation.
pub fn dataset_loss<T: Real>(model: &LocateGen<T>, samples: &[SimileSample], chunk: usize) -> Result<JointLoss> {
    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let (mut pos, mut gen, mut n, mut tokens) = (0.0, 0.0, 0usize, 0usize);
    for part in samples.chunks(chunk.max(1)) {
        let mut g = Graph::inference(model.params());
        let v = joint_loss_in(model, &mut g, part, &mut Dropout::eval())?;
        let l = read(&g, &v);
        pos += l.positioning * v.samples as f64;
        gen += l.generation * v.tokens as f64;
        n += v.samples;
        tokens += v.tokens;
    }
    let positioning = pos / n as f64;
    let generation = gen / tokens as f64;
    Ok(JointLoss {
        total: positioning + generation,
        positioning,
        generation,
    })
}
