use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph};
use crate::error::{Error, Result};
use crate::nn::{Dropout, LocateGen};
use crate::params::ParamStore;
use crate::tensor::Real;
use crate::vocab::SPECIALS;

use super::loss::{dataset_loss, joint_loss_in, read};
use super::SimileSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_steps: usize,
    /// Steps between dev evaluations; 0 means once per epoch.
    #[serde(default)]
    pub eval_every: usize,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    /// Masked-token encoder pretraining steps run before the main loop.
    #[serde(default)]
    pub pretrain_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            max_steps: 2000,
            eval_every: 0,
            patience: 3,
            pretrain_steps: 0,
        }
    }
}

/// One row of the loss curve: training means since the previous row, plus
/// the dev loss at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub positioning: f64,
    pub generation: f64,
    pub dev_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<LossRecord>,
    pub steps: usize,
    pub best_step: usize,
    pub best_dev_total: f64,
    pub stopped_early: bool,
}

fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut order = ChaCha8Rng::seed_from_u64(seed);
    order.set_stream(1);
    let mut drop = ChaCha8Rng::seed_from_u64(seed);
    drop.set_stream(2);
    (order, drop)
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            step,
            source: Box::new(e),
        },
        other => other,
    }
}

/// Adam with early stopping on the dev total loss. The parameters with the
/// best dev loss are restored before returning.
pub fn train<T: Real>(
    model: &mut LocateGen<T>,
    train: &[SimileSample],
    dev: &[SimileSample],
    cfg: &TrainConfig,
    seed: u64,
    mut on_eval: impl FnMut(&LossRecord),
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    for s in train.iter().chain(dev) {
        s.fits(model.config())?;
    }
    if cfg.pretrain_steps > 0 {
        let contexts: Vec<&[usize]> = train.iter().map(|s| s.context_ids.as_slice()).collect();
        pretrain_encoder(model, &contexts, cfg, seed)?;
    }
    let (mut order_rng, mut drop_rng) = rngs(seed);
    let rate = model.config().dropout_rate;
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let eval_every = if cfg.eval_every == 0 { batches_per_epoch } else { cfg.eval_every };
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut report = TrainReport {
        curve: Vec::new(),
        steps: 0,
        best_step: 0,
        best_dev_total: f64::INFINITY,
        stopped_early: false,
    };
    let mut best: Option<ParamStore<T>> = None;
    let mut since_best = 0;
    let (mut acc, mut acc_n) = ([0.0f64; 3], 0usize);
    'outer: while report.steps < cfg.max_steps {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let step = report.steps + 1;
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let grads = {
                let mut g = Graph::with_params(model.params());
                let mut drop = Dropout {
                    rate,
                    rng: Some(&mut drop_rng),
                };
                let v = joint_loss_in(model, &mut g, &batch, &mut drop).map_err(|e| diverged(step, e))?;
                let l = read(&g, &v);
                acc[0] += l.total;
                acc[1] += l.positioning;
                acc[2] += l.generation;
                acc_n += 1;
                g.backward(v.total).map_err(|e| diverged(step, e))?;
                g.param_grads()
            };
            model.params_mut().set_grads(grads)?;
            adam.step(model.params_mut())?;
            model.params_mut().clear_grads();
            report.steps = step;
            if step.is_multiple_of(eval_every) || step == cfg.max_steps {
                let dev_loss = dataset_loss(model, dev, cfg.batch_size).map_err(|e| diverged(step, e))?;
                let rec = LossRecord {
                    step,
                    total: acc[0] / acc_n as f64,
                    positioning: acc[1] / acc_n as f64,
                    generation: acc[2] / acc_n as f64,
                    dev_total: dev_loss.total,
                };
                (acc, acc_n) = ([0.0; 3], 0);
                on_eval(&rec);
                report.curve.push(rec);
                if dev_loss.total < report.best_dev_total {
                    report.best_dev_total = dev_loss.total;
                    report.best_step = step;
                    best = Some(model.params().clone());
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        report.stopped_early = true;
                        break 'outer;
                    }
                }
            }
            if step >= cfg.max_steps {
                break 'outer;
            }
        }
    }
    if let Some(p) = best {
        if report.best_step != report.steps {
            *model.params_mut() = p;
        }
    }
    Ok(report)
}

/// Masked-token pretraining of the encoder: 15% of the characters of each
/// context are replaced by UNK and recovered through the tied embedding.
pub fn pretrain_encoder<T: Real>(model: &mut LocateGen<T>, contexts: &[&[usize]], cfg: &TrainConfig, seed: u64) -> Result<()> {
    if contexts.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let rate = model.config().dropout_rate;
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let word = model.word_embedding();
    for step in 1..=cfg.pretrain_steps {
        let grads = {
            let mut g = Graph::with_params(model.params());
            let mut rows = Vec::with_capacity(cfg.batch_size);
            let mut targets = Vec::new();
            for _ in 0..cfg.batch_size {
                let ctx = contexts[rng.random_range(0..contexts.len())];
                let mut ids = ctx.to_vec();
                let mut tgt = alloc::vec![None; ids.len()];
                for i in 1..ids.len() {
                    if ids[i] != SPECIALS.pad && rng.random_bool(0.15) {
                        tgt[i] = Some(ids[i]);
                        ids[i] = SPECIALS.unk;
                    }
                }
                let mut drop = Dropout {
                    rate,
                    rng: Some(&mut rng),
                };
                let h = model.encode_in(&mut g, &ids, &mut drop).map_err(|e| diverged(step, e))?;
                let table = g.param(word);
                rows.push(g.matmul_nt(h, table)?);
                targets.extend(tgt);
            }
            if targets.iter().all(Option::is_none) {
                continue;
            }
            let logits = g.concat_rows(&rows)?;
            let loss = g
                .cross_entropy(logits, &targets, model.config().label_smoothing)
                .map_err(|e| diverged(step, e))?;
            g.backward(loss).map_err(|e| diverged(step, e))?;
            g.param_grads()
        };
        model.params_mut().set_grads(grads)?;
        adam.step(model.params_mut())?;
        model.params_mut().clear_grads();
    }
    Ok(())
}
