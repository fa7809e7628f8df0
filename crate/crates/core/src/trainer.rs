//! Adaptive MLM pre-training and head fine-tuning with interval-based dev
//! evaluation and best-checkpoint selection.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::checkpoint::{Checkpoint, Metric};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::heads::{predict, HeadConfig, HeadParams};
use crate::masking::{mask_batch, mask_sequence, MaskingConfig};
use crate::model::{ClsExample, Model};
use crate::nn::ParamSet;
use crate::ontology::LabelOntology;
use crate::optim::{AdamW, AdamWConfig};
use crate::tokenizer::TokenSequence;

pub const PRETRAIN_METRIC: &str = "dev_mlm_loss";
pub const FINETUNE_METRIC: &str = "dev_lower_macro_f1";

/// Salt separating the fixed dev masking stream from training masks.
const DEV_MASK_SALT: u64 = 0xD3F_5A17;
const HEAD_INIT_SALT: u64 = 0x4EAD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub eval_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear warmup length; 0 keeps the rate constant.
    pub warmup_steps: usize,
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 32,
            lambda: 0.1,
            epochs: 15,
            max_steps: 0,
            eval_interval: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 0,
            freeze_encoder: false,
            seed: 13,
        }
    }
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        Self { epochs: 50, ..Self::default() }
    }

    pub fn finetune_default() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config("batch_size and eval_interval must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            self.lr * step as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }

    fn total_steps(&self, n: usize) -> usize {
        let total = self.epochs * n.div_ceil(self.batch_size);
        if self.max_steps > 0 {
            total.min(self.max_steps)
        } else {
            total
        }
    }
}

/// One row per dev evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    /// Mean training loss over the steps since the previous evaluation.
    pub train_loss: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub metric: String,
    pub higher_is_better: bool,
    pub rows: Vec<TraceRow>,
    pub selected_step: usize,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut s = format!("step,epoch,train_loss,{}\n", self.metric);
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.train_loss, r.metric));
        }
        s
    }

    /// Step of the best recorded metric; ties keep the earliest.
    pub fn best_step(&self) -> Option<usize> {
        let mut best: Option<&TraceRow> = None;
        for r in &self.rows {
            let better = match best {
                None => true,
                Some(b) if self.higher_is_better => r.metric > b.metric,
                Some(b) => r.metric < b.metric,
            };
            if better {
                best = Some(r);
            }
        }
        best.map(|r| r.step)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub trace: Trace,
}

/// Deterministic per-epoch example order.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x0DE5 + epoch as u64);
    order.shuffle(&mut rng);
    order
}

struct Selector {
    trace: Trace,
    best: Option<Checkpoint>,
    loss_sum: f64,
    loss_steps: usize,
}

impl Selector {
    fn new(metric: &str, higher_is_better: bool) -> Self {
        Self {
            trace: Trace { metric: metric.into(), higher_is_better, rows: Vec::new(), selected_step: 0 },
            best: None,
            loss_sum: 0.0,
            loss_steps: 0,
        }
    }

    fn record(&mut self, step: usize, epoch: usize, metric: f64, model: &Model<f32>) {
        let train_loss = if self.loss_steps > 0 { self.loss_sum / self.loss_steps as f64 } else { f64::NAN };
        self.loss_sum = 0.0;
        self.loss_steps = 0;
        self.trace.rows.push(TraceRow { step, epoch, train_loss, metric });
        if self.trace.best_step() == Some(step) {
            self.trace.selected_step = step;
            let m = Metric { name: self.trace.metric.clone(), value: metric };
            self.best = Some(Checkpoint::new(model.clone(), step as u64, Some(m)));
        }
    }

    fn last_good(&self, fallback: &Model<f32>) -> Box<Checkpoint> {
        Box::new(self.best.clone().unwrap_or_else(|| Checkpoint::new(fallback.clone(), 0, None)))
    }
}

fn diverged(step: usize, sel: &Selector, start: &Model<f32>) -> Error {
    Error::Diverged { step, last_good: sel.last_good(start) }
}

/// Masked-language-model training of `encoder` (a fresh one when `None`).
/// Dev loss uses one fixed masking of `dev`; the checkpoint with the lowest
/// dev loss is returned. With an empty `dev`, training data stands in.
pub fn pretrain(
    train: &[TokenSequence],
    dev: &[TokenSequence],
    masking: &MaskingConfig,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    encoder: Option<EncoderParams<f32>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    masking.validate()?;
    enc_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("pre-training corpus is empty".into()));
    }
    let encoder = encoder.unwrap_or_else(|| EncoderParams::init(enc_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)));
    let mut model = Model::new(enc_cfg.clone(), encoder, None);
    let start = model.clone();
    let dev = if dev.is_empty() { train } else { dev };
    let dev_masked = mask_batch(dev, masking, enc_cfg.vocab_size, cfg.seed ^ DEV_MASK_SALT, 0);
    let mut opt = AdamW::new(cfg.optimizer());
    let mut sel = Selector::new(PRETRAIN_METRIC, false);
    let n = train.len();
    let total = cfg.total_steps(n);
    let per_epoch = n.div_ceil(cfg.batch_size);
    let mut order = Vec::new();
    log::info!("pre-training: {n} sequences, {total} steps");
    for step in 1..=total {
        let epoch = (step - 1) / per_epoch;
        let b = (step - 1) % per_epoch;
        if b == 0 {
            order = epoch_order(n, cfg.seed, epoch);
        }
        let idx = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(n)];
        let batch: Vec<_> = idx
            .iter()
            .map(|&i| mask_sequence(&train[i], masking, enc_cfg.vocab_size, cfg.seed, (epoch * n + i) as u64))
            .collect();
        let g = match model.mlm_batch(&batch, Some((cfg.seed, step as u64))) {
            Ok(g) => g,
            Err(Error::Numeric { .. }) => return Err(diverged(step, &sel, &start)),
            Err(e) => return Err(e),
        };
        if !g.loss.is_finite() || !g.grads.sq_norm_finite() {
            return Err(diverged(step, &sel, &start));
        }
        if g.n_targets > 0 {
            opt.step(&mut model.encoder, &g.grads, cfg.lr_at(step), |_| false);
            sel.loss_sum += g.loss;
            sel.loss_steps += 1;
        }
        if step % cfg.eval_interval == 0 || step == total {
            let dev_loss = match model.mlm_eval(&dev_masked) {
                Ok(l) if l.is_finite() => l,
                _ => return Err(diverged(step, &sel, &start)),
            };
            log::info!("step {step}: dev MLM loss {dev_loss:.4}");
            sel.record(step, epoch, dev_loss, &model);
        }
    }
    let last = Checkpoint::new(model, total as u64, None);
    Ok(TrainOutcome { best: sel.best.unwrap_or_else(|| last.clone()), last, trace: sel.trace })
}

trait FiniteGrad {
    fn sq_norm_finite(&self) -> bool;
}

impl<P: ParamSet<f32>> FiniteGrad for P {
    fn sq_norm_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.sq_norm().is_finite())
    }
}

/// Predicted lower-label index sets for `examples`.
pub fn predict_lower(model: &Model<f32>, examples: &[ClsExample], threshold: f64) -> Result<Vec<BTreeSet<usize>>> {
    let global_weight = model.head.as_ref().map_or(0.5, |h| h.config.global_weight);
    let ids: Vec<&[usize]> = examples.iter().map(|e| e.ids.as_slice()).collect();
    Ok(model.scores(&ids)?.iter().map(|s| predict(s, threshold, global_weight).1).collect())
}

/// Lower-level macro F1 of a model on indicator-labelled examples.
pub fn lower_macro_f1(model: &Model<f32>, examples: &[ClsExample], ontology: &LabelOntology, threshold: f64) -> Result<f64> {
    let names = ontology.lower_labels();
    let to_names = |s: &BTreeSet<usize>| -> BTreeSet<String> { s.iter().map(|&i| names[i].clone()).collect() };
    let pred: Vec<_> = predict_lower(model, examples, threshold)?.iter().map(to_names).collect();
    let gold: Vec<_> = examples
        .iter()
        .map(|e| e.lower.iter().enumerate().filter(|(_, &y)| y > 0.5).map(|(i, _)| names[i].clone()).collect())
        .collect();
    Ok(macro_f1(&pred, &gold, names, false)?.macro_f1)
}

/// Trains a classification head (and, unless frozen, the encoder) starting
/// from `start`. A head already in `start` with the same configuration is
/// continued; otherwise a fresh one is initialised. Selection uses dev
/// lower-level macro F1 (training data when `dev` is empty).
pub fn finetune(
    start: &Checkpoint,
    head: &HeadConfig,
    ontology: &LabelOntology,
    train: &[ClsExample],
    dev: &[ClsExample],
    cfg: &TrainConfig,
    threshold: f64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("fine-tuning corpus is empty".into()));
    }
    for ex in train.iter().chain(dev) {
        if ex.upper.len() != ontology.n_upper() || ex.lower.len() != ontology.n_lower() {
            return Err(Error::Dimension("indicator vectors do not match the ontology".into()));
        }
    }
    let mut model = start.model.clone();
    let reuse = model.head.as_ref().is_some_and(|h| h.config == *head);
    if !reuse {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ HEAD_INIT_SALT);
        let mut h = HeadParams::init(head.clone(), model.config.d_model, ontology, &mut rng);
        let upper: Vec<&[f64]> = train.iter().map(|e| e.upper.as_slice()).collect();
        let lower: Vec<&[f64]> = train.iter().map(|e| e.lower.as_slice()).collect();
        h.set_prior_biases(&upper, &lower);
        model.head = Some(h);
    }
    let start_model = model.clone();
    let dev = if dev.is_empty() { train } else { dev };
    let mut opt = AdamW::new(cfg.optimizer());
    let mut sel = Selector::new(FINETUNE_METRIC, true);
    let n = train.len();
    let total = cfg.total_steps(n);
    let per_epoch = n.div_ceil(cfg.batch_size);
    let frozen = |name: &str| cfg.freeze_encoder && !name.starts_with("head.");
    let mut order = Vec::new();
    log::info!("fine-tuning {}: {n} examples, {total} steps", head.kind);
    for step in 1..=total {
        let epoch = (step - 1) / per_epoch;
        let b = (step - 1) % per_epoch;
        if b == 0 {
            order = epoch_order(n, cfg.seed ^ HEAD_INIT_SALT, epoch);
        }
        let batch: Vec<ClsExample> =
            order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(n)].iter().map(|&i| train[i].clone()).collect();
        let g = match model.cls_batch(&batch, cfg.lambda, Some((cfg.seed, step as u64)), !cfg.freeze_encoder) {
            Ok(g) => g,
            Err(Error::Numeric { .. }) => return Err(diverged(step, &sel, &start_model)),
            Err(e) => return Err(e),
        };
        if !g.loss.is_finite() || !g.grads.sq_norm_finite() {
            return Err(diverged(step, &sel, &start_model));
        }
        opt.step(&mut model, &g.grads, cfg.lr_at(step), frozen);
        sel.loss_sum += g.loss;
        sel.loss_steps += 1;
        if step % cfg.eval_interval == 0 || step == total {
            let f1 = match lower_macro_f1(&model, dev, ontology, threshold) {
                Ok(f) => f,
                Err(Error::Numeric { .. }) => return Err(diverged(step, &sel, &start_model)),
                Err(e) => return Err(e),
            };
            log::info!("step {step}: dev lower macro-F1 {f1:.4}");
            sel.record(step, epoch, f1, &model);
        }
    }
    let last = Checkpoint::new(model, total as u64, None);
    Ok(TrainOutcome { best: sel.best.unwrap_or_else(|| last.clone()), last, trace: sel.trace })
}

/// Builds classifier inputs from encoded sequences and lower-label sets.
pub fn cls_examples<S: AsRef<str>>(
    seqs: &[TokenSequence],
    labels: &[BTreeSet<S>],
    ontology: &LabelOntology,
) -> Result<Vec<ClsExample>>
where
    S: Ord,
{
    seqs.iter()
        .zip(labels)
        .map(|(s, l)| {
            let (upper, lower) = ontology.indicators(l.iter().map(|x| x.as_ref()))?;
            Ok(ClsExample { ids: s.ids.clone(), upper, lower })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_selection_ties_keep_first() {
        let rows = [(10, 0.5), (20, 0.7), (30, 0.7), (40, 0.6)]
            .iter()
            .map(|&(step, metric)| TraceRow { step, epoch: 0, train_loss: 0.0, metric })
            .collect();
        let mut t = Trace { metric: "m".into(), higher_is_better: true, rows, selected_step: 0 };
        assert_eq!(t.best_step(), Some(20));
        t.higher_is_better = false;
        assert_eq!(t.best_step(), Some(10));
    }

    #[test]
    fn step_budget() {
        let c = TrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
        assert_eq!(c.total_steps(10), 9);
        assert_eq!(TrainConfig { max_steps: 5, ..c.clone() }.total_steps(10), 5);
        assert!(TrainConfig { lambda: 2.0, ..c }.validate().is_err());
    }

    #[test]
    fn warmup_is_linear() {
        let c = TrainConfig { lr: 1.0, warmup_steps: 4, ..Default::default() };
        assert_eq!(c.lr_at(1), 0.25);
        assert_eq!(c.lr_at(4), 1.0);
        assert_eq!(c.lr_at(9), 1.0);
    }
}
