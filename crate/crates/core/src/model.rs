//! Encoder plus optional head, and batch-level loss/gradient evaluation.

use crate::encoder::{dropout_rng, trimmed_len, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::heads::{mtl_loss, HeadParams, ScoreSet};
use crate::masking::MaskedExample;
use crate::nn::{ParamSet, Scalar, Tensor};
use crate::parallel;

/// Examples per gradient partial sum. Fixed so results do not depend on the
/// number of worker threads.
pub const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: EncoderConfig,
    pub encoder: EncoderParams<T>,
    pub head: Option<HeadParams<T>>,
}

impl<T: Scalar> ParamSet<T> for Model<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.encoder.tensors();
        if let Some(h) = &self.head {
            out.extend(h.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.encoder.tensors_mut();
        if let Some(h) = &mut self.head {
            out.extend(h.tensors_mut());
        }
        out
    }
}

/// A tokenized example with gold indicator vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsExample {
    pub ids: Vec<usize>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

/// Dropout seed and optimizer step; `None` disables dropout.
pub type DropoutKey = Option<(u64, u64)>;

#[derive(Debug, Clone)]
pub struct BatchGrad<G> {
    /// Mean loss over the batch (MLM: over target positions).
    pub loss: f64,
    pub n_targets: usize,
    pub grads: G,
}

fn sum_chunks<G: Clone, T: Scalar>(parts: Vec<Result<(f64, usize, G)>>, zero: G) -> Result<(f64, usize, G)>
where
    G: ParamSet<T>,
{
    let mut total = (0.0, 0, zero);
    for part in parts {
        let (l, n, g) = part?;
        total.0 += l;
        total.1 += n;
        total.2.accumulate(&g);
    }
    Ok(total)
}

impl<T: Scalar> Model<T> {
    pub fn new(config: EncoderConfig, encoder: EncoderParams<T>, head: Option<HeadParams<T>>) -> Self {
        Self { config, encoder, head }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), encoder: self.encoder.cast(), head: self.head.as_ref().map(HeadParams::cast) }
    }

    /// Mean masked-token cross-entropy and its gradient w.r.t. the encoder.
    pub fn mlm_batch(&self, batch: &[MaskedExample], dropout: DropoutKey) -> Result<BatchGrad<EncoderParams<T>>> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let n_targets: usize = batch.iter().map(MaskedExample::n_targets).sum();
        let zero = self.encoder.zeros_like();
        if n_targets == 0 {
            log::debug!("batch without masked targets; zero loss and gradient");
            return Ok(BatchGrad { loss: 0.0, n_targets: 0, grads: zero });
        }
        let weight = T::c(1.0 / n_targets as f64);
        let n_chunks = batch.len().div_ceil(GRAD_CHUNK);
        let parts = parallel::map_range(n_chunks, |c| {
            let mut g = zero.clone();
            let mut loss = 0.0;
            let mut n = 0;
            for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(batch.len()) {
                let ex = &batch[i];
                let mut rng = dropout.map(|(seed, step)| dropout_rng(seed, step, i as u64));
                let (l, k) = self.encoder.mlm_example(&self.config, &ex.input_ids, &ex.target_ids, weight, rng.as_mut(), &mut g)?;
                loss += l;
                n += k;
            }
            Ok((loss, n, g))
        });
        let (loss, n, grads) = sum_chunks(parts, zero.clone())?;
        Ok(BatchGrad { loss: loss / n as f64, n_targets: n, grads })
    }

    /// Mean multi-task loss and gradient w.r.t. all parameters. With
    /// `train_encoder == false` the encoder part of the gradient stays zero.
    pub fn cls_batch(
        &self,
        batch: &[ClsExample],
        lambda: f64,
        dropout: DropoutKey,
        train_encoder: bool,
    ) -> Result<BatchGrad<Model<T>>> {
        let head = self.head.as_ref().ok_or_else(|| Error::Config("model has no classification head".into()))?;
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let weight = 1.0 / batch.len() as f64;
        let zero = self.zeros_like();
        let n_chunks = batch.len().div_ceil(GRAD_CHUNK);
        let parts = parallel::map_range(n_chunks, |c| {
            let mut g = zero.clone();
            let mut loss = 0.0;
            for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(batch.len()) {
                let ex = &batch[i];
                let len = trimmed_len(&ex.ids);
                let mask = vec![true; len];
                let mut rng = if train_encoder { dropout.map(|(seed, step)| dropout_rng(seed, step, i as u64)) } else { None };
                let cache = self.encoder.forward_cached(&self.config, &ex.ids[..len], &mask, rng.as_mut())?;
                let hc = head.forward_cached(&cache.cls)?;
                loss += mtl_loss(&hc.scores, head.kind(), &ex.upper, &ex.lower, lambda)?;
                let dcls = head.backward(&hc, &ex.upper, &ex.lower, lambda, weight, g.head.as_mut().unwrap());
                if train_encoder {
                    let d = self.encoder.d_model();
                    self.encoder.backward(&self.config, &cache, vec![T::zero(); len * d], Some(&dcls), &mut g.encoder);
                }
            }
            Ok((loss, 0, g))
        });
        let (loss, _, grads) = sum_chunks(parts, zero.clone())?;
        Ok(BatchGrad { loss: loss * weight, n_targets: batch.len(), grads })
    }

    /// Mean loss only (no dropout).
    pub fn cls_loss(&self, batch: &[ClsExample], lambda: f64) -> Result<f64> {
        let head = self.head.as_ref().ok_or_else(|| Error::Config("model has no classification head".into()))?;
        let scores = self.scores(batch.iter().map(|e| e.ids.as_slice()).collect::<Vec<_>>().as_slice())?;
        let mut total = 0.0;
        for (s, ex) in scores.iter().zip(batch) {
            total += mtl_loss(s, head.kind(), &ex.upper, &ex.lower, lambda)?;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Inference scores for padded id sequences.
    pub fn scores(&self, seqs: &[&[usize]]) -> Result<Vec<ScoreSet>> {
        let head = self.head.as_ref().ok_or_else(|| Error::Config("model has no classification head".into()))?;
        parallel::map(seqs, |_, ids| {
            let len = trimmed_len(ids);
            let cls = self.encoder.cls_embedding(&self.config, &ids[..len], &vec![true; len])?;
            head.forward(&cls)
        })
        .into_iter()
        .collect()
    }

    /// Mean MLM loss over examples (no dropout).
    pub fn mlm_eval(&self, batch: &[MaskedExample]) -> Result<f64> {
        let parts = parallel::map(batch, |_, ex| self.encoder.mlm_loss(&self.config, &ex.input_ids, &ex.target_ids));
        let (mut sum, mut n) = (0.0, 0);
        for p in parts {
            let (s, k) = p?;
            sum += s;
            n += k;
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }
}
