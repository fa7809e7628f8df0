//! Post-norm transformer encoder (BERT layer layout) with an MLM head tied to
//! the token embeddings and a tanh pooler over the first position.
//! Backward passes are written out by hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::IGNORE;
use crate::nn::{
    dot, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul_a_bt, softmax_in_place, Dense, ParamSet, Scalar,
    Tensor,
};
use crate::tokenizer::PAD_ID;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Two layers, four heads, width 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self { n_layers: 2, n_heads: 4, d_model: 64, d_ff: 256, max_len: 64, vocab_size, dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.max_len == 0 || self.vocab_size == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query: Dense<T>,
    pub key: Dense<T>,
    pub value: Dense<T>,
    pub output: Dense<T>,
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub ff_in: Dense<T>,
    pub ff_out: Dense<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub token_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub emb_ln_gain: Tensor<T>,
    pub emb_ln_bias: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub mlm_bias: Tensor<T>,
    pub pooler: Dense<T>,
}

const INIT_STD: f64 = 0.02;

impl<T: Scalar> EncoderParams<T> {
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                query: Dense::new(d, d, INIT_STD, rng),
                key: Dense::new(d, d, INIT_STD, rng),
                value: Dense::new(d, d, INIT_STD, rng),
                output: Dense::new(d, d, INIT_STD, rng),
                ln1_gain: Tensor::filled(&[d], T::one()),
                ln1_bias: Tensor::zeros(&[d]),
                ff_in: Dense::new(d, cfg.d_ff, INIT_STD, rng),
                ff_out: Dense::new(cfg.d_ff, d, INIT_STD, rng),
                ln2_gain: Tensor::filled(&[d], T::one()),
                ln2_bias: Tensor::zeros(&[d]),
            })
            .collect();
        Self {
            token_emb: Tensor::normal(&[cfg.vocab_size, d], INIT_STD, rng),
            pos_emb: Tensor::normal(&[cfg.max_len, d], INIT_STD, rng),
            emb_ln_gain: Tensor::filled(&[d], T::one()),
            emb_ln_bias: Tensor::zeros(&[d]),
            layers,
            mlm_bias: Tensor::zeros(&[cfg.vocab_size]),
            pooler: Dense::new(d, d, INIT_STD, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let d = |x: &Dense<T>| Dense { weight: x.weight.cast(), bias: x.bias.cast() };
        EncoderParams {
            token_emb: self.token_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            emb_ln_gain: self.emb_ln_gain.cast(),
            emb_ln_bias: self.emb_ln_bias.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    query: d(&l.query),
                    key: d(&l.key),
                    value: d(&l.value),
                    output: d(&l.output),
                    ln1_gain: l.ln1_gain.cast(),
                    ln1_bias: l.ln1_bias.cast(),
                    ff_in: d(&l.ff_in),
                    ff_out: d(&l.ff_out),
                    ln2_gain: l.ln2_gain.cast(),
                    ln2_bias: l.ln2_bias.cast(),
                })
                .collect(),
            mlm_bias: self.mlm_bias.cast(),
            pooler: d(&self.pooler),
        }
    }

    /// Zero-filled parameters with the shapes implied by `cfg`.
    pub fn shell(cfg: &EncoderConfig) -> Self {
        let mut p = Self::init(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        p.zero();
        p
    }
}

impl<T: Scalar> ParamSet<T> for EncoderParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &self.token_emb),
            ("embeddings.position".to_string(), &self.pos_emb),
            ("embeddings.ln.gain".to_string(), &self.emb_ln_gain),
            ("embeddings.ln.bias".to_string(), &self.emb_ln_bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layer.{i}");
            l.query.push_tensors(&format!("{p}.attn.query"), &mut out);
            l.key.push_tensors(&format!("{p}.attn.key"), &mut out);
            l.value.push_tensors(&format!("{p}.attn.value"), &mut out);
            l.output.push_tensors(&format!("{p}.attn.output"), &mut out);
            out.push((format!("{p}.ln1.gain"), &l.ln1_gain));
            out.push((format!("{p}.ln1.bias"), &l.ln1_bias));
            l.ff_in.push_tensors(&format!("{p}.ff.in"), &mut out);
            l.ff_out.push_tensors(&format!("{p}.ff.out"), &mut out);
            out.push((format!("{p}.ln2.gain"), &l.ln2_gain));
            out.push((format!("{p}.ln2.bias"), &l.ln2_bias));
        }
        out.push(("mlm.bias".to_string(), &self.mlm_bias));
        self.pooler.push_tensors("pooler", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &mut self.token_emb),
            ("embeddings.position".to_string(), &mut self.pos_emb),
            ("embeddings.ln.gain".to_string(), &mut self.emb_ln_gain),
            ("embeddings.ln.bias".to_string(), &mut self.emb_ln_bias),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layer.{i}");
            l.query.push_tensors_mut(&format!("{p}.attn.query"), &mut out);
            l.key.push_tensors_mut(&format!("{p}.attn.key"), &mut out);
            l.value.push_tensors_mut(&format!("{p}.attn.value"), &mut out);
            l.output.push_tensors_mut(&format!("{p}.attn.output"), &mut out);
            out.push((format!("{p}.ln1.gain"), &mut l.ln1_gain));
            out.push((format!("{p}.ln1.bias"), &mut l.ln1_bias));
            l.ff_in.push_tensors_mut(&format!("{p}.ff.in"), &mut out);
            l.ff_out.push_tensors_mut(&format!("{p}.ff.out"), &mut out);
            out.push((format!("{p}.ln2.gain"), &mut l.ln2_gain));
            out.push((format!("{p}.ln2.bias"), &mut l.ln2_bias));
        }
        out.push(("mlm.bias".to_string(), &mut self.mlm_bias));
        self.pooler.push_tensors_mut("pooler", &mut out);
        out
    }
}

/// Inverted-dropout mask (already scaled by `1/(1-p)`), or `None` when inactive.
fn dropout_mask<T: Scalar>(n: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::c(1.0 / (1.0 - p));
    Some((0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect())
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[head, query, key]`
    pub probs: Vec<T>,
    ctx: Vec<T>,
    attn_drop: Option<Vec<T>>,
    ln1_xhat: Vec<T>,
    ln1_inv: Vec<T>,
    h1: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    ff_drop: Option<Vec<T>>,
    ln2_xhat: Vec<T>,
    ln2_inv: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub ids: Vec<usize>,
    pub key_mask: Vec<bool>,
    emb_xhat: Vec<T>,
    emb_inv: Vec<T>,
    emb_drop: Option<Vec<T>>,
    pub layers: Vec<LayerCache<T>>,
    /// Final hidden states `[len, d_model]`.
    pub hidden: Vec<T>,
    pub cls: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Output of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub hidden: Vec<T>,
    pub cls_embedding: Vec<T>,
    /// Per layer attention probabilities `[head, query, key]`.
    pub attention: Vec<Vec<T>>,
}

fn check_finite<T: Scalar>(x: &[T], layer: usize, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer, what: what.to_string() })
    }
}

impl<T: Scalar> EncoderParams<T> {
    pub fn d_model(&self) -> usize {
        self.token_emb.shape[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.token_emb.shape[0]
    }

    /// Full forward pass keeping every activation needed by [`Self::backward`].
    /// `key_mask[j] == false` excludes position `j` as an attention key.
    /// Dropout is active iff `rng` is given.
    pub fn forward_cached(
        &self,
        cfg: &EncoderConfig,
        ids: &[usize],
        key_mask: &[bool],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache<T>> {
        let d = self.d_model();
        let len = ids.len();
        if len == 0 || len > self.pos_emb.shape[0] {
            return Err(Error::Dimension(format!(
                "sequence length {len} outside 1..={}",
                self.pos_emb.shape[0]
            )));
        }
        if key_mask.len() != len {
            return Err(Error::Dimension("attention mask length differs from ids".into()));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(Error::Validation("attention mask excludes every position".into()));
        }
        let mut emb = vec![T::zero(); len * d];
        for (p, &id) in ids.iter().enumerate() {
            if id >= self.vocab_size() {
                return Err(Error::IdOutOfRange { id, size: self.vocab_size() });
            }
            let row = &mut emb[p * d..(p + 1) * d];
            for ((o, &t), &q) in row.iter_mut().zip(self.token_emb.row(id)).zip(self.pos_emb.row(p)) {
                *o = t + q;
            }
        }
        let (mut x, emb_xhat, emb_inv) = layer_norm(&emb, d, &self.emb_ln_gain.data, &self.emb_ln_bias.data);
        let emb_drop = dropout_mask(x.len(), cfg.dropout, rng.as_deref_mut());
        apply_mask(&mut x, &emb_drop);
        check_finite(&x, 0, "embeddings")?;

        let n_heads = cfg.n_heads;
        let dh = d / n_heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let mut layers = Vec::with_capacity(self.layers.len());
        for (li, lp) in self.layers.iter().enumerate() {
            let q = lp.query.forward(&x, len);
            let k = lp.key.forward(&x, len);
            let v = lp.value.forward(&x, len);
            let mut probs = vec![T::zero(); n_heads * len * len];
            let mut ctx = vec![T::zero(); len * d];
            for h in 0..n_heads {
                let off = h * dh;
                for i in 0..len {
                    let row = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
                    let qi = &q[i * d + off..i * d + off + dh];
                    for j in 0..len {
                        row[j] = if key_mask[j] {
                            dot(qi, &k[j * d + off..j * d + off + dh]) * scale
                        } else {
                            T::neg_infinity()
                        };
                    }
                    softmax_in_place(row);
                    let ci = &mut ctx[i * d + off..i * d + off + dh];
                    for j in 0..len {
                        let a = row[j];
                        if a == T::zero() {
                            continue;
                        }
                        for (c, &vv) in ci.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                            *c += a * vv;
                        }
                    }
                }
            }
            let mut attn = lp.output.forward(&ctx, len);
            let attn_drop = dropout_mask(attn.len(), cfg.dropout, rng.as_deref_mut());
            apply_mask(&mut attn, &attn_drop);
            let res1: Vec<T> = x.iter().zip(&attn).map(|(&a, &b)| a + b).collect();
            let (h1, ln1_xhat, ln1_inv) = layer_norm(&res1, d, &lp.ln1_gain.data, &lp.ln1_bias.data);
            let ff_pre = lp.ff_in.forward(&h1, len);
            let ff_act: Vec<T> = ff_pre.iter().map(|&z| gelu(z)).collect();
            let mut ff = lp.ff_out.forward(&ff_act, len);
            let ff_drop = dropout_mask(ff.len(), cfg.dropout, rng.as_deref_mut());
            apply_mask(&mut ff, &ff_drop);
            let res2: Vec<T> = h1.iter().zip(&ff).map(|(&a, &b)| a + b).collect();
            let (out, ln2_xhat, ln2_inv) = layer_norm(&res2, d, &lp.ln2_gain.data, &lp.ln2_bias.data);
            check_finite(&out, li + 1, "layer output")?;
            layers.push(LayerCache {
                input: std::mem::replace(&mut x, out),
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                ln1_xhat,
                ln1_inv,
                h1,
                ff_pre,
                ff_act,
                ff_drop,
                ln2_xhat,
                ln2_inv,
            });
        }
        let cls: Vec<T> = self.pooler.forward(&x[..d], 1).into_iter().map(|z| z.tanh()).collect();
        Ok(ForwardCache {
            ids: ids.to_vec(),
            key_mask: key_mask.to_vec(),
            emb_xhat,
            emb_inv,
            emb_drop,
            layers,
            hidden: x,
            cls,
        })
    }

    /// Inference pass (dropout off).
    pub fn forward(&self, cfg: &EncoderConfig, ids: &[usize], key_mask: &[bool]) -> Result<EncoderOutput<T>> {
        let cache = self.forward_cached(cfg, ids, key_mask, None)?;
        Ok(EncoderOutput {
            attention: cache.layers.iter().map(|l| l.probs.clone()).collect(),
            hidden: cache.hidden,
            cls_embedding: cache.cls,
        })
    }

    /// Sentence embedding of a padded sequence.
    pub fn cls_embedding(&self, cfg: &EncoderConfig, ids: &[usize], key_mask: &[bool]) -> Result<Vec<T>> {
        Ok(self.forward_cached(cfg, ids, key_mask, None)?.cls)
    }

    /// Backpropagates `d_hidden` (w.r.t. final hidden states) and `d_cls`
    /// (w.r.t. the pooled embedding), accumulating into `grads`.
    pub fn backward(
        &self,
        cfg: &EncoderConfig,
        cache: &ForwardCache<T>,
        mut d_hidden: Vec<T>,
        d_cls: Option<&[T]>,
        grads: &mut EncoderParams<T>,
    ) {
        let d = self.d_model();
        let len = cache.len();
        if let Some(dc) = d_cls {
            let dpre: Vec<T> = dc.iter().zip(&cache.cls).map(|(&g, &c)| g * (T::one() - c * c)).collect();
            let dh0 = self.pooler.backward(&cache.hidden[..d], &dpre, 1, &mut grads.pooler);
            for (a, b) in d_hidden[..d].iter_mut().zip(dh0) {
                *a += b;
            }
        }

        let n_heads = cfg.n_heads;
        let dh = d / n_heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let mut dx = d_hidden;
        for (li, lp) in self.layers.iter().enumerate().rev() {
            let c = &cache.layers[li];
            let g = &mut grads.layers[li];
            let dres2 = layer_norm_backward(&dx, &c.ln2_xhat, &c.ln2_inv, d, &lp.ln2_gain.data, &mut g.ln2_gain.data, &mut g.ln2_bias.data);
            let mut dff = dres2.clone();
            apply_mask(&mut dff, &c.ff_drop);
            let mut dact = lp.ff_out.backward(&c.ff_act, &dff, len, &mut g.ff_out);
            for (da, &z) in dact.iter_mut().zip(&c.ff_pre) {
                *da *= gelu_grad(z);
            }
            let dh1_ff = lp.ff_in.backward(&c.h1, &dact, len, &mut g.ff_in);
            let dh1: Vec<T> = dres2.iter().zip(&dh1_ff).map(|(&a, &b)| a + b).collect();
            let dres1 = layer_norm_backward(&dh1, &c.ln1_xhat, &c.ln1_inv, d, &lp.ln1_gain.data, &mut g.ln1_gain.data, &mut g.ln1_bias.data);
            let mut dattn = dres1.clone();
            apply_mask(&mut dattn, &c.attn_drop);
            let dctx = lp.output.backward(&c.ctx, &dattn, len, &mut g.output);

            let mut dq = vec![T::zero(); len * d];
            let mut dk = vec![T::zero(); len * d];
            let mut dv = vec![T::zero(); len * d];
            let mut dp = vec![T::zero(); len];
            for h in 0..n_heads {
                let off = h * dh;
                for i in 0..len {
                    let p = &c.probs[(h * len + i) * len..(h * len + i + 1) * len];
                    let dci = &dctx[i * d + off..i * d + off + dh];
                    let mut s = T::zero();
                    for j in 0..len {
                        if p[j] == T::zero() {
                            dp[j] = T::zero();
                            continue;
                        }
                        dp[j] = dot(dci, &c.v[j * d + off..j * d + off + dh]);
                        s += p[j] * dp[j];
                        for (o, &gv) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                            *o += p[j] * gv;
                        }
                    }
                    for j in 0..len {
                        if p[j] == T::zero() {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - s) * scale;
                        for t in 0..dh {
                            dq[i * d + off + t] += ds * c.k[j * d + off + t];
                            dk[j * d + off + t] += ds * c.q[i * d + off + t];
                        }
                    }
                }
            }
            let mut dinput = dres1;
            for (proj, dproj, gproj) in [
                (&lp.query, &dq, &mut g.query),
                (&lp.key, &dk, &mut g.key),
                (&lp.value, &dv, &mut g.value),
            ] {
                let part = proj.backward(&c.input, dproj, len, gproj);
                for (a, b) in dinput.iter_mut().zip(part) {
                    *a += b;
                }
            }
            dx = dinput;
        }

        apply_mask(&mut dx, &cache.emb_drop);
        let demb = layer_norm_backward(&dx, &cache.emb_xhat, &cache.emb_inv, d, &self.emb_ln_gain.data, &mut grads.emb_ln_gain.data, &mut grads.emb_ln_bias.data);
        for (p, &id) in cache.ids.iter().enumerate() {
            let src = &demb[p * d..(p + 1) * d];
            for (a, &b) in grads.token_emb.row_mut(id).iter_mut().zip(src) {
                *a += b;
            }
            for (a, &b) in grads.pos_emb.row_mut(p).iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    /// Tied-embedding logits for one hidden row.
    pub fn mlm_logits(&self, h: &[T]) -> Vec<T> {
        let mut logits = matmul_a_bt(h, 1, self.d_model(), &self.token_emb.data, self.vocab_size());
        for (l, &b) in logits.iter_mut().zip(&self.mlm_bias.data) {
            *l += b;
        }
        logits
    }

    /// Sum of cross-entropies over target positions of one example, each
    /// weighted by `weight`; accumulates gradients and returns the unweighted
    /// sum and the number of targets.
    pub fn mlm_example(
        &self,
        cfg: &EncoderConfig,
        input_ids: &[usize],
        target_ids: &[i64],
        weight: T,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut EncoderParams<T>,
    ) -> Result<(f64, usize)> {
        let len = trimmed_len(input_ids);
        let ids = &input_ids[..len];
        let targets: Vec<(usize, usize)> = target_ids[..len]
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != IGNORE)
            .map(|(p, &t)| (p, t as usize))
            .collect();
        if targets.is_empty() {
            return Ok((0.0, 0));
        }
        let mask = vec![true; len];
        let cache = self.forward_cached(cfg, ids, &mask, rng)?;
        let d = self.d_model();
        let mut d_hidden = vec![T::zero(); len * d];
        let mut total = 0.0;
        for &(p, t) in &targets {
            if t >= self.vocab_size() {
                return Err(Error::IdOutOfRange { id: t, size: self.vocab_size() });
            }
            let h = &cache.hidden[p * d..(p + 1) * d];
            let mut probs = self.mlm_logits(h);
            let true_logit = probs[t];
            let lse = softmax_in_place(&mut probs);
            total += (lse - true_logit).f64();
            probs[t] -= T::one();
            let dh = &mut d_hidden[p * d..(p + 1) * d];
            for (v, &g) in probs.iter().enumerate() {
                let g = g * weight;
                grads.mlm_bias.data[v] += g;
                let erow = self.token_emb.row(v);
                let grow = grads.token_emb.row_mut(v);
                for k in 0..d {
                    dh[k] += g * erow[k];
                    grow[k] += g * h[k];
                }
            }
        }
        self.backward(cfg, &cache, d_hidden, None, grads);
        Ok((total, targets.len()))
    }

    /// Mean MLM cross-entropy without gradients.
    pub fn mlm_loss(&self, cfg: &EncoderConfig, input_ids: &[usize], target_ids: &[i64]) -> Result<(f64, usize)> {
        let len = trimmed_len(input_ids);
        let mask = vec![true; len];
        let cache = self.forward_cached(cfg, &input_ids[..len], &mask, None)?;
        let d = self.d_model();
        let mut total = 0.0;
        let mut n = 0;
        for (p, &t) in target_ids[..len].iter().enumerate() {
            if t == IGNORE {
                continue;
            }
            let mut logits = self.mlm_logits(&cache.hidden[p * d..(p + 1) * d]);
            let true_logit = logits[t as usize];
            total += (softmax_in_place(&mut logits) - true_logit).f64();
            n += 1;
        }
        Ok((total, n))
    }
}

/// Length up to and including the last non-pad id.
pub fn trimmed_len(ids: &[usize]) -> usize {
    ids.iter().rposition(|&i| i != PAD_ID).map_or(ids.len().min(1), |p| p + 1)
}

/// Dropout stream for example `index` at optimizer step `step`.
pub fn dropout_rng(seed: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_D80F);
    rng.set_stream(step.wrapping_mul(1 << 20).wrapping_add(index));
    rng
}
