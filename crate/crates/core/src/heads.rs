//! Classification heads over the pooled sentence embedding, the weighted
//! multi-task loss, and thresholded prediction.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Dense, ParamSet, Scalar, Tensor};
use crate::ontology::LabelOntology;

const INIT_STD: f64 = 0.02;
/// Probability clamp used inside `ln` of the cross-entropy.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    SingleTask,
    Lcl,
    Lcpn,
    HmcnLocal,
    HmcnGlobal,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] =
        [HeadKind::SingleTask, HeadKind::Lcl, HeadKind::Lcpn, HeadKind::HmcnLocal, HeadKind::HmcnGlobal];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::SingleTask => "single_task",
            HeadKind::Lcl => "lcl",
            HeadKind::Lcpn => "lcpn",
            HeadKind::HmcnLocal => "hmcn_local",
            HeadKind::HmcnGlobal => "hmcn_global",
        }
    }

    pub fn is_hmcn(self) -> bool {
        matches!(self, HeadKind::HmcnLocal | HeadKind::HmcnGlobal)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name().replace('_', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown head kind `{s}`")))
    }
}

/// Head options that are not trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// LCPN only: multiply child scores by the parent score.
    pub lcpn_gating: bool,
    /// HMCN-global only: weight of the global slice in the decision score.
    pub global_weight: f64,
}

impl HeadConfig {
    pub fn new(kind: HeadKind) -> Self {
        Self { kind, lcpn_gating: false, global_weight: 0.5 }
    }
}

/// Per-level sigmoid scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub global: Option<Vec<f64>>,
}

impl ScoreSet {
    pub fn validate(&self) -> Result<()> {
        let all = self.upper.iter().chain(&self.lower).chain(self.global.iter().flatten());
        for &s in all {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!("score {s} is not a probability")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub config: HeadConfig,
    /// LCL / HMCN upper layer, LCPN root layer.
    pub upper: Option<Dense<T>>,
    /// SingleTask / LCL / HMCN lower layer.
    pub lower: Option<Dense<T>>,
    /// LCPN child layers, one per upper label.
    pub children: Vec<Dense<T>>,
    pub pool1: Option<Dense<T>>,
    pub pool2: Option<Dense<T>>,
    pub global: Option<Dense<T>>,
    /// Lower-label indices under each upper label.
    pub groups: Vec<Vec<usize>>,
}

impl<T: Scalar> HeadParams<T> {
    pub fn init(config: HeadConfig, d_model: usize, ontology: &LabelOntology, rng: &mut impl Rng) -> Self {
        let groups = (0..ontology.n_upper()).map(|u| ontology.children(u).to_vec()).collect();
        let mut p = Self::shell(config, d_model, groups);
        for (name, t) in p.tensors_mut() {
            if name.ends_with(".weight") {
                *t = Tensor::normal(&t.shape, INIT_STD, rng);
            }
        }
        p
    }

    /// Sets output biases to the log-odds of the training label rates, so the
    /// first updates are not spent fitting label frequencies. Rates use
    /// add-half smoothing and stay finite; gated LCPN children get the rate
    /// conditional on their parent.
    pub fn set_prior_biases(&mut self, upper: &[&[f64]], lower: &[&[f64]]) {
        let n = upper.len() as f64;
        let count = |rows: &[&[f64]], k: usize| rows.iter().filter(|r| r[k] > 0.5).count() as f64;
        let logit = |hits: f64, total: f64| {
            let p = (hits + 0.5) / (total + 1.0);
            T::c((p / (1.0 - p)).ln())
        };
        let up: Vec<T> = (0..self.n_upper()).map(|u| logit(count(upper, u), n)).collect();
        let low: Vec<T> = (0..self.n_lower()).map(|l| logit(count(lower, l), n)).collect();
        if let Some(d) = &mut self.upper {
            d.bias.data.clone_from(&up);
        }
        if let Some(d) = &mut self.lower {
            d.bias.data.clone_from(&low);
        }
        if let Some(d) = &mut self.global {
            d.bias.data = up.iter().chain(&low).copied().collect();
        }
        let gated = self.config.lcpn_gating;
        for (u, (d, group)) in self.children.iter_mut().zip(&self.groups).enumerate() {
            for (b, &l) in d.bias.data.iter_mut().zip(group) {
                *b = if gated {
                    let both = upper.iter().zip(lower).filter(|(a, b)| a[u] > 0.5 && b[l] > 0.5).count() as f64;
                    logit(both, count(upper, u))
                } else {
                    low[l]
                };
            }
        }
    }

    pub fn kind(&self) -> HeadKind {
        self.config.kind
    }

    pub fn n_upper(&self) -> usize {
        self.groups.len()
    }

    pub fn n_lower(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn d_model(&self) -> usize {
        self.pool1
            .as_ref()
            .or(self.upper.as_ref())
            .or(self.lower.as_ref())
            .map(Dense::d_in)
            .unwrap_or(0)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        let c = |d: &Dense<T>| Dense { weight: d.weight.cast(), bias: d.bias.cast() };
        HeadParams {
            config: self.config.clone(),
            upper: self.upper.as_ref().map(c),
            lower: self.lower.as_ref().map(c),
            children: self.children.iter().map(c).collect(),
            pool1: self.pool1.as_ref().map(c),
            pool2: self.pool2.as_ref().map(c),
            global: self.global.as_ref().map(c),
            groups: self.groups.clone(),
        }
    }

    /// Zero-filled head with the layer layout of `config.kind`.
    pub fn shell(config: HeadConfig, d_model: usize, groups: Vec<Vec<usize>>) -> Self {
        let (nu, nl) = (groups.len(), groups.iter().map(Vec::len).sum::<usize>());
        let z = |i: usize, o: usize| Dense { weight: Tensor::zeros(&[i, o]), bias: Tensor::zeros(&[o]) };
        let kind = config.kind;
        let mut p = Self {
            config,
            upper: None,
            lower: None,
            children: Vec::new(),
            pool1: None,
            pool2: None,
            global: None,
            groups,
        };
        match kind {
            HeadKind::SingleTask => p.lower = Some(z(d_model, nl)),
            HeadKind::Lcl => {
                p.upper = Some(z(d_model, nu));
                p.lower = Some(z(d_model, nl));
            }
            HeadKind::Lcpn => {
                p.upper = Some(z(d_model, nu));
                p.children = p.groups.iter().map(|g| z(d_model, g.len())).collect();
            }
            HeadKind::HmcnLocal | HeadKind::HmcnGlobal => {
                p.pool1 = Some(z(d_model, d_model));
                p.upper = Some(z(d_model, nu));
                p.pool2 = Some(z(d_model, d_model));
                p.lower = Some(z(d_model, nl));
                if kind == HeadKind::HmcnGlobal {
                    p.global = Some(z(d_model, nu + nl));
                }
            }
        }
        p
    }
}

impl<T: Scalar> ParamSet<T> for HeadParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(d) = &self.pool1 {
            d.push_tensors("head.pool1", &mut out);
        }
        if let Some(d) = &self.pool2 {
            d.push_tensors("head.pool2", &mut out);
        }
        if let Some(d) = &self.upper {
            d.push_tensors("head.upper", &mut out);
        }
        if let Some(d) = &self.lower {
            d.push_tensors("head.lower", &mut out);
        }
        for (i, d) in self.children.iter().enumerate() {
            d.push_tensors(&format!("head.child.{i}"), &mut out);
        }
        if let Some(d) = &self.global {
            d.push_tensors("head.global", &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(d) = &mut self.pool1 {
            d.push_tensors_mut("head.pool1", &mut out);
        }
        if let Some(d) = &mut self.pool2 {
            d.push_tensors_mut("head.pool2", &mut out);
        }
        if let Some(d) = &mut self.upper {
            d.push_tensors_mut("head.upper", &mut out);
        }
        if let Some(d) = &mut self.lower {
            d.push_tensors_mut("head.lower", &mut out);
        }
        for (i, d) in self.children.iter_mut().enumerate() {
            d.push_tensors_mut(&format!("head.child.{i}"), &mut out);
        }
        if let Some(d) = &mut self.global {
            d.push_tensors_mut("head.global", &mut out);
        }
        out
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    cls: Vec<T>,
    p1: Vec<T>,
    p2: Vec<T>,
    /// Sigmoid outputs of each layer before any gating or max-derivation.
    upper_sig: Vec<T>,
    lower_sig: Vec<T>,
    global_sig: Option<Vec<T>>,
    pub scores: ScoreSet,
}

fn sig_vec<T: Scalar>(z: Vec<T>) -> Vec<T> {
    z.into_iter().map(sigmoid).collect()
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.f64()).collect()
}

fn layer<'a, T>(d: &'a Option<Dense<T>>, what: &str) -> Result<&'a Dense<T>> {
    d.as_ref().ok_or_else(|| Error::Dimension(format!("head is missing its {what} layer")))
}

impl<T: Scalar> HeadParams<T> {
    pub fn forward_cached(&self, cls: &[T]) -> Result<HeadCache<T>> {
        if cls.len() != self.d_model() {
            return Err(Error::Dimension(format!(
                "cls embedding has {} dims, head expects {}",
                cls.len(),
                self.d_model()
            )));
        }
        let nl = self.n_lower();
        let mut cache = HeadCache {
            cls: cls.to_vec(),
            p1: Vec::new(),
            p2: Vec::new(),
            upper_sig: Vec::new(),
            lower_sig: Vec::new(),
            global_sig: None,
            scores: ScoreSet { upper: Vec::new(), lower: Vec::new(), global: None },
        };
        match self.kind() {
            HeadKind::SingleTask => {
                cache.lower_sig = sig_vec(layer(&self.lower, "lower")?.forward(cls, 1));
                let lower = to_f64(&cache.lower_sig);
                cache.scores.upper = self
                    .groups
                    .iter()
                    .map(|g| g.iter().map(|&c| lower[c]).fold(0.0, f64::max))
                    .collect();
                cache.scores.lower = lower;
            }
            HeadKind::Lcl => {
                cache.upper_sig = sig_vec(layer(&self.upper, "upper")?.forward(cls, 1));
                cache.lower_sig = sig_vec(layer(&self.lower, "lower")?.forward(cls, 1));
                cache.scores.upper = to_f64(&cache.upper_sig);
                cache.scores.lower = to_f64(&cache.lower_sig);
            }
            HeadKind::Lcpn => {
                cache.upper_sig = sig_vec(layer(&self.upper, "root")?.forward(cls, 1));
                cache.lower_sig = vec![T::zero(); nl];
                for (child, g) in self.children.iter().zip(&self.groups) {
                    let s = sig_vec(child.forward(cls, 1));
                    for (k, &c) in g.iter().enumerate() {
                        cache.lower_sig[c] = s[k];
                    }
                }
                cache.scores.upper = to_f64(&cache.upper_sig);
                cache.scores.lower = if self.config.lcpn_gating {
                    let mut lower = vec![0.0; nl];
                    for (u, g) in self.groups.iter().enumerate() {
                        for &c in g {
                            lower[c] = (cache.lower_sig[c] * cache.upper_sig[u]).f64();
                        }
                    }
                    lower
                } else {
                    to_f64(&cache.lower_sig)
                };
            }
            HeadKind::HmcnLocal | HeadKind::HmcnGlobal => {
                cache.p1 = layer(&self.pool1, "pool1")?.forward(cls, 1).into_iter().map(|z| z.tanh()).collect();
                cache.upper_sig = sig_vec(layer(&self.upper, "upper")?.forward(&cache.p1, 1));
                cache.p2 = layer(&self.pool2, "pool2")?.forward(&cache.p1, 1).into_iter().map(|z| z.tanh()).collect();
                cache.lower_sig = sig_vec(layer(&self.lower, "lower")?.forward(&cache.p2, 1));
                if self.kind() == HeadKind::HmcnGlobal {
                    let g = sig_vec(layer(&self.global, "global")?.forward(&cache.p2, 1));
                    cache.scores.global = Some(to_f64(&g));
                    cache.global_sig = Some(g);
                }
                cache.scores.upper = to_f64(&cache.upper_sig);
                cache.scores.lower = to_f64(&cache.lower_sig);
            }
        }
        Ok(cache)
    }

    pub fn forward(&self, cls: &[T]) -> Result<ScoreSet> {
        Ok(self.forward_cached(cls)?.scores)
    }

    /// Gradient of [`mtl_loss`] (times `weight`) w.r.t. all head parameters,
    /// accumulated into `grads`; returns the gradient w.r.t. the cls embedding.
    pub fn backward(
        &self,
        cache: &HeadCache<T>,
        gold_upper: &[f64],
        gold_lower: &[f64],
        lambda: f64,
        weight: f64,
        grads: &mut HeadParams<T>,
    ) -> Vec<T> {
        let (nu, nl) = (self.n_upper(), self.n_lower());
        let kind = self.kind();
        let (wu, wl) = match kind {
            HeadKind::SingleTask => (0.0, weight / nl as f64),
            _ => (weight * lambda / nu as f64, weight * (1.0 - lambda) / nl as f64),
        };
        // Logit gradients of sigmoid + cross-entropy are `w (s - y)`.
        let dz = |s: &[T], y: &[f64], w: f64| -> Vec<T> { s.iter().zip(y).map(|(&s, &y)| T::c(w * (s.f64() - y))).collect() };
        let mut dcls = vec![T::zero(); cache.cls.len()];
        let add = |acc: &mut Vec<T>, v: Vec<T>| {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
        };
        match kind {
            HeadKind::SingleTask => {
                let dl = dz(&cache.lower_sig, gold_lower, wl);
                add(&mut dcls, self.lower.as_ref().unwrap().backward(&cache.cls, &dl, 1, grads.lower.as_mut().unwrap()));
            }
            HeadKind::Lcl => {
                let du = dz(&cache.upper_sig, gold_upper, wu);
                let dl = dz(&cache.lower_sig, gold_lower, wl);
                add(&mut dcls, self.upper.as_ref().unwrap().backward(&cache.cls, &du, 1, grads.upper.as_mut().unwrap()));
                add(&mut dcls, self.lower.as_ref().unwrap().backward(&cache.cls, &dl, 1, grads.lower.as_mut().unwrap()));
            }
            HeadKind::Lcpn => {
                let mut du = dz(&cache.upper_sig, gold_upper, wu);
                let mut dlower = vec![T::zero(); nl];
                if self.config.lcpn_gating {
                    // s = g * u, loss on s: dL/ds = w (s - y) / (s (1 - s)).
                    for (u, g) in self.groups.iter().enumerate() {
                        let pu = cache.upper_sig[u].f64();
                        for &c in g {
                            let gc = cache.lower_sig[c].f64();
                            let s = (gc * pu).clamp(PROB_EPS, 1.0 - PROB_EPS);
                            let ds = wl * (s - gold_lower[c]) / (s * (1.0 - s));
                            dlower[c] = T::c(ds * gc * (1.0 - gc) * pu);
                            du[u] += T::c(ds * gc * pu * (1.0 - pu));
                        }
                    }
                } else {
                    dlower = dz(&cache.lower_sig, gold_lower, wl);
                }
                add(&mut dcls, self.upper.as_ref().unwrap().backward(&cache.cls, &du, 1, grads.upper.as_mut().unwrap()));
                for (u, g) in self.groups.iter().enumerate() {
                    let dchild: Vec<T> = g.iter().map(|&c| dlower[c]).collect();
                    add(&mut dcls, self.children[u].backward(&cache.cls, &dchild, 1, &mut grads.children[u]));
                }
            }
            HeadKind::HmcnLocal | HeadKind::HmcnGlobal => {
                let du = dz(&cache.upper_sig, gold_upper, wu);
                let dl = dz(&cache.lower_sig, gold_lower, wl);
                let mut dp2 = self.lower.as_ref().unwrap().backward(&cache.p2, &dl, 1, grads.lower.as_mut().unwrap());
                if let (Some(gs), Some(gl)) = (&cache.global_sig, &self.global) {
                    let target: Vec<f64> = gold_upper.iter().chain(gold_lower).copied().collect();
                    let dg = dz(gs, &target, weight / (nu + nl) as f64);
                    add(&mut dp2, gl.backward(&cache.p2, &dg, 1, grads.global.as_mut().unwrap()));
                }
                let dpre2: Vec<T> = dp2.iter().zip(&cache.p2).map(|(&g, &p)| g * (T::one() - p * p)).collect();
                let mut dp1 = self.pool2.as_ref().unwrap().backward(&cache.p1, &dpre2, 1, grads.pool2.as_mut().unwrap());
                add(&mut dp1, self.upper.as_ref().unwrap().backward(&cache.p1, &du, 1, grads.upper.as_mut().unwrap()));
                let dpre1: Vec<T> = dp1.iter().zip(&cache.p1).map(|(&g, &p)| g * (T::one() - p * p)).collect();
                add(&mut dcls, self.pool1.as_ref().unwrap().backward(&cache.cls, &dpre1, 1, grads.pool1.as_mut().unwrap()));
            }
        }
        dcls
    }
}

fn mean_bce(scores: &[f64], gold: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let sum: f64 = scores
        .iter()
        .zip(gold)
        .map(|(&s, &y)| {
            let s = s.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum();
    sum / scores.len() as f64
}

/// The two loss components `(L_upper, L_lower)` as mean binary cross-entropies.
pub fn level_losses(scores: &ScoreSet, gold_upper: &[f64], gold_lower: &[f64]) -> Result<(f64, f64)> {
    scores.validate()?;
    if scores.upper.len() != gold_upper.len() || scores.lower.len() != gold_lower.len() {
        return Err(Error::Dimension(format!(
            "scores ({}, {}) vs indicators ({}, {})",
            scores.upper.len(),
            scores.lower.len(),
            gold_upper.len(),
            gold_lower.len()
        )));
    }
    Ok((mean_bce(&scores.upper, gold_upper), mean_bce(&scores.lower, gold_lower)))
}

/// `λ L_upper + (1-λ) L_lower`, plus the global term for HMCN-global;
/// single-task models use `L_lower` alone.
pub fn mtl_loss(scores: &ScoreSet, kind: HeadKind, gold_upper: &[f64], gold_lower: &[f64], lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let (lt, lb) = level_losses(scores, gold_upper, gold_lower)?;
    let mut loss = match kind {
        HeadKind::SingleTask => lb,
        _ => lambda * lt + (1.0 - lambda) * lb,
    };
    if kind == HeadKind::HmcnGlobal {
        let g = scores
            .global
            .as_ref()
            .ok_or_else(|| Error::Dimension("global scores missing".into()))?;
        let target: Vec<f64> = gold_upper.iter().chain(gold_lower).copied().collect();
        if g.len() != target.len() {
            return Err(Error::Dimension(format!("global scores have {} entries, expected {}", g.len(), target.len())));
        }
        loss += mean_bce(g, &target);
    }
    Ok(loss)
}

/// Scores used for thresholding: local scores, fused with the global slice
/// when present.
pub fn decision_scores(scores: &ScoreSet, global_weight: f64) -> (Vec<f64>, Vec<f64>) {
    match &scores.global {
        Some(g) => {
            let nu = scores.upper.len();
            let mix = |l: &[f64], g: &[f64]| -> Vec<f64> {
                l.iter().zip(g).map(|(&a, &b)| (1.0 - global_weight) * a + global_weight * b).collect()
            };
            (mix(&scores.upper, &g[..nu]), mix(&scores.lower, &g[nu..]))
        }
        None => (scores.upper.clone(), scores.lower.clone()),
    }
}

/// Predicted label indices `(upper, lower)`; a score equal to the threshold counts.
pub fn predict(scores: &ScoreSet, threshold: f64, global_weight: f64) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let (u, l) = decision_scores(scores, global_weight);
    let pick = |v: &[f64]| v.iter().enumerate().filter(|(_, &s)| s >= threshold).map(|(i, _)| i).collect();
    (pick(&u), pick(&l))
}

/// As [`predict`], returning label names.
pub fn predict_labels(
    scores: &ScoreSet,
    threshold: f64,
    global_weight: f64,
    ontology: &LabelOntology,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let (u, l) = predict(scores, threshold, global_weight);
    (
        u.into_iter().map(|i| ontology.upper_labels()[i].clone()).collect(),
        l.into_iter().map(|i| ontology.lower_labels()[i].clone()).collect(),
    )
}
