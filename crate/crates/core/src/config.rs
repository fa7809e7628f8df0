//! Experiment configuration: INI sections `[data] [ner] [tokenizer]
//! [pretrain] [finetune] [eval]`, overridable with `section.key=value`.
//!
//! Keys and their types come from the serialized defaults, so the accepted
//! key set, the parser, and the `--help` listing cannot drift apart.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadKind};
use crate::masking::MaskingConfig;
use crate::synth::SyntheticSpec;
use crate::trainer::TrainConfig;

pub const SECTIONS: [&str; 6] = ["data", "ner", "tokenizer", "pretrain", "finetune", "eval"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    /// JSONL corpus; empty means generate a synthetic one.
    pub corpus: Option<String>,
    pub ontology: Option<String>,
    /// Train/test event split (JSON); required with `corpus`.
    pub split: Option<String>,
    pub event_types: Vec<String>,
    pub events_per_type: usize,
    pub tweets_per_event: usize,
    /// Entities per event for every entity type.
    pub pool_size: usize,
    pub spurious_correlation: f64,
    pub neutral_rate: f64,
    pub two_label_rate: f64,
    pub templates: Option<String>,
    /// Synthetic events per type held out for testing.
    pub test_events_per_type: usize,
    /// Share of training-event tweets moved to the dev split.
    pub dev_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            corpus: None,
            ontology: None,
            split: None,
            event_types: s.event_types,
            events_per_type: s.events_per_type,
            tweets_per_event: s.tweets_per_event,
            pool_size: 4,
            spurious_correlation: 0.9,
            neutral_rate: 0.2,
            two_label_rate: s.two_label_rate,
            templates: None,
            test_events_per_type: 1,
            dev_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerSection {
    /// `rules`, `gold`, `remote` or `none`.
    pub source: String,
    /// Directory of gazetteer files; synthetic runs default to the generator's pools.
    pub gazetteer: Option<String>,
    pub remote_url: Option<String>,
    pub max_retries: usize,
    pub batch_size: usize,
    pub timeout_secs: u64,
}

impl Default for NerSection {
    fn default() -> Self {
        Self { source: "rules".into(), gazetteer: None, remote_url: None, max_retries: 2, batch_size: 32, timeout_secs: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSection {
    pub vocab_size: usize,
    pub max_len: usize,
    pub lowercase: bool,
    /// Collapse entity spans to placeholder tokens.
    pub entity_tokens: bool,
    /// Existing vocabulary file; trained from the fit split when empty.
    pub vocab: Option<String>,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 2000, max_len: crate::tokenizer::DEFAULT_MAX_LEN, lowercase: true, entity_tokens: true, vocab: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSection {
    pub enabled: bool,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    #[serde(flatten)]
    pub masking: MaskingConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let e = EncoderConfig::desk(0);
        Self {
            enabled: true,
            n_layers: e.n_layers,
            n_heads: e.n_heads,
            d_model: e.d_model,
            d_ff: e.d_ff,
            dropout: e.dropout,
            masking: MaskingConfig::default(),
            train: TrainConfig::pretrain_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSection {
    pub head: HeadKind,
    pub lcpn_gating: bool,
    pub global_weight: f64,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let h = HeadConfig::new(HeadKind::HmcnLocal);
        Self { head: h.kind, lcpn_gating: h.lcpn_gating, global_weight: h.global_weight, train: TrainConfig::finetune_default() }
    }
}

impl FinetuneSection {
    pub fn head_config(&self) -> HeadConfig {
        HeadConfig { kind: self.head, lcpn_gating: self.lcpn_gating, global_weight: self.global_weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub threshold: f64,
    pub skip_zero_support: bool,
    /// TF-IDF+LR grid, searched on dev.
    pub baseline_l2: Vec<f64>,
    pub baseline_ngram_max: Vec<usize>,
    pub baseline_max_features: usize,
    pub baseline_tol: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            skip_zero_support: false,
            baseline_l2: vec![1e-4, 1e-3, 1e-2],
            baseline_ngram_max: vec![1, 2],
            baseline_max_features: 20_000,
            baseline_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataSection,
    pub ner: NerSection,
    pub tokenizer: TokenizerSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            data: DataSection::default(),
            ner: NerSection::default(),
            tokenizer: TokenizerSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Keys owned by the global `seed` and not settable per section.
fn reserved(section: &str, key: &str) -> bool {
    section != "" && key == "seed"
}

fn parse_scalar(template: &Value, raw: &str, what: &str) -> Result<Value> {
    let raw = raw.trim();
    let bad = || Error::Config(format!("cannot parse `{raw}` for `{what}`"));
    Ok(match template {
        Value::Bool(_) => match raw.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Value::Bool(true),
            "false" | "no" | "off" | "0" => Value::Bool(false),
            _ => return Err(bad()),
        },
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let x = raw.parse::<f64>().map_err(|_| bad())?;
            if !x.is_finite() {
                return Err(bad());
            }
            Value::from(x)
        }
        // Strings and unset optional paths; an empty value clears an optional.
        Value::Null if raw.is_empty() => Value::Null,
        _ => Value::String(raw.to_string()),
    })
}

fn parse_value(template: &Value, raw: &str, what: &str) -> Result<Value> {
    match template {
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::String(String::new()));
            let parts = raw.split(',').map(str::trim).filter(|s| !s.is_empty());
            Ok(Value::Array(parts.map(|p| parse_scalar(&elem, p, what)).collect::<Result<_>>()?))
        }
        t => parse_scalar(t, raw, what),
    }
}

fn defaults_json() -> Value {
    serde_json::to_value(PipelineConfig::default()).expect("defaults serialize")
}

/// Sets `section.key` (or bare `seed`) on a config in JSON form.
pub fn apply_setting(config: &mut Value, path: &str, raw: &str) -> Result<()> {
    let defaults = defaults_json();
    let (section, key) = path.split_once('.').unwrap_or(("", path));
    if reserved(section, key) {
        return Err(Error::Config(format!("`{path}` is set through the global seed")));
    }
    let template = if section.is_empty() {
        defaults.get(key)
    } else {
        defaults.get(section).and_then(|s| s.get(key))
    }
    .filter(|t| !t.is_object())
    .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
    let value = parse_value(template, raw, path)?;
    let slot = if section.is_empty() {
        config.as_object_mut()
    } else {
        config.get_mut(section).and_then(Value::as_object_mut)
    }
    .ok_or_else(|| Error::Config(format!("config has no section `{section}`")))?;
    slot.insert(key.to_string(), value);
    Ok(())
}

/// `section.key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form section.key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl PipelineConfig {
    pub fn from_json(v: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalized()
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Defaults, then INI entries, then overrides, in that order.
    pub fn from_ini_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Config(format!("INI: {e}")))?;
        let mut v = defaults_json();
        for (section, props) in ini.iter() {
            if let Some(s) = section {
                if !SECTIONS.contains(&s) {
                    return Err(Error::Config(format!("unknown section `[{s}]`")));
                }
            }
            for (k, val) in props.iter() {
                let path = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                };
                apply_setting(&mut v, &path, val)?;
            }
        }
        for (k, val) in overrides {
            apply_setting(&mut v, k, val)?;
        }
        Self::from_json(v)
    }

    pub fn load_ini(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_ini_str(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = self.to_json();
        for (k, val) in overrides {
            apply_setting(&mut v, k, val)?;
        }
        Self::from_json(v)
    }

    /// Propagates the global seed and validates every section.
    pub fn normalized(mut self) -> Result<Self> {
        self.pretrain.train.seed = self.seed;
        self.finetune.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        for (name, p) in [("spurious_correlation", d.spurious_correlation), ("neutral_rate", d.neutral_rate), ("two_label_rate", d.two_label_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("data.{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(d.dev_fraction > 0.0 && d.dev_fraction < 1.0) {
            return Err(Error::Config("data.dev_fraction must lie in (0, 1)".into()));
        }
        if d.corpus.is_some() && d.split.is_none() {
            return Err(Error::Config("data.split is required with data.corpus".into()));
        }
        if !["rules", "gold", "remote", "none"].contains(&self.ner.source.as_str()) {
            return Err(Error::Config(format!("ner.source `{}` is not one of rules, gold, remote, none", self.ner.source)));
        }
        if self.ner.source == "remote" && self.ner.remote_url.is_none() {
            return Err(Error::Config("ner.remote_url is required with ner.source = remote".into()));
        }
        if self.tokenizer.max_len < 3 {
            return Err(Error::Config("tokenizer.max_len must be at least 3".into()));
        }
        self.encoder_config(crate::tokenizer::N_SPECIAL + 1).validate()?;
        self.pretrain.masking.validate()?;
        self.pretrain.train.validate()?;
        self.finetune.train.validate()?;
        if !(0.0..=1.0).contains(&self.finetune.global_weight) || !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("finetune.global_weight and eval.threshold must lie in [0, 1]".into()));
        }
        if self.eval.baseline_l2.is_empty() || self.eval.baseline_l2.iter().any(|&l| l <= 0.0) {
            return Err(Error::Config("eval.baseline_l2 needs positive values".into()));
        }
        if self.eval.baseline_ngram_max.is_empty() || self.eval.baseline_ngram_max.contains(&0) {
            return Err(Error::Config("eval.baseline_ngram_max needs positive values".into()));
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let p = &self.pretrain;
        EncoderConfig {
            n_layers: p.n_layers,
            n_heads: p.n_heads,
            d_model: p.d_model,
            d_ff: p.d_ff,
            max_len: self.tokenizer.max_len,
            vocab_size,
            dropout: p.dropout,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let d = &self.data;
        SyntheticSpec {
            event_types: d.event_types.clone(),
            events_per_type: d.events_per_type,
            tweets_per_event: d.tweets_per_event,
            pool_sizes: crate::ner::EntityType::ALL.into_iter().map(|t| (t, d.pool_size)).collect(),
            spurious_correlation: d.spurious_correlation,
            neutral_rate: d.neutral_rate,
            two_label_rate: d.two_label_rate,
            templates: d.templates.as_ref().map(Into::into),
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.to_json()).expect("config serializes").as_bytes())
    }

    /// INI rendering of the full configuration.
    pub fn to_ini(&self) -> String {
        let v = self.to_json();
        let mut out = format!("seed = {}\n", v["seed"]);
        for s in SECTIONS {
            out.push_str(&format!("\n[{s}]\n"));
            for (k, val) in v[s].as_object().unwrap() {
                if !reserved(s, k) {
                    out.push_str(&format!("{k} = {}\n", render(val)));
                }
            }
        }
        out
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// `(key, default)` for every settable key, in file order.
pub fn documented_keys() -> Vec<(String, String)> {
    let v = defaults_json();
    let mut out = vec![("seed".to_string(), render(&v["seed"]))];
    for s in SECTIONS {
        let obj: &Map<String, Value> = v[s].as_object().unwrap();
        for (k, val) in obj {
            if !reserved(s, k) {
                out.push((format!("{s}.{k}"), render(val)));
            }
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    crate::baseline::hex(&Sha256::digest(bytes))
}
