//! Stage orchestration behind the command-line tools. Every command writes
//! its artifacts plus a `manifest.json` from which it can be re-run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::baseline::{self, FeatureSpace, LogRegConfig, OvrModel, TfidfConfig};
use crate::checkpoint::Checkpoint;
use crate::config::{sha256_hex, PipelineConfig};
use crate::corpus::{self, AnnotatedTweet, DatasetSplit};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::heads::predict;
use crate::model::Model;
use crate::ner::{self, EntitySpan, EntityType, Gazetteer, RemoteConfig};
use crate::ontology::LabelOntology;
use crate::synth::{generate_synthetic, SyntheticSpec};
use crate::tokenizer::{self, TokenSequence, Vocab};
use crate::trainer::{self, Trace, TrainOutcome};

pub const MANIFEST_SCHEMA: &str = "manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Synth,
    Annotate,
    NerEval,
    Vocab,
    Pretrain,
    Finetune,
    Evaluate,
    Ablate,
    Baseline,
    Run,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Synth,
        Command::Annotate,
        Command::NerEval,
        Command::Vocab,
        Command::Pretrain,
        Command::Finetune,
        Command::Evaluate,
        Command::Ablate,
        Command::Baseline,
        Command::Run,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Annotate => "annotate",
            Command::NerEval => "ner-eval",
            Command::Vocab => "vocab",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Baseline => "baseline",
            Command::Run => "run",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// Command-specific inputs that are not part of the configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandArgs {
    /// Synthetic corpus spec (JSON) for `synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    /// Checkpoint to start fine-tuning from, or to evaluate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub command: Command,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub args: CommandArgs,
    pub config_hash: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub conventions: BTreeMap<String, String>,
    pub summary: Value,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: not a manifest: {e}", path.display())))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Config(format!("unsupported manifest schema `{}`", m.schema)));
        }
        Ok(m)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        PipelineConfig::from_json(self.config.clone())
    }
}

/// Whether `path` holds a manifest rather than an INI file.
pub fn is_manifest(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|s| serde_json::from_str::<Value>(&s).ok())
        .is_some_and(|v| v.get("schema").and_then(Value::as_str) == Some(MANIFEST_SCHEMA))
}

fn versions() -> BTreeMap<String, String> {
    [
        ("crisis-hmc", env!("CARGO_PKG_VERSION")),
        ("checkpoint_format", "CHMC1"),
        ("report_schema", eval::SCHEMA),
        ("manifest_schema", MANIFEST_SCHEMA),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn conventions(cfg: &PipelineConfig) -> BTreeMap<String, String> {
    let zero = if cfg.eval.skip_zero_support {
        "labels without gold support are left out of macro averages"
    } else {
        "labels without gold support count as F1 = 0"
    };
    [
        ("pretrain_selection", format!("lowest {} over evaluation points, earliest on ties", trainer::PRETRAIN_METRIC)),
        ("finetune_selection", format!("highest {} over evaluation points, earliest on ties", trainer::FINETUNE_METRIC)),
        ("dev_split", format!("stratified {} of training-event tweets", cfg.data.dev_fraction)),
        ("pretrain_corpus", "fit split only; dev texts give the selection loss".to_string()),
        ("zero_support", zero.to_string()),
        ("upper_from_lower", "single-task and baseline upper scores are the max over children".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn seeds(cfg: &PipelineConfig) -> BTreeMap<String, u64> {
    ["global", "synthetic_corpus", "dev_split", "encoder_init", "masking", "dropout", "head_init", "baseline_start"]
        .into_iter()
        .map(|k| (k.to_string(), cfg.seed))
        .collect()
}

/// Pre-trained checkpoints shared between runs with identical upstream settings.
#[derive(Default)]
pub struct PretrainCache {
    entries: HashMap<String, (Checkpoint, Trace)>,
}

fn pretrain_key(cfg: &PipelineConfig) -> String {
    let v = cfg.to_json();
    let up = json!({"seed": v["seed"], "data": v["data"], "ner": v["ner"], "tokenizer": v["tokenizer"], "pretrain": v["pretrain"]});
    sha256_hex(up.to_string().as_bytes())
}

pub(crate) struct Session<'a> {
    pub cfg: &'a PipelineConfig,
    pub args: &'a CommandArgs,
    pub out: PathBuf,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: Map<String, Value>,
    pub cache: Option<&'a mut PretrainCache>,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a PipelineConfig, args: &'a CommandArgs, out: &Path, cache: Option<&'a mut PretrainCache>) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self {
            cfg,
            args,
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: Map::new(),
            cache,
        })
    }

    /// Writes `name` under the output directory and records its digest.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes.as_ref())?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes.as_ref()));
        Ok(path)
    }

    /// Records a file written by someone else.
    fn record(&mut self, path: &Path) -> Result<()> {
        let name = path.strip_prefix(&self.out).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.outputs.insert(name, sha256_hex(&std::fs::read(path)?));
        Ok(())
    }

    fn read_input(&mut self, key: &str, path: &str) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{key} `{path}`: {e}")))?;
        self.inputs.insert(format!("{key}:{path}"), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        match f(self) {
            Ok(v) => Ok(v),
            Err(e) => {
                if let Error::Diverged { last_good, .. } = &e {
                    let bytes = last_good.to_bytes()?;
                    self.write(&format!("{name}_last_good.chmc"), bytes)?;
                }
                Err(e.in_stage(name))
            }
        }
    }

    fn manifest(&self, command: Command, error: Option<&Error>) -> Manifest {
        let failed_stage = match error {
            Some(Error::Stage { stage, .. }) => Some(stage.clone()),
            _ => None,
        };
        Manifest {
            schema: MANIFEST_SCHEMA.into(),
            command,
            status: if error.is_some() { "failed".into() } else { "ok".into() },
            failed_stage,
            error: error.map(|e| e.to_string()),
            args: self.args.clone(),
            config_hash: self.cfg.hash(),
            config: self.cfg.to_json(),
            seeds: seeds(self.cfg),
            versions: versions(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            conventions: conventions(self.cfg),
            summary: Value::Object(self.summary.clone()),
        }
    }
}

/// Tweets of the three splits after annotation.
pub struct Splits {
    pub ontology: LabelOntology,
    pub fit: Vec<AnnotatedTweet>,
    pub dev: Vec<AnnotatedTweet>,
    pub test: Vec<AnnotatedTweet>,
    pub gazetteer: Gazetteer,
}

struct Loaded {
    ontology: LabelOntology,
    tweets: Vec<AnnotatedTweet>,
    split: DatasetSplit,
    gazetteer: Gazetteer,
}

fn load_ontology(s: &mut Session) -> Result<LabelOntology> {
    match s.cfg.data.ontology.clone() {
        Some(p) => {
            let bytes = s.read_input("ontology", &p)?;
            LabelOntology::from_json_str(&String::from_utf8_lossy(&bytes))
        }
        None => {
            s.inputs.insert("ontology:bundled".into(), sha256_hex(LabelOntology::bundled_json().as_bytes()));
            Ok(LabelOntology::trecis())
        }
    }
}

fn synthetic_spec(s: &mut Session) -> Result<SyntheticSpec> {
    match s.args.spec.clone() {
        Some(p) => {
            let bytes = s.read_input("spec", &p)?;
            let mut spec: SyntheticSpec =
                serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("spec `{p}`: {e}")))?;
            spec.seed = s.cfg.seed;
            Ok(spec)
        }
        None => Ok(s.cfg.synthetic_spec()),
    }
}

fn load_raw(s: &mut Session) -> Result<Loaded> {
    let cfg = s.cfg;
    let ontology = load_ontology(s)?;
    let (tweets, split, mut gazetteer) = match &cfg.data.corpus {
        Some(path) => {
            let bytes = s.read_input("corpus", path)?;
            let tweets = corpus::parse_corpus(bytes.as_slice(), &ontology)?;
            let split_path = cfg.data.split.as_deref().expect("validated");
            let split: DatasetSplit = serde_json::from_slice(&s.read_input("split", split_path)?)
                .map_err(|e| Error::Config(format!("split `{split_path}`: {e}")))?;
            split.validate()?;
            (tweets, split, Gazetteer::default())
        }
        None => {
            let spec = synthetic_spec(s)?;
            if let Some(t) = &spec.templates {
                s.read_input("templates", &t.to_string_lossy())?;
            }
            let synth = generate_synthetic(&spec, &ontology)?;
            let test_per_type = cfg.data.test_events_per_type;
            let split = spec.split(test_per_type)?;
            s.inputs.insert("synthetic_corpus".into(), sha256_hex(corpus::corpus_to_jsonl(&synth.tweets)?.as_bytes()));
            (synth.tweets.clone(), split, synth.gazetteer())
        }
    };
    if let Some(dir) = cfg.ner.gazetteer.clone() {
        gazetteer = Gazetteer::default();
        for t in EntityType::ALL {
            let p = Path::new(&dir).join(format!("{}.txt", t.name()));
            if p.exists() {
                let text = String::from_utf8_lossy(&s.read_input("gazetteer", &p.to_string_lossy())?).into_owned();
                for line in text.lines() {
                    gazetteer.insert(t, line);
                }
            }
        }
    }
    Ok(Loaded { ontology, tweets, split, gazetteer })
}

/// Predicted entity spans for every tweet, per `[ner] source`.
fn annotate_tweets(s: &mut Session, tweets: &mut [AnnotatedTweet], gazetteer: &Gazetteer) -> Result<()> {
    let ner = &s.cfg.ner;
    let spans: Vec<Vec<EntitySpan>> = match ner.source.as_str() {
        "gold" => return Ok(()),
        "none" => vec![Vec::new(); tweets.len()],
        "rules" => {
            let texts: Vec<&str> = tweets.iter().map(|t| t.text.as_str()).collect();
            ner::annotate_all(&texts, gazetteer)
        }
        _ => {
            let rc = RemoteConfig {
                url: ner.remote_url.clone().expect("validated"),
                max_retries: ner.max_retries,
                batch_size: ner.batch_size,
                timeout_secs: ner.timeout_secs,
                ..RemoteConfig::new("")
            };
            let docs: Vec<(String, String)> = tweets.iter().map(|t| (t.id.clone(), t.text.clone())).collect();
            let outcome = ner::fetch_remote_annotations(&docs, &rc, gazetteer)?;
            s.summary.insert("ner_rejections".into(), json!(outcome.rejections.len()));
            s.write("ner_rejections.json", serde_json::to_string_pretty(&outcome.rejections)? + "\n")?;
            outcome.spans
        }
    };
    for (t, sp) in tweets.iter_mut().zip(spans) {
        t.set_entities(sp)?;
    }
    Ok(())
}

fn prepare(s: &mut Session) -> Result<Splits> {
    let loaded = s.stage("data", load_raw)?;
    let Loaded { ontology, mut tweets, split, gazetteer } = loaded;
    s.stage("annotate", |s| annotate_tweets(s, &mut tweets, &gazetteer))?;
    let (train, test) = s.stage("data", |s| {
        let r = corpus::split_by_event(&tweets, &split)?;
        if r.0.len() < 2 || r.1.is_empty() {
            return Err(Error::Validation("train and test splits must both be non-empty".into()));
        }
        s.summary.insert("n_test".into(), json!(r.1.len()));
        Ok(r)
    })?;
    let (fit, dev) = corpus::stratified_dev_split(&train, 1.0 - s.cfg.data.dev_fraction, s.cfg.seed).map_err(|e| e.in_stage("data"))?;
    s.summary.insert("n_fit".into(), json!(fit.len()));
    s.summary.insert("n_dev".into(), json!(dev.len()));
    Ok(Splits { ontology, fit, dev, test, gazetteer })
}

/// Text with entity spans blanked out, for vocabulary training.
fn without_entities(t: &AnnotatedTweet) -> String {
    let mut out = String::with_capacity(t.text.len());
    let mut spans = t.entities.iter().peekable();
    for (i, c) in t.text.chars().enumerate() {
        while spans.peek().is_some_and(|s| s.end <= i) {
            spans.next();
        }
        match spans.peek() {
            Some(s) if s.start <= i => {
                if s.start == i {
                    out.push(' ');
                }
            }
            _ => out.push(c),
        }
    }
    out
}

fn vocab_stage(s: &mut Session, fit: &[AnnotatedTweet]) -> Result<Vocab> {
    s.stage("vocab", |s| {
        let tk = &s.cfg.tokenizer;
        let vocab = match tk.vocab.clone() {
            Some(p) => {
                let bytes = s.read_input("vocab", &p)?;
                let text = String::from_utf8_lossy(&bytes);
                Vocab::from_tokens(text.lines().map(str::to_string).collect(), tk.lowercase)?
            }
            None => {
                let texts: Vec<String> = if tk.entity_tokens {
                    fit.iter().map(without_entities).collect()
                } else {
                    fit.iter().map(|t| t.text.clone()).collect()
                };
                tokenizer::train_vocab(&texts, tk.vocab_size, tk.lowercase)?
            }
        };
        s.summary.insert("vocab_size".into(), json!(vocab.len()));
        s.write("vocab.txt", vocab.to_file_string())?;
        Ok(vocab)
    })
}

fn encode(cfg: &PipelineConfig, vocab: &Vocab, tweets: &[AnnotatedTweet]) -> Vec<TokenSequence> {
    let none: &[EntitySpan] = &[];
    crate::parallel::map(tweets, |_, t| {
        let spans = if cfg.tokenizer.entity_tokens { t.entities.as_slice() } else { none };
        vocab.encode(&t.text, spans, cfg.tokenizer.max_len)
    })
}

struct Encoded {
    fit: Vec<TokenSequence>,
    dev: Vec<TokenSequence>,
    test: Vec<TokenSequence>,
}

fn encode_stage(s: &mut Session, vocab: &Vocab, splits: &Splits) -> Result<Encoded> {
    let cfg = s.cfg;
    s.stage("encode", |_| {
        Ok(Encoded { fit: encode(cfg, vocab, &splits.fit), dev: encode(cfg, vocab, &splits.dev), test: encode(cfg, vocab, &splits.test) })
    })
}

fn fresh_encoder(cfg: &PipelineConfig, enc: &EncoderConfig) -> Checkpoint {
    let params = EncoderParams::init(enc, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    Checkpoint::new(Model::new(enc.clone(), params, None), 0, None)
}

fn trace_summary(trace: &Trace) -> Value {
    json!({
        "metric": trace.metric,
        "selected_step": trace.selected_step,
        "selected_value": trace.rows.iter().find(|r| r.step == trace.selected_step).map(|r| r.metric),
        "evaluations": trace.rows.len(),
        "last_step": trace.rows.last().map(|r| r.step),
    })
}

fn pretrain_stage(s: &mut Session, vocab: &Vocab, enc: &Encoded) -> Result<Checkpoint> {
    let cfg = s.cfg;
    s.stage("pretrain", |s| {
        let enc_cfg = cfg.encoder_config(vocab.len());
        let key = pretrain_key(cfg);
        let cached = s.cache.as_ref().and_then(|c| c.entries.get(&key).cloned());
        let (best, trace) = match cached {
            Some(hit) => hit,
            None => {
                let TrainOutcome { best, trace, .. } =
                    trainer::pretrain(&enc.fit, &enc.dev, &cfg.pretrain.masking, &enc_cfg, &cfg.pretrain.train, None)?;
                if let Some(c) = s.cache.as_mut() {
                    c.entries.insert(key, (best.clone(), trace.clone()));
                }
                (best, trace)
            }
        };
        s.write("pretrain.chmc", best.to_bytes()?)?;
        s.write("pretrain_trace.csv", trace.to_csv())?;
        s.summary.insert("pretrain".into(), trace_summary(&trace));
        Ok(best)
    })
}

fn load_checkpoint(s: &mut Session, vocab: &Vocab) -> Result<Option<Checkpoint>> {
    let Some(p) = s.args.checkpoint.clone() else { return Ok(None) };
    let ck = Checkpoint::from_bytes(&s.read_input("checkpoint", &p)?)?;
    if ck.model.config.vocab_size != vocab.len() || ck.model.config.max_len != s.cfg.tokenizer.max_len {
        return Err(Error::Validation(format!(
            "checkpoint expects vocabulary {} and max_len {}, configuration gives {} and {}",
            ck.model.config.vocab_size,
            ck.model.config.max_len,
            vocab.len(),
            s.cfg.tokenizer.max_len
        )));
    }
    Ok(Some(ck))
}

fn finetune_stage(s: &mut Session, start: &Checkpoint, splits: &Splits, enc: &Encoded) -> Result<Checkpoint> {
    let cfg = s.cfg;
    s.stage("finetune", |s| {
        let labels = |ts: &[AnnotatedTweet]| ts.iter().map(|t| t.lower_labels().clone()).collect::<Vec<_>>();
        let fit = trainer::cls_examples(&enc.fit, &labels(&splits.fit), &splits.ontology)?;
        let dev = trainer::cls_examples(&enc.dev, &labels(&splits.dev), &splits.ontology)?;
        let head = cfg.finetune.head_config();
        let out = trainer::finetune(start, &head, &splits.ontology, &fit, &dev, &cfg.finetune.train, cfg.eval.threshold)?;
        s.write("finetune.chmc", out.best.to_bytes()?)?;
        s.write("finetune_trace.csv", out.trace.to_csv())?;
        s.summary.insert("finetune".into(), trace_summary(&out.trace));
        Ok(out.best)
    })
}

fn emit(s: &mut Session, report: &EvalReport, stem: &str) -> Result<()> {
    for p in eval::emit_report(report, &s.out, stem)? {
        s.record(&p)?;
    }
    let mut scores = json!({
        "macro_f1_upper": report.macro_f1_upper,
        "macro_f1_lower": report.macro_f1_lower,
        "macro_f1_ait": report.macro_f1_ait,
    });
    scores["n_documents"] = json!(report.n_documents);
    s.summary.insert(stem.to_string(), scores);
    Ok(())
}

fn names(idx: &BTreeSet<usize>, all: &[String]) -> BTreeSet<String> {
    idx.iter().map(|&i| all[i].clone()).collect()
}

/// Reports on dev and test for a model carrying a head.
fn evaluate_stage(s: &mut Session, ck: &Checkpoint, splits: &Splits, enc: &Encoded, prefix: &str) -> Result<(EvalReport, EvalReport)> {
    let cfg = s.cfg;
    s.stage("evaluate", |s| {
        let head = ck.model.head.as_ref().ok_or_else(|| Error::Validation("checkpoint has no classification head".into()))?;
        let gw = head.config.global_weight;
        let mut reports = Vec::new();
        for (name, tweets, seqs) in [("dev", &splits.dev, &enc.dev), ("test", &splits.test, &enc.test)] {
            let ids: Vec<&[usize]> = seqs.iter().map(|q| q.ids.as_slice()).collect();
            let scores = ck.model.scores(&ids)?;
            let (mut pu, mut pl) = (Vec::new(), Vec::new());
            for sc in &scores {
                let (u, l) = predict(sc, cfg.eval.threshold, gw);
                pu.push(names(&u, splits.ontology.upper_labels()));
                pl.push(names(&l, splits.ontology.lower_labels()));
            }
            let report = eval::evaluate(
                &format!("{prefix}{name}"),
                &pu,
                &pl,
                tweets,
                &splits.ontology,
                cfg.eval.threshold,
                cfg.eval.skip_zero_support,
                cfg.to_json(),
            )?;
            emit(s, &report, &format!("report_{prefix}{name}"))?;
            reports.push(report);
        }
        let test = reports.pop().unwrap();
        let dev = reports.pop().unwrap();
        s.summary.insert(format!("{prefix}dev_test_gap_lower"), json!(dev.macro_f1_lower - test.macro_f1_lower));
        Ok((dev, test))
    })
}

fn indicators(tweets: &[AnnotatedTweet], labels: &[String]) -> Vec<Vec<bool>> {
    tweets.iter().map(|t| labels.iter().map(|l| t.lower_labels().contains(l)).collect()).collect()
}

fn baseline_predictions(model: &OvrModel, docs: &[baseline::SparseDoc], threshold: f64, o: &LabelOntology) -> (Vec<BTreeSet<String>>, Vec<BTreeSet<String>>) {
    docs.iter().map(|d| model.predict(d, threshold, o)).unzip()
}

/// TF-IDF + LR grid search on dev, then dev/test reports for the selected setting.
fn baseline_stage(s: &mut Session, splits: &Splits) -> Result<()> {
    let cfg = s.cfg;
    s.stage("baseline", |s| {
        let o = &splits.ontology;
        let labels = o.lower_labels().to_vec();
        let text = |ts: &[AnnotatedTweet]| ts.iter().map(|t| t.text.clone()).collect::<Vec<_>>();
        let (fit_text, dev_text, test_text) = (text(&splits.fit), text(&splits.dev), text(&splits.test));
        let y = indicators(&splits.fit, &labels);
        let gold_dev: Vec<BTreeSet<String>> = splits.dev.iter().map(|t| t.lower_labels().clone()).collect();
        let mut grid = String::from("ngram_max,l2,dev_macro_f1_lower,max_grad_norm\n");
        let mut best: Option<(f64, FeatureSpace, OvrModel)> = None;
        for &ngram_max in &cfg.eval.baseline_ngram_max {
            let tf = TfidfConfig { ngram_min: 1, ngram_max, max_features: cfg.eval.baseline_max_features, lowercase: cfg.tokenizer.lowercase };
            let space = FeatureSpace::fit(&fit_text, &tf)?;
            let fit_docs = space.transform_all(&fit_text);
            let dev_docs = space.transform_all(&dev_text);
            for &l2 in &cfg.eval.baseline_l2 {
                let lr = LogRegConfig { l2, tol: cfg.eval.baseline_tol, seed: cfg.seed, ..LogRegConfig::default() };
                let model = baseline::train_ovr_logreg(&fit_docs, space.len(), &y, &labels, &lr)?;
                let (_, pl) = baseline_predictions(&model, &dev_docs, cfg.eval.threshold, o);
                let f1 = eval::macro_f1(&pl, &gold_dev, &labels, cfg.eval.skip_zero_support)?.macro_f1;
                let gmax = model.fits.iter().map(|f| f.grad_norm).fold(0.0, f64::max);
                grid.push_str(&format!("{ngram_max},{l2},{f1:.6},{gmax:.3e}\n"));
                if best.as_ref().is_none_or(|b| f1 > b.0) {
                    best = Some((f1, space.clone(), model));
                }
            }
        }
        s.write("baseline_grid.csv", grid)?;
        let (_, space, model) = best.expect("non-empty grid");
        let (json_path, bin_path) = baseline::save_baseline(&s.out, "baseline", &space, &model)?;
        s.record(&json_path)?;
        s.record(&bin_path)?;
        let echo = cfg.to_json();
        for (name, tweets, texts) in [("dev", &splits.dev, &dev_text), ("test", &splits.test, &test_text)] {
            let docs = space.transform_all(texts);
            let (pu, pl) = baseline_predictions(&model, &docs, cfg.eval.threshold, o);
            let report = eval::evaluate(&format!("baseline_{name}"), &pu, &pl, tweets, o, cfg.eval.threshold, cfg.eval.skip_zero_support, echo.clone())?;
            emit(s, &report, &format!("report_baseline_{name}"))?;
        }
        let trained: Vec<_> = model.fits.iter().filter(|f| f.trained).collect();
        s.summary.insert(
            "baseline".into(),
            json!({
                "ngram_max": space.config.ngram_max,
                "l2": model.config.l2,
                "n_features": space.len(),
                "trained_labels": trained.len(),
                "max_grad_norm": trained.iter().map(|f| f.grad_norm).fold(0.0, f64::max),
                "objectives": model.fits.iter().map(|f| if f.trained { json!(f.objective) } else { Value::Null }).collect::<Vec<_>>(),
            }),
        );
        Ok(())
    })
}

fn ner_eval_stage(s: &mut Session, gold: &[AnnotatedTweet], pred: &[AnnotatedTweet]) -> Result<()> {
    s.stage("ner-eval", |s| {
        let g: Vec<Vec<EntitySpan>> = gold.iter().map(|t| t.entities.clone()).collect();
        let p: Vec<Vec<EntitySpan>> = pred.iter().map(|t| t.entities.clone()).collect();
        let overall = ner::strict_ner_f1(&g, &p)?;
        let mut per_type = Map::new();
        for ty in EntityType::ALL {
            let keep = |v: &[Vec<EntitySpan>]| -> Vec<Vec<EntitySpan>> {
                v.iter().map(|d| d.iter().filter(|x| x.entity_type == ty).cloned().collect()).collect()
            };
            let sc = ner::strict_ner_f1(&keep(&g), &keep(&p))?;
            if sc.n_gold + sc.n_pred > 0 {
                per_type.insert(ty.name().to_string(), serde_json::to_value(sc)?);
            }
        }
        let body = json!({"documents": gold.len(), "overall": overall, "per_type": per_type});
        s.write("ner_eval.json", serde_json::to_string_pretty(&body)? + "\n")?;
        s.summary.insert("ner_strict_f1".into(), json!(overall.f1));
        Ok(())
    })
}

fn run_inner(s: &mut Session, command: Command) -> Result<()> {
    match command {
        Command::Synth => s.stage("synth", |s| {
            let ontology = load_ontology(s)?;
            let spec = synthetic_spec(s)?;
            let synth = generate_synthetic(&spec, &ontology)?;
            let split = spec.split(s.cfg.data.test_events_per_type)?;
            s.write("corpus.jsonl", corpus::corpus_to_jsonl(&synth.tweets)?)?;
            s.write("split.json", serde_json::to_string_pretty(&split)? + "\n")?;
            s.write("pools.json", serde_json::to_string_pretty(&synth.pools)? + "\n")?;
            let g = synth.gazetteer();
            for t in EntityType::ALL {
                let entries = g.entries(t);
                if !entries.is_empty() {
                    s.write(&format!("gazetteer/{}.txt", t.name()), entries.join("\n") + "\n")?;
                }
            }
            s.summary.insert("n_tweets".into(), json!(synth.tweets.len()));
            Ok(())
        }),
        Command::Annotate | Command::NerEval => {
            let Loaded { ontology: _, tweets: gold, gazetteer, .. } = s.stage("data", load_raw)?;
            let mut pred = gold.clone();
            s.stage("annotate", |s| annotate_tweets(s, &mut pred, &gazetteer))?;
            if command == Command::Annotate {
                s.stage("annotate", |s| s.write("annotated.jsonl", corpus::corpus_to_jsonl(&pred)?).map(|_| ()))
            } else {
                ner_eval_stage(s, &gold, &pred)
            }
        }
        Command::Vocab => {
            let splits = prepare(s)?;
            vocab_stage(s, &splits.fit).map(|_| ())
        }
        Command::Pretrain => {
            let splits = prepare(s)?;
            let vocab = vocab_stage(s, &splits.fit)?;
            let enc = encode_stage(s, &vocab, &splits)?;
            pretrain_stage(s, &vocab, &enc).map(|_| ())
        }
        Command::Finetune | Command::Evaluate | Command::Run => {
            let splits = prepare(s)?;
            let vocab = vocab_stage(s, &splits.fit)?;
            let enc = encode_stage(s, &vocab, &splits)?;
            let loaded = s.stage("checkpoint", |s| load_checkpoint(s, &vocab))?;
            let model = if command == Command::Evaluate {
                loaded.ok_or_else(|| Error::Config("evaluate needs a checkpoint".into()).in_stage("checkpoint"))?
            } else {
                let start = match loaded {
                    Some(ck) => ck,
                    None if command == Command::Run && s.cfg.pretrain.enabled => pretrain_stage(s, &vocab, &enc)?,
                    None => fresh_encoder(s.cfg, &s.cfg.encoder_config(vocab.len())),
                };
                finetune_stage(s, &start, &splits, &enc)?
            };
            if command != Command::Finetune {
                evaluate_stage(s, &model, &splits, &enc, "")?;
            }
            Ok(())
        }
        Command::Baseline => {
            let splits = prepare(s)?;
            baseline_stage(s, &splits)
        }
        Command::Ablate => crate::ablation::run_ablation(s),
    }
}

/// Runs `command` into `out`, writing `manifest.json` whether or not it succeeds.
pub fn execute(command: Command, cfg: &PipelineConfig, args: &CommandArgs, out: &Path) -> Result<Manifest> {
    execute_cached(command, cfg, args, out, None)
}

pub fn execute_cached(
    command: Command,
    cfg: &PipelineConfig,
    args: &CommandArgs,
    out: &Path,
    cache: Option<&mut PretrainCache>,
) -> Result<Manifest> {
    let mut s = Session::new(cfg, args, out, cache)?;
    let result = run_inner(&mut s, command);
    let manifest = s.manifest(command, result.as_ref().err());
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(out.join(MANIFEST_FILE), body)?;
    result.map(|_| manifest)
}

/// Re-runs a manifest's command and configuration into `out`.
pub fn rerun(manifest: &Manifest, out: &Path) -> Result<Manifest> {
    execute(manifest.command, &manifest.pipeline_config()?, &manifest.args, out)
}
