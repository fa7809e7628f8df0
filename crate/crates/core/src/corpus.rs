//! Tweet data model, JSON Lines corpus files and event-based splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ner::{validate_spans, EntitySpan};
use crate::ontology::LabelOntology;

/// One labelled tweet. Upper labels are always derived from the lower labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTweet {
    pub id: String,
    pub event_id: String,
    pub event_type: String,
    pub text: String,
    pub entities: Vec<EntitySpan>,
    lower_labels: BTreeSet<String>,
    upper_labels: BTreeSet<String>,
}

impl AnnotatedTweet {
    pub fn new(
        id: impl Into<String>,
        event_id: impl Into<String>,
        event_type: impl Into<String>,
        text: impl Into<String>,
        entities: Vec<EntitySpan>,
        lower_labels: BTreeSet<String>,
        ontology: &LabelOntology,
    ) -> Result<Self> {
        let text = text.into();
        validate_spans(&text, &entities)?;
        let upper_labels = ontology.derive_upper_labels(&lower_labels)?;
        let mut entities = entities;
        entities.sort_by_key(|s| s.start);
        Ok(Self {
            id: id.into(),
            event_id: event_id.into(),
            event_type: event_type.into(),
            text,
            entities,
            lower_labels,
            upper_labels,
        })
    }

    pub fn lower_labels(&self) -> &BTreeSet<String> {
        &self.lower_labels
    }

    pub fn upper_labels(&self) -> &BTreeSet<String> {
        &self.upper_labels
    }

    pub fn set_lower_labels(&mut self, labels: BTreeSet<String>, ontology: &LabelOntology) -> Result<()> {
        self.upper_labels = ontology.derive_upper_labels(&labels)?;
        self.lower_labels = labels;
        Ok(())
    }

    /// Replaces the entity annotation after validating it against the text.
    pub fn set_entities(&mut self, mut entities: Vec<EntitySpan>) -> Result<()> {
        validate_spans(&self.text, &entities)?;
        entities.sort_by_key(|s| s.start);
        self.entities = entities;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TweetRecord {
    id: String,
    event_id: String,
    event_type: String,
    text: String,
    lower_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<Vec<EntitySpan>>,
}

pub fn parse_corpus(reader: impl BufRead, ontology: &LabelOntology) -> Result<Vec<AnnotatedTweet>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TweetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let labels: BTreeSet<String> = rec.lower_labels.into_iter().collect();
        let tweet = AnnotatedTweet::new(
            rec.id,
            rec.event_id,
            rec.event_type,
            rec.text,
            rec.entities.unwrap_or_default(),
            labels,
            ontology,
        )
        .map_err(|e| match e {
            Error::UnknownLabel(l) => Error::UnknownLabel(l),
            other => Error::Validation(format!("line {line_no}: {other}")),
        })?;
        out.push(tweet);
    }
    Ok(out)
}

/// Reads a JSON Lines corpus, preserving file order.
pub fn load_corpus(path: &Path, ontology: &LabelOntology) -> Result<Vec<AnnotatedTweet>> {
    let file = std::fs::File::open(path)?;
    parse_corpus(BufReader::new(file), ontology)
}

/// JSON Lines rendering, one tweet per line.
pub fn corpus_to_jsonl(corpus: &[AnnotatedTweet]) -> Result<String> {
    let mut out = String::new();
    for t in corpus {
        let rec = TweetRecord {
            id: t.id.clone(),
            event_id: t.event_id.clone(),
            event_type: t.event_type.clone(),
            text: t.text.clone(),
            lower_labels: t.lower_labels.iter().cloned().collect(),
            entities: Some(t.entities.clone()),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &[AnnotatedTweet]) -> Result<()> {
    std::fs::write(path, corpus_to_jsonl(corpus)?)?;
    Ok(())
}

/// Train/test partition by event identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_event_ids: BTreeSet<String>,
    pub test_event_ids: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn new(
        train: impl IntoIterator<Item = impl Into<String>>,
        test: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self> {
        let split = Self {
            train_event_ids: train.into_iter().map(Into::into).collect(),
            test_event_ids: test.into_iter().map(Into::into).collect(),
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.train_event_ids.intersection(&self.test_event_ids).next() {
            return Err(Error::Validation(format!("event `{e}` is in both train and test")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let split: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        split.validate()?;
        Ok(split)
    }
}

pub fn split_by_event(
    corpus: &[AnnotatedTweet],
    split: &DatasetSplit,
) -> Result<(Vec<AnnotatedTweet>, Vec<AnnotatedTweet>)> {
    split.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in corpus {
        if split.train_event_ids.contains(&t.event_id) {
            train.push(t.clone());
        } else if split.test_event_ids.contains(&t.event_id) {
            test.push(t.clone());
        } else {
            return Err(Error::Validation(format!(
                "event `{}` of tweet `{}` is in neither split",
                t.event_id, t.id
            )));
        }
    }
    Ok((train, test))
}

/// Multi-label stratified split into `(fit, dev)` with `ratio` of the tweets in
/// `fit`. Iterative assignment, rarest label first: each tweet goes to the side
/// that still wants the most of that label, subject to fixed side sizes.
pub fn stratified_dev_split(
    corpus: &[AnnotatedTweet],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<AnnotatedTweet>, Vec<AnnotatedTweet>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Validation(format!("cannot split a corpus of {n} tweets")));
    }
    let n_dev = (((1.0 - ratio) * n as f64).round() as usize).clamp(1, n - 1);
    let mut capacity = [n - n_dev, n_dev];
    let shares = [ratio, 1.0 - ratio];

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut label_count: BTreeMap<&str, usize> = BTreeMap::new();
    for t in corpus {
        for l in &t.lower_labels {
            *label_count.entry(l.as_str()).or_default() += 1;
        }
    }
    // desired[side][label]
    let mut desired: [BTreeMap<&str, f64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (&l, &c) in &label_count {
        desired[0].insert(l, shares[0] * c as f64);
        desired[1].insert(l, shares[1] * c as f64);
    }

    let mut side_of: Vec<Option<usize>> = vec![None; n];
    let mut remaining = label_count.clone();
    let assign = |i: usize,
                  side: usize,
                  side_of: &mut Vec<Option<usize>>,
                  capacity: &mut [usize; 2],
                  desired: &mut [BTreeMap<&str, f64>; 2],
                  remaining: &mut BTreeMap<&str, usize>| {
        side_of[i] = Some(side);
        capacity[side] -= 1;
        for l in &corpus[i].lower_labels {
            *desired[side].get_mut(l.as_str()).unwrap() -= 1.0;
            *remaining.get_mut(l.as_str()).unwrap() -= 1;
        }
    };

    loop {
        let Some((&label, _)) = remaining
            .iter()
            .filter(|(_, &c)| c > 0)
            .min_by_key(|(l, &c)| (c, *l))
        else {
            break;
        };
        for &i in &order {
            if side_of[i].is_some() || !corpus[i].lower_labels.contains(label) {
                continue;
            }
            let side = if capacity[0] == 0 {
                1
            } else if capacity[1] == 0 {
                0
            } else {
                let (d0, d1) = (desired[0][label], desired[1][label]);
                if d0 > d1 {
                    0
                } else if d1 > d0 {
                    1
                } else if capacity[1] as f64 / shares[1] > capacity[0] as f64 / shares[0] {
                    1
                } else {
                    0
                }
            };
            assign(i, side, &mut side_of, &mut capacity, &mut desired, &mut remaining);
        }
    }
    for &i in &order {
        if side_of[i].is_none() {
            let side = if capacity[0] >= capacity[1] && capacity[0] > 0 { 0 } else { 1 };
            assign(i, side, &mut side_of, &mut capacity, &mut desired, &mut remaining);
        }
    }

    let mut fit = Vec::with_capacity(n - n_dev);
    let mut dev = Vec::with_capacity(n_dev);
    for (t, side) in corpus.iter().zip(side_of) {
        match side {
            Some(0) => fit.push(t.clone()),
            _ => dev.push(t.clone()),
        }
    }
    Ok((fit, dev))
}

/// Distinct event ids in first-seen order.
pub fn event_ids(corpus: &[AnnotatedTweet]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    corpus
        .iter()
        .filter(|t| seen.insert(t.event_id.clone()))
        .map(|t| t.event_id.clone())
        .collect()
}
