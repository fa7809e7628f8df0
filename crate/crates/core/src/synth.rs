//! Synthetic crisis-tweet corpus with controllable event-specific entity bias.
//!
//! Every event owns a disjoint entity pool. Each label phrase carries one
//! entity slot; with probability `spurious_correlation` the slot receives the
//! event's signature entity for that label, otherwise a uniform draw from the
//! event pool. A fraction `neutral_rate` of label phrases is replaced by a
//! label-free phrase, so that only the entity (if any) hints at the label.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedTweet, DatasetSplit};
use crate::error::{Error, Result};
use crate::ner::{EntitySpan, EntityType, Gazetteer};
use crate::ontology::LabelOntology;

const BUNDLED_TEMPLATES: &str = include_str!("../data/synthetic_templates.json");
const SLOT: &str = "{e}";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSet {
    pub labels: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub neutral: Vec<String>,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_TEMPLATES).expect("bundled templates parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn validate(&self, ontology: &LabelOntology) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Config("template set is empty".into()));
        }
        for (label, templates) in &self.labels {
            ontology.lower_index(label)?;
            if templates.is_empty() {
                return Err(Error::Config(format!("no templates for label `{label}`")));
            }
        }
        for t in self.labels.values().flatten().chain(&self.neutral) {
            if t.matches(SLOT).count() != 1 {
                return Err(Error::Config(format!("template must have exactly one slot: `{t}`")));
            }
            let at = t.find(SLOT).unwrap();
            let before = t[..at].chars().next_back();
            let after = t[at + SLOT.len()..].chars().next();
            if before.is_some_and(|c| !c.is_whitespace()) || after.is_some_and(|c| !c.is_whitespace()) {
                return Err(Error::Config(format!("slot must stand alone between spaces: `{t}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub event_types: Vec<String>,
    pub events_per_type: usize,
    pub tweets_per_event: usize,
    /// Entities generated per event for each type.
    pub pool_sizes: BTreeMap<EntityType, usize>,
    /// Probability that a label phrase carries the event's signature entity for that label.
    pub spurious_correlation: f64,
    /// Probability that a label phrase is replaced by a label-free phrase.
    pub neutral_rate: f64,
    /// Probability of a second lower label.
    pub two_label_rate: f64,
    /// Template file; the bundled templates are used when absent.
    pub templates: Option<PathBuf>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            event_types: ["flood", "wildfire", "earthquake", "storm"].map(String::from).to_vec(),
            events_per_type: 4,
            tweets_per_event: 60,
            pool_sizes: EntityType::ALL.into_iter().map(|t| (t, 4)).collect(),
            spurious_correlation: 0.0,
            neutral_rate: 0.0,
            two_label_rate: 0.3,
            templates: None,
            seed: 13,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("spurious_correlation", self.spurious_correlation),
            ("neutral_rate", self.neutral_rate),
            ("two_label_rate", self.two_label_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.event_types.is_empty() || self.events_per_type == 0 {
            return Err(Error::Config("at least one event is required".into()));
        }
        if self.pool_sizes.values().sum::<usize>() == 0 {
            return Err(Error::Config("entity pools are empty".into()));
        }
        Ok(())
    }

    pub fn event_id(event_type: &str, k: usize) -> String {
        format!("{event_type}-{k:02}")
    }

    /// Holds out the last `test_per_type` events of every type.
    pub fn split(&self, test_per_type: usize) -> Result<DatasetSplit> {
        if test_per_type == 0 || test_per_type >= self.events_per_type {
            return Err(Error::Config(format!(
                "cannot hold out {test_per_type} of {} events per type",
                self.events_per_type
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for t in &self.event_types {
            for k in 0..self.events_per_type {
                let id = Self::event_id(t, k);
                if k >= self.events_per_type - test_per_type {
                    test.push(id);
                } else {
                    train.push(id);
                }
            }
        }
        DatasetSplit::new(train, test)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventPool {
    pub event_id: String,
    pub entities: Vec<(EntityType, String)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub tweets: Vec<AnnotatedTweet>,
    pub pools: Vec<EventPool>,
}

impl SyntheticCorpus {
    /// Gazetteer over every event pool (the generator's closed vocabulary).
    pub fn gazetteer(&self) -> Gazetteer {
        let mut g = Gazetteer::default();
        for pool in &self.pools {
            for (t, s) in &pool.entities {
                if matches!(
                    t,
                    EntityType::Person
                        | EntityType::Location
                        | EntityType::Organization
                        | EntityType::Event
                        | EntityType::Address
                ) {
                    g.insert(*t, s);
                }
            }
        }
        g
    }
}

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

struct NameMaker {
    used: HashSet<String>,
    reserved: HashSet<String>,
}

impl NameMaker {
    fn new(reserved: HashSet<String>) -> Self {
        Self { used: HashSet::new(), reserved }
    }

    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "th"];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
        const CODAS: &[&str] = &["", "", "n", "r", "k", "l", "s", "th"];
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(VOWELS.choose(rng).unwrap());
            }
            w.push_str(CODAS.choose(rng).unwrap());
            if !self.reserved.contains(&w) && self.used.insert(w.clone()) {
                let mut chars = w.chars();
                let first = chars.next().unwrap().to_ascii_uppercase();
                return std::iter::once(first).chain(chars).collect();
            }
        }
    }

    fn unique(&mut self, mut make: impl FnMut(&mut ChaCha8Rng) -> String, rng: &mut ChaCha8Rng) -> String {
        loop {
            let s = make(rng);
            if self.used.insert(s.clone()) {
                return s;
            }
        }
    }

    fn entity(&mut self, t: EntityType, event_type: &str, rng: &mut ChaCha8Rng) -> String {
        match t {
            EntityType::Hashtag => {
                let w = self.word(rng).to_lowercase();
                format!("#{w}{event_type}")
            }
            EntityType::Url => self.unique(
                |r| {
                    let code: String = (0..7)
                        .map(|_| {
                            let c = r.random_range(0..36u32);
                            std::char::from_digit(c, 36).unwrap()
                        })
                        .collect();
                    format!("http://t.co/{code}")
                },
                rng,
            ),
            EntityType::Person => format!("{} {}", self.word(rng), self.word(rng)),
            EntityType::Location => self.word(rng),
            EntityType::Organization => {
                let suffix = ["Relief Corps", "Aid Agency", "Rescue Trust"].choose(rng).unwrap();
                format!("{} {suffix}", self.word(rng))
            }
            EntityType::Event => {
                let suffix = ["Festival", "Marathon", "Summit"].choose(rng).unwrap();
                format!("{} {suffix}", self.word(rng))
            }
            EntityType::Address => {
                let n = rng.random_range(1..200);
                format!("{n} {} Road", self.word(rng))
            }
            EntityType::PhoneNumber => self.unique(
                |r| format!("555-{:03}-{:04}", r.random_range(100..1000), r.random_range(0..10000)),
                rng,
            ),
            EntityType::Date => self.unique(
                |r| {
                    format!(
                        "{} {}, {}",
                        MONTHS.choose(r).unwrap(),
                        r.random_range(1..29),
                        r.random_range(2005..2023)
                    )
                },
                rng,
            ),
            EntityType::Number => self.unique(|r| r.random_range(10..10000).to_string(), rng),
        }
    }
}

fn template_words(templates: &TemplateSet) -> HashSet<String> {
    templates
        .labels
        .values()
        .flatten()
        .chain(&templates.neutral)
        .flat_map(|t| t.split_whitespace().map(|w| w.to_lowercase()))
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec, ontology: &LabelOntology) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let templates = match &spec.templates {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::bundled(),
    };
    templates.validate(ontology)?;
    if spec.neutral_rate > 0.0 && templates.neutral.is_empty() {
        return Err(Error::Config("neutral_rate > 0 but no neutral templates".into()));
    }
    let labels: Vec<&String> = templates.labels.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut names = NameMaker::new(template_words(&templates));

    let mut tweets = Vec::new();
    let mut pools = Vec::new();
    for event_type in &spec.event_types {
        for k in 0..spec.events_per_type {
            let event_id = SyntheticSpec::event_id(event_type, k);
            let mut pool = Vec::new();
            for t in EntityType::ALL {
                for _ in 0..spec.pool_sizes.get(&t).copied().unwrap_or(0) {
                    pool.push((t, names.entity(t, event_type, &mut rng)));
                }
            }
            let mut perm: Vec<usize> = (0..pool.len()).collect();
            perm.shuffle(&mut rng);
            let signature: BTreeMap<&str, usize> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), perm[i % perm.len()]))
                .collect();

            for j in 0..spec.tweets_per_event {
                let mut chosen: Vec<&str> = vec![labels.choose(&mut rng).unwrap().as_str()];
                if labels.len() > 1 && rng.random::<f64>() < spec.two_label_rate {
                    loop {
                        let l = labels.choose(&mut rng).unwrap().as_str();
                        if l != chosen[0] {
                            chosen.push(l);
                            break;
                        }
                    }
                }
                let mut text = String::new();
                let mut len = 0usize;
                let mut entities = Vec::new();
                for (p, label) in chosen.iter().enumerate() {
                    let template = if rng.random::<f64>() < spec.neutral_rate {
                        templates.neutral.choose(&mut rng).unwrap()
                    } else {
                        templates.labels[*label].choose(&mut rng).unwrap()
                    };
                    let entity = if rng.random::<f64>() < spec.spurious_correlation {
                        &pool[signature[label]]
                    } else {
                        pool.choose(&mut rng).unwrap()
                    };
                    if p > 0 {
                        text.push_str(". ");
                        len += 2;
                    }
                    let (before, after) = template.split_once(SLOT).unwrap();
                    text.push_str(before);
                    len += before.chars().count();
                    let n = entity.1.chars().count();
                    entities.push(EntitySpan::new(len, len + n, entity.0, entity.1.clone()));
                    text.push_str(&entity.1);
                    len += n;
                    text.push_str(after);
                    len += after.chars().count();
                }
                let lower: BTreeSet<String> = chosen.iter().map(|s| s.to_string()).collect();
                tweets.push(AnnotatedTweet::new(
                    format!("{event_id}-{j:04}"),
                    event_id.clone(),
                    event_type.clone(),
                    text,
                    entities,
                    lower,
                    ontology,
                )?);
            }
            pools.push(EventPool { event_id, entities: pool });
        }
    }
    Ok(SyntheticCorpus { tweets, pools })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ner::{annotate, char_slice, strict_ner_f1};

    fn small(spurious: f64) -> SyntheticSpec {
        SyntheticSpec {
            event_types: vec!["flood".into(), "wildfire".into()],
            events_per_type: 2,
            tweets_per_event: 50,
            spurious_correlation: spurious,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn counts() {
        let o = LabelOntology::trecis();
        let c = generate_synthetic(&small(0.5), &o).unwrap();
        assert_eq!(c.tweets.len(), 200);
        assert_eq!(crate::corpus::event_ids(&c.tweets).len(), 4);
    }

    #[test]
    fn gold_spans_slice_exactly() {
        let o = LabelOntology::trecis();
        let c = generate_synthetic(&small(0.9), &o).unwrap();
        for t in &c.tweets {
            for s in &t.entities {
                assert_eq!(char_slice(&t.text, s.start, s.end), s.surface);
            }
        }
    }

    #[test]
    fn entities_stay_in_event_pool() {
        let o = LabelOntology::trecis();
        let c = generate_synthetic(&small(0.5), &o).unwrap();
        let pools: BTreeMap<&str, HashSet<&str>> = c
            .pools
            .iter()
            .map(|p| (p.event_id.as_str(), p.entities.iter().map(|e| e.1.as_str()).collect()))
            .collect();
        let mut all = HashSet::new();
        for p in &c.pools {
            for e in &p.entities {
                assert!(all.insert(e.1.clone()), "entity {} shared between pools", e.1);
            }
        }
        for t in &c.tweets {
            for s in &t.entities {
                assert!(pools[t.event_id.as_str()].contains(s.surface.as_str()));
            }
        }
    }

    #[test]
    fn annotator_recovers_gold_with_pool_gazetteer() {
        let o = LabelOntology::trecis();
        let c = generate_synthetic(&small(0.7), &o).unwrap();
        let g = c.gazetteer();
        let gold: Vec<_> = c.tweets.iter().map(|t| t.entities.clone()).collect();
        let pred: Vec<_> = c.tweets.iter().map(|t| annotate(&t.text, &g)).collect();
        let score = strict_ner_f1(&gold, &pred).unwrap();
        assert_eq!(score.f1, 1.0, "{score:?}");
    }

    fn mutual_information(pairs: &[(String, String)]) -> f64 {
        let n = pairs.len() as f64;
        let mut joint: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        let mut a: BTreeMap<&str, f64> = BTreeMap::new();
        let mut b: BTreeMap<&str, f64> = BTreeMap::new();
        for (x, y) in pairs {
            *joint.entry((x, y)).or_default() += 1.0;
            *a.entry(x).or_default() += 1.0;
            *b.entry(y).or_default() += 1.0;
        }
        joint
            .iter()
            .map(|(&(x, y), &c)| c / n * ((c * n) / (a[x] * b[y])).ln())
            .sum()
    }

    fn surface_label_pairs(c: &SyntheticCorpus) -> Vec<(String, String)> {
        // single-label tweets only, so each entity is paired with its own label
        c.tweets
            .iter()
            .filter(|t| t.lower_labels().len() == 1)
            .flat_map(|t| {
                let l = t.lower_labels().iter().next().unwrap().clone();
                t.entities.iter().map(move |s| (s.surface.clone(), l.clone()))
            })
            .collect()
    }

    #[test]
    fn no_entity_label_dependence_without_spurious_correlation() {
        let o = LabelOntology::trecis();
        let spec = SyntheticSpec { tweets_per_event: 400, ..small(0.0) };
        let pairs = surface_label_pairs(&generate_synthetic(&spec, &o).unwrap());
        let observed = mutual_information(&pairs);
        // null distribution: labels shuffled independently of surfaces
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut null = Vec::new();
        for _ in 0..20 {
            let mut labels: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect();
            labels.shuffle(&mut rng);
            let shuffled: Vec<_> = pairs.iter().map(|p| p.0.clone()).zip(labels).collect();
            null.push(mutual_information(&shuffled));
        }
        let null_max = null.iter().cloned().fold(0.0, f64::max);
        let null_mean = null.iter().sum::<f64>() / null.len() as f64;
        assert!(observed < null_max * 1.25, "observed {observed}, null max {null_max}");

        let biased = surface_label_pairs(&generate_synthetic(&SyntheticSpec { tweets_per_event: 400, ..small(0.9) }, &o).unwrap());
        assert!(mutual_information(&biased) > 2.0 * null_mean);
    }

    #[test]
    fn deterministic() {
        let o = LabelOntology::trecis();
        let a = generate_synthetic(&small(0.4), &o).unwrap();
        let b = generate_synthetic(&small(0.4), &o).unwrap();
        assert_eq!(a.tweets, b.tweets);
    }

    #[test]
    fn config_errors() {
        let o = LabelOntology::trecis();
        assert!(generate_synthetic(&small(1.5), &o).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(&path, r#"{"labels": {}}"#).unwrap();
        let spec = SyntheticSpec { templates: Some(path.clone()), ..small(0.0) };
        assert!(matches!(generate_synthetic(&spec, &o), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"labels": {"News": []}}"#).unwrap();
        assert!(matches!(generate_synthetic(&spec, &o), Err(Error::Config(_))));
    }

    #[test]
    fn split_holds_out_last_events() {
        let s = small(0.0).split(1).unwrap();
        assert!(s.test_event_ids.contains("flood-01"));
        assert!(s.train_event_ids.contains("flood-00"));
        assert!(small(0.0).split(2).is_err());
    }
}
