//! Entity spans over tweet text: local pattern + gazetteer annotation, a
//! remote annotator client, and strict span scoring.

mod gazetteer;
mod patterns;
mod remote;
mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gazetteer::Gazetteer;
pub use remote::{fetch_remote_annotations, RemoteConfig, RemoteOutcome, Rejection};
pub use score::{strict_ner_f1, NerScore};

/// The closed set of entity kinds. Declaration order is the tie-break order
/// used by [`resolve_overlaps`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Hashtag,
    Url,
    Person,
    Location,
    Organization,
    Event,
    Address,
    PhoneNumber,
    Date,
    Number,
}

impl EntityType {
    pub const ALL: [EntityType; 10] = [
        EntityType::Hashtag,
        EntityType::Url,
        EntityType::Person,
        EntityType::Location,
        EntityType::Organization,
        EntityType::Event,
        EntityType::Address,
        EntityType::PhoneNumber,
        EntityType::Date,
        EntityType::Number,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityType::Hashtag => "hashtag",
            EntityType::Url => "url",
            EntityType::Person => "person",
            EntityType::Location => "location",
            EntityType::Organization => "organization",
            EntityType::Event => "event",
            EntityType::Address => "address",
            EntityType::PhoneNumber => "phone_number",
            EntityType::Date => "date",
            EntityType::Number => "number",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown entity type `{s}`")))
    }
}

/// A typed entity occurrence. Offsets count Unicode scalar values; `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    #[serde(rename = "text")]
    pub surface: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: EntityType, surface: impl Into<String>) -> Self {
        Self { start, end, entity_type, surface: surface.into() }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Checks bounds and that `surface` is the exact text slice.
    pub fn validate(&self, text: &str) -> Result<()> {
        let n = text.chars().count();
        if !(self.start < self.end && self.end <= n) {
            return Err(Error::Validation(format!(
                "span [{}, {}) out of bounds for text of length {n}",
                self.start, self.end
            )));
        }
        let slice = char_slice(text, self.start, self.end);
        if slice != self.surface {
            return Err(Error::Validation(format!(
                "span [{}, {}) covers `{slice}`, not `{}`",
                self.start, self.end, self.surface
            )));
        }
        Ok(())
    }
}

/// Validates each span against `text` and checks that spans are mutually non-overlapping.
pub fn validate_spans(text: &str, spans: &[EntitySpan]) -> Result<()> {
    for s in spans {
        s.validate(text)?;
    }
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for pair in sorted.windows(2) {
        if pair[0].overlaps(pair[1]) {
            return Err(Error::Validation(format!(
                "spans [{}, {}) and [{}, {}) overlap",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    Ok(())
}

/// Substring by Unicode scalar offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let from = indices.nth(start).unwrap_or(text.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        from
    };
    &text[from..to]
}

/// Keeps a non-overlapping subset: longest first, then smaller start, then
/// [`EntityType`] order. Output is sorted by start.
pub fn resolve_overlaps(mut spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    spans.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(a.start.cmp(&b.start))
            .then(a.entity_type.cmp(&b.entity_type))
    });
    let mut kept: Vec<EntitySpan> = Vec::with_capacity(spans.len());
    for span in spans {
        if !kept.iter().any(|k| k.overlaps(&span)) {
            kept.push(span);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

/// Rule and gazetteer annotation of a single text.
pub fn annotate(text: &str, gazetteer: &Gazetteer) -> Vec<EntitySpan> {
    if text.is_empty() {
        return Vec::new();
    }
    let mut candidates = patterns::find_all(text);
    candidates.extend(gazetteer.find_all(text));
    resolve_overlaps(candidates)
}

/// Annotates many texts, in input order.
pub fn annotate_all<S: AsRef<str> + Sync>(texts: &[S], gazetteer: &Gazetteer) -> Vec<Vec<EntitySpan>> {
    crate::parallel::map(texts, |_, t| annotate(t.as_ref(), gazetteer))
}
