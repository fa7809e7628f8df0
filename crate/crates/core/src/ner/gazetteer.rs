use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{EntitySpan, EntityType};
use crate::error::Result;

/// Surface-form lists per entity type, matched case-insensitively on whole tokens.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: BTreeMap<EntityType, Vec<String>>,
    index: HashMap<Vec<String>, EntityType>,
    max_tokens: usize,
}

/// `(char_start, char_end, lowercased)` for each alphanumeric run.
fn word_tokens(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_alphanumeric() {
            match &mut current {
                Some((_, s)) => s.extend(c.to_lowercase()),
                None => current = Some((i, c.to_lowercase().collect())),
            }
        } else if let Some((start, s)) = current.take() {
            out.push((start, i, s));
        }
        n = i + 1;
    }
    if let Some((start, s)) = current {
        out.push((start, n, s));
    }
    out
}

impl Gazetteer {
    /// Adds a surface form. Blank forms and case-insensitive duplicates are ignored;
    /// a form already registered under another type keeps its first type.
    pub fn insert(&mut self, entity_type: EntityType, surface: &str) -> bool {
        let surface = surface.trim();
        let key: Vec<String> = word_tokens(surface).into_iter().map(|t| t.2).collect();
        if key.is_empty() || self.index.contains_key(&key) {
            return false;
        }
        self.max_tokens = self.max_tokens.max(key.len());
        self.index.insert(key, entity_type);
        self.entries.entry(entity_type).or_default().push(surface.to_string());
        true
    }

    pub fn from_lists<'a>(lists: impl IntoIterator<Item = (EntityType, &'a [String])>) -> Self {
        let mut g = Self::default();
        for (t, forms) in lists {
            for f in forms {
                g.insert(t, f);
            }
        }
        g
    }

    /// Reads `<dir>/<type>.txt` files, one surface form per line. Missing files are skipped.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut g = Self::default();
        for t in EntityType::ALL {
            let path = dir.join(format!("{}.txt", t.name()));
            if !path.exists() {
                continue;
            }
            for line in std::fs::read_to_string(&path)?.lines() {
                g.insert(t, line);
            }
        }
        Ok(g)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (t, forms) in &self.entries {
            let mut body = forms.join("\n");
            body.push('\n');
            std::fs::write(dir.join(format!("{}.txt", t.name())), body)?;
        }
        Ok(())
    }

    pub fn entries(&self, entity_type: EntityType) -> &[String] {
        self.entries.get(&entity_type).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Longest match starting at each token.
    pub(super) fn find_all(&self, text: &str) -> Vec<EntitySpan> {
        if self.is_empty() {
            return Vec::new();
        }
        let tokens = word_tokens(text);
        let mut out = Vec::new();
        let mut key = Vec::with_capacity(self.max_tokens);
        for i in 0..tokens.len() {
            let longest = (1..=self.max_tokens.min(tokens.len() - i)).rev().find_map(|n| {
                key.clear();
                key.extend(tokens[i..i + n].iter().map(|t| t.2.clone()));
                self.index.get(&key).map(|t| (n, *t))
            });
            if let Some((n, t)) = longest {
                let (start, end) = (tokens[i].0, tokens[i + n - 1].1);
                out.push(EntitySpan::new(start, end, t, super::char_slice(text, start, end)));
            }
        }
        out
    }
}
