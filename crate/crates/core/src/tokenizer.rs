//! Subword vocabulary and tweet encoding with entity placeholders.
//!
//! Words are split on whitespace and punctuation. Training starts from the
//! character inventory (word-initial characters plus `##`-prefixed
//! continuation characters) and repeatedly merges the most frequent adjacent
//! pair. Encoding is greedy longest-match-first over the vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ner::{EntitySpan, EntityType};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const CONTINUATION: &str = "##";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;
/// Number of reserved tokens: five control tokens and one per entity type.
pub const N_SPECIAL: usize = 15;

pub const DEFAULT_MAX_LEN: usize = 64;

pub fn entity_token(t: EntityType) -> String {
    format!("<{}>", t.name())
}

pub fn entity_token_id(t: EntityType) -> usize {
    5 + t.index()
}

pub fn is_entity_id(id: usize) -> bool {
    (5..N_SPECIAL).contains(&id)
}

fn special_tokens() -> Vec<String> {
    let mut v: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    v.extend(EntityType::ALL.iter().map(|&t| entity_token(t)));
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
    max_piece_chars: usize,
}

/// Splits on whitespace and isolates punctuation characters.
pub fn pre_tokenize(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut cur: Option<(usize, String)> = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_whitespace() {
            if let Some((s, w)) = cur.take() {
                out.push((s, i, w));
            }
        } else if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
            if let Some((s, w)) = cur.take() {
                out.push((s, i, w));
            }
            out.push((i, i + 1, c.to_string()));
        } else {
            match &mut cur {
                Some((_, w)) => w.push(c),
                None => cur = Some((i, c.to_string())),
            }
        }
    }
    if let Some((s, w)) = cur {
        out.push((s, n, w));
    }
    out
}

fn normalize(word: &str, lowercase: bool) -> String {
    if lowercase {
        word.to_lowercase()
    } else {
        word.to_string()
    }
}

fn merge_symbols(a: &str, b: &str) -> String {
    format!("{a}{}", b.strip_prefix(CONTINUATION).unwrap_or(b))
}

/// Frequency-based pair merging until the vocabulary reaches `target_size`.
/// Ties between pairs of equal frequency go to the lexicographically smallest pair.
pub fn train_vocab<S: AsRef<str>>(texts: &[S], target_size: usize, lowercase: bool) -> Result<Vocab> {
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for t in texts {
        for (_, _, w) in pre_tokenize(t.as_ref()) {
            *word_freq.entry(normalize(&w, lowercase)).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Config("cannot train a vocabulary on an empty corpus".into()));
    }
    let specials = special_tokens();
    let mut tokens = specials.clone();
    let mut seen: HashMap<String, usize> =
        specials.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .iter()
        .map(|(w, &f)| {
            let symbols = w
                .chars()
                .enumerate()
                .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
                .collect();
            (symbols, f)
        })
        .collect();
    let mut base: Vec<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    base.sort();
    base.dedup();
    if target_size <= N_SPECIAL + base.len() {
        return Err(Error::Config(format!(
            "target vocabulary size {target_size} must exceed {} specials + {} base symbols",
            N_SPECIAL,
            base.len()
        )));
    }
    for b in base {
        if !seen.contains_key(&b) {
            seen.insert(b.clone(), tokens.len());
            tokens.push(b);
        }
    }

    while tokens.len() < target_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, f) in &words {
            for w in symbols.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|((a, b), _)| !seen.contains_key(&merge_symbols(a, b)))
            .max_by(|(pa, fa), (pb, fb)| fa.cmp(fb).then_with(|| pb.cmp(pa)))
            .map(|((a, b), _)| (a.to_string(), b.to_string()));
        let Some((a, b)) = best else {
            // every word is a single symbol already
            break;
        };
        let merged = merge_symbols(&a, &b);
        for (symbols, _) in &mut words {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == a && symbols[i + 1] == b {
                    symbols[i] = merged.clone();
                    symbols.remove(i + 1);
                }
                i += 1;
            }
        }
        seen.insert(merged.clone(), tokens.len());
        tokens.push(merged);
    }
    Vocab::from_tokens(tokens, lowercase)
}

/// Where an encoded position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alignment {
    None,
    /// Character range in the source text.
    Chars(usize, usize),
    /// Index into the entity span list.
    Entity(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub is_special: Vec<bool>,
    pub is_entity: Vec<bool>,
    pub is_continuation: Vec<bool>,
    pub alignment: Vec<Alignment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of positions before padding.
    pub fn content_len(&self) -> usize {
        self.ids.iter().rposition(|&id| id != PAD_ID).map_or(0, |p| p + 1)
    }

    /// 1 for real tokens, 0 for padding.
    pub fn attention_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&id| id != PAD_ID).collect()
    }

    fn push(&mut self, id: usize, special: bool, entity: bool, cont: bool, align: Alignment) {
        self.ids.push(id);
        self.is_special.push(special);
        self.is_entity.push(entity);
        self.is_continuation.push(cont);
        self.alignment.push(align);
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        let specials = special_tokens();
        if tokens.len() < N_SPECIAL || tokens[..N_SPECIAL] != specials[..] {
            return Err(Error::Validation("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::Validation(format!("invalid token at line {}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate token `{t}`")));
            }
        }
        let max_piece_chars = tokens[N_SPECIAL..]
            .iter()
            .map(|t| t.strip_prefix(CONTINUATION).unwrap_or(t).chars().count())
            .max()
            .unwrap_or(1);
        Ok(Self { tokens, index, lowercase, max_piece_chars })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path, lowercase: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect(), lowercase)
    }

    /// Greedy longest-match-first pieces of one word.
    fn word_pieces(&self, word: &str) -> Vec<(usize, usize, usize)> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start < chars.len() {
            let mut found = None;
            let max_end = chars.len().min(start + self.max_piece_chars);
            for end in (start + 1..=max_end).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.extend(&chars[start..end]);
                if let Some(&id) = self.index.get(&buf) {
                    if id >= N_SPECIAL {
                        found = Some((id, end));
                        break;
                    }
                }
            }
            match found {
                Some((id, end)) => {
                    out.push((id, start, end));
                    start = end;
                }
                None => {
                    out.push((UNK_ID, start, start + 1));
                    start += 1;
                }
            }
        }
        out
    }

    /// Encodes `text` with every entity span collapsed to its type's placeholder.
    /// Content is truncated to `max_len - 2` tokens and padded to `max_len`.
    pub fn encode(&self, text: &str, entities: &[EntitySpan], max_len: usize) -> TokenSequence {
        assert!(max_len >= 2, "max_len must leave room for CLS and SEP");
        let mut seq = TokenSequence {
            ids: Vec::with_capacity(max_len),
            is_special: Vec::with_capacity(max_len),
            is_entity: Vec::with_capacity(max_len),
            is_continuation: Vec::with_capacity(max_len),
            alignment: Vec::with_capacity(max_len),
        };
        seq.push(CLS_ID, true, false, false, Alignment::None);
        let budget = max_len - 2;
        let mut content = 0;

        let mut order: Vec<usize> = (0..entities.len()).collect();
        order.sort_by_key(|&i| entities[i].start);
        let chars: Vec<char> = text.chars().collect();
        let mut cursor = 0;
        let emit_segment = |seq: &mut TokenSequence, from: usize, to: usize, content: &mut usize| {
            let segment: String = chars[from..to].iter().collect();
            for (ws, _, w) in pre_tokenize(&segment) {
                let w = normalize(&w, self.lowercase);
                for (k, (id, a, b)) in self.word_pieces(&w).into_iter().enumerate() {
                    if *content == budget {
                        return;
                    }
                    seq.push(id, false, false, k > 0, Alignment::Chars(from + ws + a, from + ws + b));
                    *content += 1;
                }
            }
        };
        for &ei in &order {
            let e = &entities[ei];
            if e.start > cursor {
                emit_segment(&mut seq, cursor, e.start.min(chars.len()), &mut content);
            }
            if content < budget {
                seq.push(entity_token_id(e.entity_type), true, true, false, Alignment::Entity(ei));
                content += 1;
            }
            cursor = e.end;
        }
        if cursor < chars.len() {
            emit_segment(&mut seq, cursor, chars.len(), &mut content);
        }
        seq.push(SEP_ID, true, false, false, Alignment::None);
        while seq.len() < max_len {
            seq.push(PAD_ID, true, false, false, Alignment::None);
        }
        seq
    }

    /// Renders ids back to text: control tokens dropped, placeholders kept,
    /// continuation pieces glued to the previous piece.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or(Error::IdOutOfRange { id, size: self.len() })?;
            if id < 5 && id != UNK_ID {
                continue;
            }
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if id >= N_SPECIAL => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        Ok(out)
    }
}
