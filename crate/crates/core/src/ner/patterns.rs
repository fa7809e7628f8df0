use std::sync::LazyLock;

use regex::Regex;

use super::{EntitySpan, EntityType};

static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#\w+").unwrap());
static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
static PHONE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\+?\(?\d[\d\-. ()]{5,}\d").unwrap());
static DATE_NAMED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:\d{1,2}(?:st|nd|rd|th)?\s+)?(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?(?:\s+\d{1,2}(?:st|nd|rd|th)?\b)?(?:,?\s+\d{4}\b)?",
    )
    .unwrap()
});
static DATE_NUMERIC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:\d{4}[-/.]\d{1,2}[-/.]\d{1,2}|\d{1,2}/\d{1,2}/\d{2,4})\b").unwrap()
});
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:[.,]\d+)*").unwrap());

const URL_TRAILING: &[char] = &['.', ',', ';', ':', '!', '?', ')', '"', '\''];

/// Byte offset to char offset table (with a final entry for `text.len()`).
struct CharIndex {
    byte_to_char: Vec<usize>,
}

impl CharIndex {
    fn new(text: &str) -> Self {
        let mut byte_to_char = vec![0; text.len() + 1];
        let mut n = 0;
        for (b, c) in text.char_indices() {
            for slot in &mut byte_to_char[b..b + c.len_utf8()] {
                *slot = n;
            }
            n += 1;
        }
        byte_to_char[text.len()] = n;
        Self { byte_to_char }
    }

    fn span(&self, text: &str, from: usize, to: usize, t: EntityType) -> EntitySpan {
        EntitySpan::new(self.byte_to_char[from], self.byte_to_char[to], t, &text[from..to])
    }
}

pub(super) fn find_all(text: &str) -> Vec<EntitySpan> {
    let idx = CharIndex::new(text);
    let mut out = Vec::new();
    for m in HASHTAG.find_iter(text) {
        out.push(idx.span(text, m.start(), m.end(), EntityType::Hashtag));
    }
    for m in URL.find_iter(text) {
        let trimmed = m.as_str().trim_end_matches(URL_TRAILING);
        if trimmed.len() > 4 {
            out.push(idx.span(text, m.start(), m.start() + trimmed.len(), EntityType::Url));
        }
    }
    let mut dates = Vec::new();
    for m in DATE_NAMED.find_iter(text) {
        if m.as_str().chars().any(|c| c.is_ascii_digit()) {
            dates.push((m.start(), m.end()));
        }
    }
    for m in DATE_NUMERIC.find_iter(text) {
        dates.push((m.start(), m.end()));
    }
    for m in PHONE.find_iter(text) {
        let s = m.as_str().trim_end_matches([' ', '.', '-', '(']);
        let digits = s.chars().filter(char::is_ascii_digit).count();
        let end = m.start() + s.len();
        let is_date = dates.iter().any(|&(a, b)| a <= m.start() && end <= b);
        if digits >= 7 && !is_date {
            out.push(idx.span(text, m.start(), end, EntityType::PhoneNumber));
        }
    }
    for (a, b) in dates {
        out.push(idx.span(text, a, b, EntityType::Date));
    }
    for m in NUMBER.find_iter(text) {
        out.push(idx.span(text, m.start(), m.end(), EntityType::Number));
    }
    out
}
