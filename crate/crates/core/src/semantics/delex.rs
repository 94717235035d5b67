use std::collections::BTreeMap;

use super::{DelexToken, Ontology, SemanticRepresentation, SlotValue, Triple};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delexicalized {
    pub text: String,
    /// Informable entries whose value was not found in the text.
    pub unmatched: Vec<Triple>,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

/// Finds `needle` in `hay` (both already ASCII-lowercased) starting at a word
/// boundary, skipping byte ranges already taken.
fn find_free(hay: &[u8], needle: &[u8], taken: &[(usize, usize)]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&start| {
        let end = start + needle.len();
        &hay[start..end] == needle
            && (start == 0 || !is_word_byte(hay[start - 1]) || !is_word_byte(needle[0]))
            && (end == hay.len() || !is_word_byte(hay[end]) || !is_word_byte(needle[needle.len() - 1]))
            && taken.iter().all(|&(s, e)| end <= s || start >= e)
    })
}

/// Replaces each informable value of `sr` found in `text` by its token.
/// Matching ignores ASCII case, tries longer values first and respects word
/// boundaries; every entry replaces at most one span.
pub fn delexicalize(sr: &SemanticRepresentation, ontology: &Ontology, text: &str) -> Delexicalized {
    let mut licensed = sr.licensed_tokens(ontology);
    // Stable sort keeps SR order among equal-length values.
    licensed.sort_by_key(|(i, _)| std::cmp::Reverse(value_len(sr, *i)));
    let hay = text.to_ascii_lowercase().into_bytes();
    let mut spans: Vec<(usize, usize, String)> = Vec::new();
    let mut unmatched = Vec::new();
    for (i, token) in licensed {
        let entry = &sr.entries()[i];
        let SlotValue::Text(value) = &entry.value else { continue };
        let needle = value.trim().to_ascii_lowercase();
        let taken: Vec<(usize, usize)> = spans.iter().map(|(s, e, _)| (*s, *e)).collect();
        match find_free(&hay, needle.as_bytes(), &taken) {
            Some(start) => spans.push((start, start + needle.len(), token.to_string())),
            None => unmatched.push((i, entry.triple())),
        }
    }
    spans.sort();
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (start, end, token) in spans {
        out.push_str(&text[cursor..start]);
        out.push_str(&token);
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    unmatched.sort_by_key(|(i, _)| *i);
    Delexicalized {
        text: out,
        unmatched: unmatched.into_iter().map(|(_, t)| t).collect(),
    }
}

fn value_len(sr: &SemanticRepresentation, i: usize) -> usize {
    match &sr.entries()[i].value {
        SlotValue::Text(v) => v.trim().len(),
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicalized {
    pub text: String,
    /// Tokens with no value in the SR, left verbatim.
    pub unresolved: Vec<DelexToken>,
}

/// Replaces tokens by SR values. An indexed token takes the k-th value of its
/// triple; unindexed tokens of a repeated triple consume values in order.
/// Tokens the SR cannot fill are kept and reported.
pub fn lexicalize_lenient(sr: &SemanticRepresentation, text: &str) -> Lexicalized {
    let mut values: BTreeMap<(String, String, String), Vec<&str>> = BTreeMap::new();
    let mut cursors: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    let mut out = String::with_capacity(text.len());
    let mut unresolved = Vec::new();
    let mut last = 0;
    for (range, token) in DelexToken::find_all(text) {
        let key = token.triple();
        let vals = values
            .entry(key.clone())
            .or_insert_with(|| sr.values_of(&token.domain, &token.act, &token.slot));
        let value = match token.occurrence {
            Some(k) => (k as usize).checked_sub(1).and_then(|k| vals.get(k)),
            None => {
                let c = cursors.entry(key).or_default();
                let v = vals.get(*c).or(vals.last());
                *c += 1;
                v
            }
        };
        out.push_str(&text[last..range.start]);
        match value {
            Some(v) => out.push_str(v),
            None => {
                out.push_str(&text[range.clone()]);
                unresolved.push(token);
            }
        }
        last = range.end;
    }
    out.push_str(&text[last..]);
    Lexicalized { text: out, unresolved }
}

/// Strict form of [`lexicalize_lenient`]: any unfillable token is an error.
pub fn lexicalize(sr: &SemanticRepresentation, text: &str) -> Result<String> {
    let lex = lexicalize_lenient(sr, text);
    match lex.unresolved.first() {
        Some(t) => Err(Error::Lexicalization(t.to_string())),
        None => Ok(lex.text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::SrEntry;

    fn attraction() -> (Ontology, SemanticRepresentation) {
        let o = Ontology::from_json_str(
            r#"{"attraction": {"inform": {"options": "informable", "type": "informable", "area": "informable"},
                                "request": {"price": "requestable"}}}"#,
        )
        .unwrap();
        let sr = SemanticRepresentation::new(vec![
            SrEntry::text("attraction", "inform", "options", "five"),
            SrEntry::text("attraction", "inform", "type", "colleges"),
            SrEntry::text("attraction", "inform", "area", "west"),
            SrEntry::request("attraction", "request", "price"),
        ]);
        (o, sr)
    }

    const SURFACE: &str = "there are five colleges in the west, do you have a price range in mind?";
    const DELEX: &str = "there are @attraction-inform-options @attraction-inform-type in the \
                         @attraction-inform-area, do you have a price range in mind?";

    #[test]
    fn caption_example_delexicalizes() {
        let (o, sr) = attraction();
        let d = delexicalize(&sr, &o, SURFACE);
        assert_eq!(d.text, DELEX);
        assert!(d.unmatched.is_empty());
    }

    #[test]
    fn caption_example_lexicalizes_back() {
        let (_, sr) = attraction();
        assert_eq!(lexicalize(&sr, DELEX).unwrap(), SURFACE);
    }

    #[test]
    fn no_informables_leaves_text() {
        let (o, _) = attraction();
        let sr = SemanticRepresentation::new(vec![SrEntry::request("attraction", "request", "price")]);
        let d = delexicalize(&sr, &o, "what price range?");
        assert_eq!(d.text, "what price range?");
        assert!(d.unmatched.is_empty());
    }

    #[test]
    fn missing_value_is_reported() {
        let o = Ontology::from_json_str(r#"{"restaurant": {"inform": {"name": "informable"}}}"#).unwrap();
        let sr = SemanticRepresentation::new(vec![SrEntry::text("restaurant", "inform", "name", "Golden House")]);
        let d = delexicalize(&sr, &o, "it is a nice place.");
        assert_eq!(d.text, "it is a nice place.");
        assert_eq!(d.unmatched.len(), 1);
        assert_eq!(d.unmatched[0].slot.as_deref(), Some("name"));
    }

    #[test]
    fn word_boundaries_and_longest_first() {
        let o = Ontology::from_json_str(
            r#"{"hotel": {"inform": {"area": "informable", "name": "informable"}}}"#,
        )
        .unwrap();
        let sr = SemanticRepresentation::new(vec![
            SrEntry::text("hotel", "inform", "area", "west"),
            SrEntry::text("hotel", "inform", "name", "West Lodge"),
        ]);
        let d = delexicalize(&sr, &o, "westside has west lodge in the west.");
        assert_eq!(d.text, "westside has @hotel-inform-name in the @hotel-inform-area.");
    }

    #[test]
    fn repeated_triples_use_occurrence_indices() {
        let o = Ontology::from_json_str(r#"{"hotel": {"select": {"type": "informable"}}}"#).unwrap();
        let sr = SemanticRepresentation::new(vec![
            SrEntry::text("hotel", "select", "type", "guesthouse"),
            SrEntry::text("hotel", "select", "type", "hotel"),
        ]);
        let text = "would you prefer a guesthouse or hotel?";
        let d = delexicalize(&sr, &o, text);
        assert_eq!(d.text, "would you prefer a @hotel-select-type-1 or @hotel-select-type-2?");
        assert_eq!(lexicalize(&sr, &d.text).unwrap(), text);
        // Unindexed tokens are consumed in order.
        assert_eq!(
            lexicalize(&sr, "@hotel-select-type or @hotel-select-type").unwrap(),
            "guesthouse or hotel"
        );
    }

    #[test]
    fn unknown_token_is_an_error() {
        let (_, sr) = attraction();
        let err = lexicalize(&sr, "try @hotel-inform-area").unwrap_err();
        assert!(err.to_string().contains("@hotel-inform-area"), "{err}");
        let lenient = lexicalize_lenient(&sr, "try @hotel-inform-area");
        assert_eq!(lenient.text, "try @hotel-inform-area");
        assert_eq!(lenient.unresolved.len(), 1);
    }

    #[test]
    fn matching_ignores_case() {
        let o = Ontology::from_json_str(r#"{"restaurant": {"inform": {"name": "informable"}}}"#).unwrap();
        let sr = SemanticRepresentation::new(vec![SrEntry::text("restaurant", "inform", "name", "Golden House")]);
        let d = delexicalize(&sr, &o, "golden house is open.");
        assert_eq!(d.text, "@restaurant-inform-name is open.");
        assert_eq!(lexicalize(&sr, &d.text).unwrap(), "Golden House is open.");
    }
}
