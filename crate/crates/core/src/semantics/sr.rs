use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Ontology, SlotProperty};

/// Value carried by one SR entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    Text(String),
    /// The slot is asked for (`?` in files).
    Request,
    /// The act carries no slot at all (`null` in files).
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SrEntry {
    pub domain: String,
    pub act: String,
    /// `None` exactly when the value is [`SlotValue::None`].
    pub slot: Option<String>,
    pub value: SlotValue,
}

impl SrEntry {
    pub fn new(domain: &str, act: &str, slot: &str, value: SlotValue) -> Self {
        SrEntry {
            domain: domain.into(),
            act: act.into(),
            slot: Some(slot.into()),
            value,
        }
    }

    pub fn text(domain: &str, act: &str, slot: &str, value: &str) -> Self {
        Self::new(domain, act, slot, SlotValue::Text(value.into()))
    }

    pub fn request(domain: &str, act: &str, slot: &str) -> Self {
        Self::new(domain, act, slot, SlotValue::Request)
    }

    pub fn bare(domain: &str, act: &str) -> Self {
        SrEntry {
            domain: domain.into(),
            act: act.into(),
            slot: None,
            value: SlotValue::None,
        }
    }

    pub fn triple(&self) -> Triple {
        Triple {
            domain: self.domain.clone(),
            act: self.act.clone(),
            slot: self.slot.clone(),
        }
    }
}

/// `(domain, act, slot)`; slot is `None` for bare acts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub domain: String,
    pub act: String,
    pub slot: Option<String>,
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.slot {
            Some(s) => write!(f, "({}, {}, {})", self.domain, self.act, s),
            None => write!(f, "({}, {})", self.domain, self.act),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    domain: String,
    act: String,
    #[serde(default)]
    slot: Option<String>,
    #[serde(default)]
    value: Option<String>,
}

impl Serialize for SrEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawEntry {
            domain: self.domain.clone(),
            act: self.act.clone(),
            slot: self.slot.clone(),
            value: match &self.value {
                SlotValue::Text(t) => Some(t.clone()),
                SlotValue::Request => Some("?".into()),
                SlotValue::None => None,
            },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SrEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawEntry::deserialize(deserializer)?;
        let value = match raw.value {
            None => SlotValue::None,
            Some(v) if v == "?" => SlotValue::Request,
            Some(v) => SlotValue::Text(v),
        };
        let slot = match value {
            SlotValue::None => None,
            _ => Some(raw.slot.ok_or_else(|| serde::de::Error::custom("entry with a value needs a slot"))?),
        };
        Ok(SrEntry {
            domain: raw.domain,
            act: raw.act,
            slot,
            value,
        })
    }
}

/// The meaning of one system turn: an ordered list of entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticRepresentation {
    entries: Vec<SrEntry>,
}

impl SemanticRepresentation {
    pub fn new(entries: Vec<SrEntry>) -> Self {
        SemanticRepresentation { entries }
    }

    pub fn entries(&self) -> &[SrEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.domain.as_str()).collect()
    }

    pub fn is_multi_domain(&self) -> bool {
        self.domains().len() > 1
    }

    /// Distinct triples, sorted.
    pub fn triples(&self) -> BTreeSet<Triple> {
        self.entries.iter().map(SrEntry::triple).collect()
    }

    /// Triples with multiplicity, ignoring values; used to count distinct SRs.
    pub fn structure_key(&self) -> Vec<Triple> {
        let mut key: Vec<Triple> = self.entries.iter().map(SrEntry::triple).collect();
        key.sort();
        key
    }

    /// Checks every entry against the ontology. The message names the
    /// offending triple.
    pub fn validate(&self, ontology: &Ontology) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !ontology.has_act(&e.domain, &e.act) {
                return Err(format!("{} is not in the ontology", e.triple()));
            }
            match (&e.slot, &e.value) {
                (None, SlotValue::None) => {}
                (Some(slot), value) => {
                    let prop = ontology
                        .property(&e.domain, &e.act, slot)
                        .ok_or_else(|| format!("{} is not in the ontology", e.triple()))?;
                    match (prop, value) {
                        (SlotProperty::Requestable, SlotValue::Request) => {}
                        (SlotProperty::Requestable, _) => {
                            return Err(format!("requestable {} must carry `?`", e.triple()))
                        }
                        (_, SlotValue::Text(_)) => {}
                        (p, _) => return Err(format!("{p} {} must carry a value", e.triple())),
                    }
                }
                (None, _) => return Err(format!("{} has a value but no slot", e.triple())),
            }
            if !seen.insert((e.triple(), e.value.clone())) {
                return Err(format!("{} repeats with the same value", e.triple()));
            }
        }
        Ok(())
    }

    /// Delexicalized tokens licensed by the SR: one per informable entry with
    /// a value, in entry order, occurrence-indexed when a triple repeats.
    /// Pairs each token with the index of its entry.
    pub fn licensed_tokens(&self, ontology: &Ontology) -> Vec<(usize, DelexToken)> {
        let informable: Vec<usize> = (0..self.entries.len())
            .filter(|&i| {
                let e = &self.entries[i];
                matches!(e.value, SlotValue::Text(_))
                    && e.slot.as_deref().and_then(|s| ontology.property(&e.domain, &e.act, s))
                        == Some(SlotProperty::Informable)
            })
            .collect();
        let mut totals: BTreeMap<Triple, u32> = BTreeMap::new();
        for &i in &informable {
            *totals.entry(self.entries[i].triple()).or_default() += 1;
        }
        let mut seen: BTreeMap<Triple, u32> = BTreeMap::new();
        informable
            .into_iter()
            .map(|i| {
                let e = &self.entries[i];
                let t = e.triple();
                let k = seen.entry(t.clone()).or_default();
                *k += 1;
                let occurrence = (totals[&t] > 1).then_some(*k);
                (
                    i,
                    DelexToken {
                        domain: e.domain.clone(),
                        act: e.act.clone(),
                        slot: e.slot.clone().unwrap_or_default(),
                        occurrence,
                    },
                )
            })
            .collect()
    }

    /// Values of the informable entries of `triple`, in entry order.
    pub fn values_of(&self, domain: &str, act: &str, slot: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.domain == domain && e.act == act && e.slot.as_deref() == Some(slot))
            .filter_map(|e| match &e.value {
                SlotValue::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Placeholder for a value in delexicalized text: `@domain-act-slot`, with
/// `-k` appended when the triple occurs more than once in the SR.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DelexToken {
    pub domain: String,
    pub act: String,
    pub slot: String,
    pub occurrence: Option<u32>,
}

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"@([^\s@\-,.?!]+)-([^\s@\-,.?!]+)-([^\s@\-,.?!]+)(?:-([0-9]+))?").expect("valid regex")
});

impl DelexToken {
    pub fn new(domain: &str, act: &str, slot: &str) -> Self {
        DelexToken {
            domain: domain.into(),
            act: act.into(),
            slot: slot.into(),
            occurrence: None,
        }
    }

    /// Parses a whole token such as `@hotel-select-type-2`.
    pub fn parse(token: &str) -> Option<Self> {
        let caps = TOKEN_RE.captures(token)?;
        if caps.get(0)?.as_str().len() != token.len() {
            return None;
        }
        Some(DelexToken {
            domain: caps[1].to_string(),
            act: caps[2].to_string(),
            slot: caps[3].to_string(),
            occurrence: caps.get(4).and_then(|m| m.as_str().parse().ok()),
        })
    }

    /// Every token occurring in `text`, with byte spans.
    pub fn find_all(text: &str) -> Vec<(std::ops::Range<usize>, DelexToken)> {
        TOKEN_RE
            .captures_iter(text)
            .map(|caps| {
                let m = caps.get(0).expect("whole match");
                (
                    m.range(),
                    DelexToken {
                        domain: caps[1].to_string(),
                        act: caps[2].to_string(),
                        slot: caps[3].to_string(),
                        occurrence: caps.get(4).and_then(|m| m.as_str().parse().ok()),
                    },
                )
            })
            .collect()
    }

    pub fn triple(&self) -> (String, String, String) {
        (self.domain.clone(), self.act.clone(), self.slot.clone())
    }
}

impl fmt::Display for DelexToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}-{}-{}", self.domain, self.act, self.slot)?;
        if let Some(k) = self.occurrence {
            write!(f, "-{k}")?;
        }
        Ok(())
    }
}

fn is_punct(c: char) -> bool {
    matches!(c, ',' | '.' | '?' | '!')
}

/// Lowercases and splits on whitespace, peeling `, . ? !` off the ends of
/// each chunk into tokens of their own. Inner punctuation ("5.30") stays.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        let lead: Vec<char> = chunk.chars().take_while(|c| is_punct(*c)).collect();
        let rest = &chunk[lead.len()..];
        let core = rest.trim_end_matches(is_punct);
        let trail = &rest[core.len()..];
        out.extend(lead.iter().map(|c| c.to_string()));
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(trail.chars().map(|c| c.to_string()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_separates_edge_punctuation() {
        assert_eq!(
            tokenize("There are five colleges in the West, do you mind?"),
            vec!["there", "are", "five", "colleges", "in", "the", "west", ",", "do", "you", "mind", "?"]
        );
        assert_eq!(tokenize("leaves at 5.30."), vec!["leaves", "at", "5.30", "."]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
    }

    #[test]
    fn token_parse_and_display() {
        let t = DelexToken::parse("@hotel-select-type-2").unwrap();
        assert_eq!((t.domain.as_str(), t.slot.as_str(), t.occurrence), ("hotel", "type", Some(2)));
        assert_eq!(t.to_string(), "@hotel-select-type-2");
        assert_eq!(DelexToken::parse("@attraction-inform-area").unwrap().occurrence, None);
        assert!(DelexToken::parse("@").is_none());
        assert!(DelexToken::parse("@a-b").is_none());
    }

    #[test]
    fn find_all_stops_at_punctuation() {
        let found = DelexToken::find_all("in the @attraction-inform-area, ok");
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].1.to_string(), "@attraction-inform-area");
    }

    #[test]
    fn entry_json_forms() {
        let sr: SemanticRepresentation = serde_json::from_str(
            r#"[{"domain":"hotel","act":"inform","slot":"area","value":"west"},
                {"domain":"hotel","act":"request","slot":"price","value":"?"},
                {"domain":"hotel","act":"reqmore","slot":null,"value":null}]"#,
        )
        .unwrap();
        assert_eq!(sr.entries()[0].value, SlotValue::Text("west".into()));
        assert_eq!(sr.entries()[1].value, SlotValue::Request);
        assert_eq!(sr.entries()[2], SrEntry::bare("hotel", "reqmore"));
        let back: SemanticRepresentation = serde_json::from_str(&serde_json::to_string(&sr).unwrap()).unwrap();
        assert_eq!(back, sr);
    }

    #[test]
    fn licensed_tokens_index_repeats_only() {
        let o = Ontology::from_json_str(
            r#"{"hotel": {"inform": {"options": "informable"}, "select": {"type": "informable"},
                           "request": {"area": "requestable"}}}"#,
        )
        .unwrap();
        let sr = SemanticRepresentation::new(vec![
            SrEntry::text("hotel", "inform", "options", "two"),
            SrEntry::text("hotel", "select", "type", "guesthouse"),
            SrEntry::text("hotel", "select", "type", "hotel"),
            SrEntry::request("hotel", "request", "area"),
        ]);
        let toks: Vec<String> = sr.licensed_tokens(&o).into_iter().map(|(_, t)| t.to_string()).collect();
        assert_eq!(
            toks,
            vec!["@hotel-inform-options", "@hotel-select-type-1", "@hotel-select-type-2"]
        );
    }

    #[test]
    fn validation_names_the_triple() {
        let o = Ontology::from_json_str(r#"{"hotel": {"inform": {"area": "informable"}}}"#).unwrap();
        let bad = SemanticRepresentation::new(vec![SrEntry::text("hotel", "inform", "stars", "4")]);
        let msg = bad.validate(&o).unwrap_err();
        assert!(msg.contains("(hotel, inform, stars)"), "{msg}");
        let req = SemanticRepresentation::new(vec![SrEntry::request("hotel", "inform", "area")]);
        assert!(req.validate(&o).is_err());
    }
}
