use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotProperty {
    Requestable,
    Informable,
    Binary,
}

impl SlotProperty {
    pub const ALL: [SlotProperty; 3] = [
        SlotProperty::Requestable,
        SlotProperty::Informable,
        SlotProperty::Binary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotProperty::Requestable => "requestable",
            SlotProperty::Informable => "informable",
            SlotProperty::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for SlotProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

type Schema = BTreeMap<String, BTreeMap<String, BTreeMap<String, SlotProperty>>>;

/// Domains, their dialogue acts, the slots under each act and each slot's
/// property. Global label sets (domains, acts, slots) are kept sorted; their
/// positions are the canonical label order used everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Schema", into = "Schema")]
pub struct Ontology {
    schema: Schema,
    domains: Vec<String>,
    acts: Vec<String>,
    slots: Vec<String>,
}

/// Names end up inside `@domain-act-slot` tokens, so they may not contain
/// the separator, the token sigil, whitespace or sentence punctuation.
pub fn check_name(name: &str) -> std::result::Result<(), String> {
    if name.is_empty() {
        return Err("empty name".into());
    }
    if let Some(c) = name
        .chars()
        .find(|c| c.is_whitespace() || c.is_uppercase() || matches!(c, '-' | '@' | ',' | '.' | '?' | '!'))
    {
        return Err(format!("name `{name}` contains forbidden character {c:?}"));
    }
    Ok(())
}

impl Ontology {
    pub fn from_schema(schema: Schema) -> Result<Self> {
        for (d, acts) in &schema {
            check_name(d).map_err(|m| parse_err(d, m))?;
            for (a, slots) in acts {
                check_name(a).map_err(|m| parse_err(format!("{d}.{a}"), m))?;
                for s in slots.keys() {
                    check_name(s).map_err(|m| parse_err(format!("{d}.{a}.{s}"), m))?;
                }
            }
            if acts.is_empty() {
                return Err(parse_err(d, "domain declares no dialogue acts"));
            }
        }
        if schema.is_empty() {
            return Err(parse_err("<root>", "ontology declares no domains"));
        }
        let domains = schema.keys().cloned().collect();
        let acts: BTreeSet<String> = schema.values().flat_map(|a| a.keys().cloned()).collect();
        let slots: BTreeSet<String> = schema
            .values()
            .flat_map(|a| a.values())
            .flat_map(|s| s.keys().cloned())
            .collect();
        Ok(Ontology {
            schema,
            domains,
            acts: acts.into_iter().collect(),
            slots: slots.into_iter().collect(),
        })
    }

    /// Parses `{domain: {act: {slot: "requestable"|"informable"|"binary"}}}`.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let raw: OrderedMap<OrderedMap<OrderedMap<String>>> =
            serde_json::from_str(json).map_err(|e| Error::Parse {
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
        let mut schema = Schema::new();
        for (d, acts) in raw.0 {
            if schema.contains_key(&d) {
                return Err(parse_err(&d, "duplicate domain"));
            }
            let mut act_map = BTreeMap::new();
            for (a, slots) in acts.0 {
                if act_map.contains_key(&a) {
                    return Err(parse_err(format!("{d}.{a}"), "duplicate act"));
                }
                let mut slot_map = BTreeMap::new();
                for (s, prop) in slots.0 {
                    let path = format!("{d}.{a}.{s}");
                    let prop = SlotProperty::parse(&prop)
                        .ok_or_else(|| parse_err(&path, format!("unknown slot property `{prop}`")))?;
                    if slot_map.insert(s, prop).is_some() {
                        return Err(parse_err(&path, "duplicate triple"));
                    }
                }
                act_map.insert(a, slot_map);
            }
            schema.insert(d, act_map);
        }
        Self::from_schema(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.schema).expect("schema serializes")
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn acts(&self) -> &[String] {
        &self.acts
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn domain_index(&self, domain: &str) -> Option<usize> {
        self.domains.binary_search_by(|d| d.as_str().cmp(domain)).ok()
    }

    pub fn act_index(&self, act: &str) -> Option<usize> {
        self.acts.binary_search_by(|a| a.as_str().cmp(act)).ok()
    }

    pub fn slot_index(&self, slot: &str) -> Option<usize> {
        self.slots.binary_search_by(|s| s.as_str().cmp(slot)).ok()
    }

    pub fn acts_of(&self, domain: &str) -> Vec<&str> {
        self.schema
            .get(domain)
            .map(|a| a.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn slots_of(&self, domain: &str, act: &str) -> Vec<&str> {
        self.schema
            .get(domain)
            .and_then(|a| a.get(act))
            .map(|s| s.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn has_act(&self, domain: &str, act: &str) -> bool {
        self.schema.get(domain).is_some_and(|a| a.contains_key(act))
    }

    pub fn property(&self, domain: &str, act: &str, slot: &str) -> Option<SlotProperty> {
        self.schema.get(domain)?.get(act)?.get(slot).copied()
    }

    /// Every `(domain, act, slot)` triple in canonical order.
    pub fn triples(&self) -> impl Iterator<Item = (&str, &str, &str, SlotProperty)> {
        self.schema.iter().flat_map(|(d, acts)| {
            acts.iter().flat_map(move |(a, slots)| {
                slots.iter().map(move |(s, p)| (d.as_str(), a.as_str(), s.as_str(), *p))
            })
        })
    }

    /// Number of declared triples, the length of the flat indicator encoding.
    pub fn num_triples(&self) -> usize {
        self.triples().count()
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(&self.schema).expect("schema serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

impl TryFrom<Schema> for Ontology {
    type Error = Error;

    fn try_from(schema: Schema) -> Result<Self> {
        Ontology::from_schema(schema)
    }
}

impl From<Ontology> for Schema {
    fn from(o: Ontology) -> Schema {
        o.schema
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// A JSON object read as an ordered list of entries, so duplicate keys
/// survive parsing and can be reported.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct OrderedMap<V>(pub Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for OrderedMap<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct MapVisitor<V>(std::marker::PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for MapVisitor<V> {
            type Value = OrderedMap<V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    entries.push((k, v));
                }
                Ok(OrderedMap(entries))
            }
        }

        deserializer.deserialize_map(MapVisitor(std::marker::PhantomData))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_ontology() {
        let o = Ontology::from_json_str(r#"{"taxi": {"inform": {"car": "informable"}}}"#).unwrap();
        assert_eq!((o.domains().len(), o.acts().len(), o.slots().len()), (1, 1, 1));
    }

    #[test]
    fn property_lookup() {
        let o = Ontology::from_json_str(
            r#"{"restaurant": {"inform": {"area": "informable"}, "request": {"area": "requestable"}}}"#,
        )
        .unwrap();
        assert_eq!(o.property("restaurant", "inform", "area"), Some(SlotProperty::Informable));
        assert_eq!(o.property("restaurant", "request", "area"), Some(SlotProperty::Requestable));
        assert_eq!(o.property("restaurant", "book", "area"), None);
    }

    #[test]
    fn taxi_like_domain_counts() {
        let o = Ontology::from_json_str(
            r#"{"taxi": {
                "inform": {"car": "informable", "phone": "informable"},
                "request": {"departure": "requestable", "destination": "requestable",
                            "leave": "requestable", "arrive": "requestable"}}}"#,
        )
        .unwrap();
        assert_eq!(o.acts_of("taxi").len(), 2);
        assert_eq!(o.slots().len(), 6);
    }

    #[test]
    fn unknown_property_names_the_field() {
        let err = Ontology::from_json_str(r#"{"hotel": {"inform": {"area": "optional"}}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("hotel.inform.area") && msg.contains("optional"), "{msg}");
    }

    #[test]
    fn duplicate_triple_is_rejected() {
        let err = Ontology::from_json_str(
            r#"{"hotel": {"inform": {"area": "informable", "area": "informable"}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate triple"), "{err}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = Ontology::from_json_str("{\n\"hotel\": [}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn bad_names_are_rejected() {
        assert!(Ontology::from_json_str(r#"{"Hotel": {"inform": {}}}"#).is_err());
        assert!(Ontology::from_json_str(r#"{"hotel": {"in form": {}}}"#).is_err());
        assert!(Ontology::from_json_str(r#"{"hotel": {"inform": {"price-range": "informable"}}}"#).is_err());
    }

    #[test]
    fn fingerprint_ignores_key_order() {
        let a = Ontology::from_json_str(r#"{"a": {"x": {}}, "b": {"y": {}}}"#).unwrap();
        let b = Ontology::from_json_str(r#"{"b": {"y": {}}, "a": {"x": {}}}"#).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = Ontology::from_json_str(r#"{"a": {"x": {}}}"#).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
