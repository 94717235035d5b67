//! Templated synthetic corpora: a stand-in for annotated dialogue data that
//! is small, fully delexicalizable and reproducible from a seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    delexicalize, Corpus, DelexToken, Example, Ontology, SemanticRepresentation, SlotProperty, Split,
    SrEntry,
};
use crate::{Error, Result};

const DEFAULT_SPEC: &str = include_str!("../../data/synth_default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Word substituted for `{noun}` in templates.
    pub noun: String,
    pub distinct_srs: usize,
    #[serde(default = "one")]
    pub examples_per_sr: usize,
    pub acts: BTreeMap<String, BTreeMap<String, SlotProperty>>,
    #[serde(default)]
    pub values: BTreeMap<String, Vec<String>>,
    #[serde(default = "two")]
    pub max_acts: usize,
    #[serde(default = "three")]
    pub max_slots_per_act: usize,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}

/// Sentence pattern for one act. Slot phrases appear in the listed order;
/// `{value}` and `{noun}` are substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub act: String,
    #[serde(default)]
    pub open: String,
    #[serde(default)]
    pub slots: Vec<(String, String)>,
    #[serde(default = "space")]
    pub join: String,
    #[serde(default)]
    pub close: String,
}

fn space() -> String {
    " ".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub domains: Vec<DomainSpec>,
    pub templates: Vec<Template>,
    /// Extra training examples pairing SRs of two different domains.
    #[serde(default)]
    pub multi_domain_examples: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SPEC).expect("bundled spec parses")
    }
}

impl SynthSpec {
    pub fn from_json_str(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json_str(&text)
    }

    pub fn domain_mut(&mut self, name: &str) -> Option<&mut DomainSpec> {
        self.domains.iter_mut().find(|d| d.name == name)
    }

    pub fn ontology(&self) -> Result<Ontology> {
        let schema = self
            .domains
            .iter()
            .map(|d| (d.name.clone(), d.acts.clone()))
            .collect();
        Ontology::from_schema(schema)
    }

    fn template(&self, act: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.act == act)
    }

    fn check(&self) -> Result<()> {
        if self.domains.len() < 2 {
            return Err(Error::Spec("at least two domains are required".into()));
        }
        let names: BTreeSet<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        if names.len() != self.domains.len() {
            return Err(Error::Spec("duplicate domain name".into()));
        }
        for t in &self.templates {
            for (slot, phrase) in &t.slots {
                let declared = self
                    .domains
                    .iter()
                    .any(|d| d.acts.get(&t.act).is_some_and(|s| s.contains_key(slot)));
                if !declared {
                    return Err(Error::Spec(format!(
                        "template for act `{}` references undeclared slot `{slot}`",
                        t.act
                    )));
                }
                let has_value = phrase.contains("{value}");
                for d in &self.domains {
                    if let Some(p) = d.acts.get(&t.act).and_then(|s| s.get(slot)) {
                        if has_value != (*p != SlotProperty::Requestable) {
                            return Err(Error::Spec(format!(
                                "phrase for {}.{}.{slot} must {}contain {{value}}",
                                d.name,
                                t.act,
                                if has_value { "not " } else { "" }
                            )));
                        }
                    }
                }
            }
        }
        for d in &self.domains {
            if d.distinct_srs == 0 || d.examples_per_sr == 0 || d.max_acts == 0 || d.max_slots_per_act == 0 {
                return Err(Error::Spec(format!("domain `{}` has a zero count", d.name)));
            }
            for (act, slots) in &d.acts {
                let t = self
                    .template(act)
                    .ok_or_else(|| Error::Spec(format!("no template for act `{act}` of `{}`", d.name)))?;
                for (slot, prop) in slots {
                    if !t.slots.iter().any(|(s, _)| s == slot) {
                        return Err(Error::Spec(format!("template for `{act}` has no phrase for `{slot}`")));
                    }
                    if *prop != SlotProperty::Requestable && d.values.get(slot).is_none_or(|v| v.is_empty()) {
                        return Err(Error::Spec(format!("no values for slot `{slot}` of `{}`", d.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Generates the corpus. Same spec and seed give the same corpus.
    pub fn generate(&self, seed: u64) -> Result<(Corpus, Ontology)> {
        self.check()?;
        let ontology = self.ontology()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut examples = Vec::new();
        let mut per_domain: Vec<Vec<Vec<(String, Vec<String>)>>> = Vec::new();
        for d in &self.domains {
            let structures = self.structures(d, &mut rng)?;
            let mut generated = Vec::new();
            for structure in &structures {
                for _ in 0..d.examples_per_sr {
                    generated.push(self.realize(d, structure, &ontology, &mut rng)?);
                }
            }
            generated.shuffle(&mut rng);
            let n = generated.len();
            let n_train = (n * 3 + 2) / 5;
            let n_dev = (n + 2) / 5;
            for (i, (sr, text)) in generated.into_iter().enumerate() {
                let split = if i < n_train {
                    Split::Train
                } else if i < n_train + n_dev {
                    Split::Dev
                } else {
                    Split::Test
                };
                examples.push(Example { sr, text, split });
            }
            per_domain.push(structures);
        }
        for _ in 0..self.multi_domain_examples {
            let picks: Vec<usize> = rand::seq::index::sample(&mut rng, self.domains.len(), 2).into_vec();
            let mut entries = Vec::new();
            let mut texts = Vec::new();
            for &di in &picks {
                let d = &self.domains[di];
                let structure = per_domain[di].choose(&mut rng).expect("non-empty");
                let (sr, text) = self.realize(d, structure, &ontology, &mut rng)?;
                entries.extend(sr.entries().iter().cloned());
                texts.push(text);
            }
            examples.push(Example {
                sr: SemanticRepresentation::new(entries),
                text: texts.join(" "),
                split: Split::Train,
            });
        }
        Ok((Corpus::new(examples, &ontology)?, ontology))
    }

    /// Distinct act/slot structures for one domain, acts in canonical order,
    /// slots in template order.
    fn structures(&self, d: &DomainSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<(String, Vec<String>)>>> {
        let acts: Vec<&String> = d.acts.keys().collect();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut misses = 0usize;
        while out.len() < d.distinct_srs {
            if misses > 20_000 {
                return Err(Error::Spec(format!(
                    "domain `{}` admits only {} distinct SRs, {} requested",
                    d.name,
                    out.len(),
                    d.distinct_srs
                )));
            }
            let n_acts = rng.random_range(1..=d.max_acts.min(acts.len()));
            let mut chosen: Vec<&String> = acts.choose_multiple(rng, n_acts).copied().collect();
            chosen.sort();
            let mut structure = Vec::new();
            for act in chosen {
                let template = self.template(act).expect("checked");
                let declared = &d.acts[act];
                let slots: Vec<String> = if declared.is_empty() {
                    Vec::new()
                } else {
                    let k = rng.random_range(1..=d.max_slots_per_act.min(declared.len()));
                    let picked: BTreeSet<&String> = declared.keys().collect::<Vec<_>>().choose_multiple(rng, k).copied().collect();
                    template
                        .slots
                        .iter()
                        .filter(|(s, _)| picked.contains(s))
                        .map(|(s, _)| s.clone())
                        .collect()
                };
                structure.push((act.clone(), slots));
            }
            if seen.insert(structure.clone()) {
                out.push(structure);
                misses = 0;
            } else {
                misses += 1;
            }
        }
        Ok(out)
    }

    fn realize(
        &self,
        d: &DomainSpec,
        structure: &[(String, Vec<String>)],
        ontology: &Ontology,
        rng: &mut ChaCha8Rng,
    ) -> Result<(SemanticRepresentation, String)> {
        let mut entries = Vec::new();
        let mut sentences = Vec::new();
        let mut expected = Vec::new();
        let mut used: BTreeSet<&str> = BTreeSet::new();
        for (act, slots) in structure {
            let t = self.template(act).expect("checked");
            let mut phrases = Vec::new();
            let mut delex_phrases = Vec::new();
            if slots.is_empty() {
                entries.push(SrEntry::bare(&d.name, act));
            }
            for slot in slots {
                let phrase = &t.slots.iter().find(|(s, _)| s == slot).expect("checked").1;
                match d.acts[act][slot] {
                    SlotProperty::Requestable => {
                        entries.push(SrEntry::request(&d.name, act, slot));
                        phrases.push(phrase.clone());
                        delex_phrases.push(phrase.clone());
                    }
                    _ => {
                        let pool: Vec<&String> =
                            d.values[slot].iter().filter(|v| !used.contains(v.as_str())).collect();
                        let value = pool.choose(rng).ok_or_else(|| {
                            Error::Spec(format!("value pool for `{slot}` of `{}` is exhausted", d.name))
                        })?;
                        used.insert(value.as_str());
                        entries.push(SrEntry::text(&d.name, act, slot, value));
                        phrases.push(phrase.replace("{value}", value));
                        delex_phrases.push(phrase.replace("{value}", &DelexToken::new(&d.name, act, slot).to_string()));
                    }
                }
            }
            sentences.push(assemble(t, &phrases, &d.noun));
            expected.push(assemble(t, &delex_phrases, &d.noun));
        }
        let sr = SemanticRepresentation::new(entries);
        let text = sentences.join(" ");
        let delex = delexicalize(&sr, ontology, &text);
        if delex.text != expected.join(" ") || !delex.unmatched.is_empty() {
            return Err(Error::Spec(format!(
                "generated sentence does not delexicalize cleanly: `{text}` became `{}`",
                delex.text
            )));
        }
        Ok((sr, text))
    }
}

fn assemble(t: &Template, phrases: &[String], noun: &str) -> String {
    let mut s = t.open.clone();
    let mut body = phrases.join(&t.join);
    // A phrase ending in a comma reads badly right before the full stop.
    if t.close.starts_with(['.', '?', '!']) {
        if let Some(trimmed) = body.strip_suffix(',') {
            body = trimmed.trim_end().to_string();
        }
    }
    for part in [body.as_str(), t.close.as_str()] {
        if part.is_empty() {
            continue;
        }
        if !s.is_empty() && !part.starts_with([',', '.', '?', '!']) {
            s.push(' ');
        }
        s.push_str(part);
    }
    s.replace("{noun}", noun)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthSpec {
        let mut spec = SynthSpec::default();
        for d in &mut spec.domains {
            d.distinct_srs = n;
        }
        spec
    }

    #[test]
    fn no_comma_before_closing_punctuation() {
        let (corpus, _) = SynthSpec::default().generate(1).unwrap();
        for ex in corpus.examples() {
            assert!(!ex.text.contains(",.") && !ex.text.contains(", ."), "{}", ex.text);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = small(25);
        assert_eq!(spec.generate(7).unwrap(), spec.generate(7).unwrap());
        assert_ne!(spec.generate(7).unwrap().0, spec.generate(8).unwrap().0);
    }

    #[test]
    fn distinct_counts_match() {
        let spec = small(25);
        let (corpus, _) = spec.generate(7).unwrap();
        for (_, n) in corpus.distinct_srs() {
            assert_eq!(n, 25);
        }
    }

    #[test]
    fn every_example_delexicalizes_fully() {
        let (corpus, ontology) = small(40).generate(3).unwrap();
        for ex in corpus.examples() {
            let d = delexicalize(&ex.sr, &ontology, &ex.text);
            assert!(d.unmatched.is_empty(), "{}", ex.text);
            assert!(!d.text.contains("{"), "{}", d.text);
        }
    }

    #[test]
    fn split_is_three_one_one() {
        let (corpus, _) = small(50).generate(1).unwrap();
        let restaurant: Vec<_> = corpus.examples().iter().filter(|e| e.sr.domains().contains("restaurant")).collect();
        let count = |s| restaurant.iter().filter(|e| e.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Dev), count(Split::Test)), (30, 10, 10));
    }

    #[test]
    fn undeclared_template_slot_is_rejected() {
        let mut spec = small(5);
        spec.templates[0].slots.push(("parking".into(), "with parking".into()));
        let err = spec.generate(1).unwrap_err();
        assert!(err.to_string().contains("parking"), "{err}");
    }

    #[test]
    fn impossible_count_is_rejected() {
        let mut spec = small(5);
        spec.domains[0].distinct_srs = 1_000_000;
        assert!(spec.generate(1).is_err());
    }

    #[test]
    fn multi_domain_examples_are_flagged() {
        let mut spec = small(10);
        spec.multi_domain_examples = 4;
        let (corpus, _) = spec.generate(2).unwrap();
        assert_eq!(corpus.multi_domain_count(), 4);
    }
}
