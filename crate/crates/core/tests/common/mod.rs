#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use semtree_core::math::ParamSet;
use semtree_core::semantics::{SlotProperty, SrEntry, SynthSpec};
use semtree_core::{Corpus, Dims, Example, Mode, Model, Ontology, SemanticRepresentation, Vocab};

pub fn synthetic() -> (Corpus, Ontology) {
    SynthSpec::default().generate(1).expect("built-in spec generates")
}

const VALUES: [&str; 8] = ["north", "cheap", "two", "the ivy", "golden house", "4", "thai", "west"];

/// A random valid SR: one or two domains, one or two acts each, zero to
/// three slots per act, and now and then a repeated informable slot.
pub fn random_sr<R: Rng>(rng: &mut R, ontology: &Ontology) -> SemanticRepresentation {
    let mut domains: Vec<&String> = ontology.domains().iter().collect();
    domains.shuffle(rng);
    let n_domains = if domains.len() > 1 && rng.random_bool(0.2) { 2 } else { 1 };
    let mut entries = Vec::new();
    for d in &domains[..n_domains] {
        let mut acts = ontology.acts_of(d);
        acts.shuffle(rng);
        let n_acts = rng.random_range(1..=acts.len().min(2));
        for a in &acts[..n_acts] {
            let mut slots = ontology.slots_of(d, a);
            slots.shuffle(rng);
            let n_slots = rng.random_range(0..=slots.len().min(3));
            if n_slots == 0 {
                entries.push(SrEntry::bare(d, a));
            }
            for s in &slots[..n_slots] {
                match ontology.property(d, a, s).expect("slot from the ontology") {
                    SlotProperty::Requestable => entries.push(SrEntry::request(d, a, s)),
                    _ => {
                        let mut vals: Vec<&str> = VALUES.choose_multiple(rng, 2).copied().collect();
                        if !rng.random_bool(0.1) {
                            vals.truncate(1);
                        }
                        for v in vals {
                            entries.push(SrEntry::text(d, a, s, v));
                        }
                    }
                }
            }
        }
    }
    entries.shuffle(rng);
    let sr = SemanticRepresentation::new(entries);
    sr.validate(ontology).expect("generator emits valid SRs");
    sr
}

/// Overwrites every parameter with U(-scale, scale).
pub fn randomize<R: Rng>(params: &mut ParamSet, rng: &mut R, scale: f64) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in params.get_mut(id).data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn small_model<'a>(
    mode: Mode,
    ontology: &Ontology,
    examples: impl IntoIterator<Item = &'a Example>,
    hidden: usize,
    seed: u64,
) -> Model {
    let vocab = Vocab::build(mode, ontology, examples);
    Model::new(
        mode,
        Dims {
            embed: hidden,
            hidden,
        },
        ontology.clone(),
        vocab,
        seed,
    )
}
