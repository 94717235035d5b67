//! Ontology, semantic representations, delexicalization and corpora.

mod corpus;
mod delex;
mod ontology;
mod sr;
mod synth;

pub use corpus::{Corpus, Example, Split};
pub use delex::{delexicalize, lexicalize, lexicalize_lenient, Delexicalized, Lexicalized};
pub use ontology::{check_name, Ontology, SlotProperty};
pub use sr::{tokenize, DelexToken, SemanticRepresentation, SlotValue, SrEntry, Triple};
pub use synth::{DomainSpec, SynthSpec, Template};
