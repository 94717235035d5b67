//! Fixtures shared by the benchmarks.

use semtree_core::semantics::SynthSpec;
use semtree_core::{Corpus, Dims, Mode, Model, Ontology, SemanticRepresentation, Split, Vocab};

pub struct Fixture {
    pub corpus: Corpus,
    pub ontology: Ontology,
}

impl Fixture {
    pub fn synthetic() -> Self {
        let (corpus, ontology) = SynthSpec::default().generate(1).expect("built-in spec generates");
        Fixture { corpus, ontology }
    }

    /// A freshly initialised model at the default size.
    pub fn model(&self, mode: Mode) -> Model {
        let train = self.corpus.split(Split::Train);
        let vocab = Vocab::build(mode, &self.ontology, train.iter().copied());
        Model::new(mode, Dims::default(), self.ontology.clone(), vocab, 1)
    }

    /// The training example whose SR licenses the most slot tokens.
    pub fn largest(&self) -> (&SemanticRepresentation, &str) {
        let ex = self
            .corpus
            .examples()
            .iter()
            .max_by_key(|e| e.sr.licensed_tokens(&self.ontology).len())
            .expect("non-empty corpus");
        (&ex.sr, &ex.text)
    }
}
