mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semtree_core::semantics::{
    delexicalize, lexicalize, tokenize, Corpus, DelexToken, SlotValue, SynthSpec,
};
use semtree_core::{Error, Split};

#[test]
fn synthetic_corpus_round_trips_through_delexicalization() {
    let (corpus, ontology) = common::synthetic();
    for ex in corpus.examples() {
        let d = delexicalize(&ex.sr, &ontology, &ex.text);
        assert!(d.unmatched.is_empty(), "{}", ex.text);
        assert_eq!(lexicalize(&ex.sr, &d.text).unwrap(), ex.text);
    }
}

#[test]
fn synthetic_corpus_shape() {
    let (corpus, _) = common::synthetic();
    let distinct = corpus.distinct_srs();
    assert_eq!(distinct["restaurant"], 50);
    assert_eq!(distinct["hotel"], 50);
    assert_eq!(corpus.domain_split("hotel", Split::Train).len(), 30);
    assert_eq!(corpus.domain_split("hotel", Split::Dev).len(), 10);
    assert_eq!(corpus.domain_split("hotel", Split::Test).len(), 10);
    assert_eq!(corpus.multi_domain_count(), 0);
}

#[test]
fn synthetic_distinct_count_is_exact() {
    let mut spec = SynthSpec::default();
    spec.domain_mut("hotel").unwrap().distinct_srs = 47;
    let (corpus, _) = spec.generate(4).unwrap();
    assert_eq!(corpus.distinct_srs()["hotel"], 47);
}

#[test]
fn synthetic_generation_is_seeded() {
    let a = SynthSpec::default().generate(2).unwrap().0.to_jsonl();
    assert_eq!(a, SynthSpec::default().generate(2).unwrap().0.to_jsonl());
    assert_ne!(a, SynthSpec::default().generate(3).unwrap().0.to_jsonl());
}

#[test]
fn corpus_jsonl_round_trips_and_reports_bad_records() {
    let (corpus, ontology) = common::synthetic();
    let text = corpus.to_jsonl();
    assert_eq!(Corpus::from_reader(text.as_bytes(), &ontology).unwrap(), corpus);

    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"sr\": [], \"text\": 3}";
    let err = Corpus::from_reader(lines.join("\n").as_bytes(), &ontology).unwrap_err();
    assert!(matches!(&err, Error::Parse { location, .. } if location.starts_with("record 3")), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A sentence that mentions every value once comes back unchanged.
    #[test]
    fn delex_then_lex_is_identity(seed in any::<u64>()) {
        let ontology = common::synthetic().1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sr = common::random_sr(&mut rng, &ontology);
        let mut values: Vec<&str> = Vec::new();
        for (i, _) in sr.licensed_tokens(&ontology) {
            if let SlotValue::Text(v) = &sr.entries()[i].value {
                if !values.iter().any(|w| w.contains(v.as_str()) || v.contains(w)) {
                    values.push(v);
                }
            }
        }
        prop_assume!(values.len() == sr.licensed_tokens(&ontology).len());
        let text = format!("we have {} today", values.join(" , "));
        let d = delexicalize(&sr, &ontology, &text);
        prop_assert!(d.unmatched.is_empty());
        prop_assert_eq!(DelexToken::find_all(&d.text).len(), values.len());
        prop_assert_eq!(lexicalize(&sr, &d.text).unwrap(), text);
    }

    #[test]
    fn tokenize_splits_on_whitespace(words in prop::collection::vec("[a-z0-9]{1,8}", 0..12)) {
        let text = words.join("  ");
        prop_assert_eq!(tokenize(&text), words);
    }
}
