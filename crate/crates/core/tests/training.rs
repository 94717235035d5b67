mod common;

use std::collections::BTreeMap;

use semtree_core::decoder::Dropout;
use semtree_core::math::Tape;
use semtree_core::semantics::SynthSpec;
use semtree_core::training::{
    adapt, fit, run_matrix, select, sentence_loss, train, SweepSpec, SweepTable, TrainConfig,
};
use semtree_core::{Corpus, Error, Mode, Model, Ontology, Split};

fn small_corpus() -> (Corpus, Ontology) {
    let mut spec = SynthSpec::default();
    for d in ["restaurant", "hotel"] {
        spec.domain_mut(d).unwrap().distinct_srs = 10;
    }
    spec.generate(3).unwrap()
}

fn quick(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        hidden: 8,
        embed: 8,
        max_epochs: 3,
        batch_size: 4,
        max_len: 20,
        ..Default::default()
    }
}

fn mean_loss(model: &Model, corpus: &Corpus, cfg: &TrainConfig) -> f64 {
    let ex = corpus.split(Split::Train);
    let total: f64 = ex
        .iter()
        .map(|e| {
            let t = model.target(&e.sr, &e.text);
            let mut tape = Tape::with_params(&model.params);
            let l = sentence_loss(&mut tape, model, &e.sr, &t, cfg.objective(), &mut Dropout::off()).unwrap();
            tape.scalar(l)
        })
        .sum();
    total / ex.len() as f64
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (corpus, ontology) = small_corpus();
    for mode in Mode::ALL {
        let cfg = quick(mode);
        let a = train(&corpus, &ontology, &cfg, None).unwrap();
        let b = train(&corpus, &ontology, &cfg, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        let c = train(&corpus, &ontology, &TrainConfig { seed: 2, ..cfg }, None).unwrap();
        assert_ne!(a.log, c.log);
    }
}

#[test]
fn one_epoch_lowers_the_loss() {
    let (corpus, ontology) = small_corpus();
    for mode in Mode::ALL {
        let cfg = TrainConfig { max_epochs: 1, dropout: 0.0, ..quick(mode) };
        let train_ex = select(&corpus, Split::Train, None);
        let vocab = semtree_core::Vocab::build(mode, &ontology, train_ex.iter().copied());
        let untrained = Model::new(mode, cfg.dims(), ontology.clone(), vocab, cfg.seed);
        let before = mean_loss(&untrained, &corpus, &cfg);
        let out = fit(untrained, &train_ex, &select(&corpus, Split::Dev, None), &cfg, cfg.lr_scratch, 5).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!(mean_loss(&out.model, &corpus, &cfg) < before, "{mode}");
    }
}

#[test]
fn log_evaluates_on_schedule_and_final_epoch() {
    let (corpus, ontology) = small_corpus();
    let cfg = TrainConfig { max_epochs: 5, eval_every: 2, ..quick(Mode::TreeAtt) };
    let out = train(&corpus, &ontology, &cfg, None).unwrap();
    let evaluated: Vec<usize> = out.log.iter().filter(|l| l.dev_ser.is_some()).map(|l| l.epoch).collect();
    assert_eq!(evaluated, vec![2, 4, 5]);
    assert!(evaluated.contains(&out.best_epoch));
}

#[test]
fn patience_stops_early() {
    let (corpus, ontology) = small_corpus();
    let cfg = TrainConfig { max_epochs: 50, patience: 1, lr_scratch: 1e-9, ..quick(Mode::Flat) };
    let out = train(&corpus, &ontology, &cfg, None).unwrap();
    assert!(out.log.len() < 50);
}

#[test]
fn adapt_extends_vocab_and_checks_compatibility() {
    let (corpus, ontology) = small_corpus();
    let cfg = quick(Mode::TreeAtt);
    let source = train(&corpus, &ontology, &cfg, Some("restaurant")).unwrap().model;
    let target = select(&corpus, Split::Train, Some("hotel"));
    let dev = select(&corpus, Split::Dev, Some("hotel"));
    let out = adapt(&source, &target, &dev, 0.5, &cfg, 1).unwrap();
    assert_eq!(out.selected.len(), target.len().div_ceil(2));
    assert!(out.added_words > 0);
    assert_eq!(out.outcome.model.vocab.len(), source.vocab.len() + out.added_words);

    assert!(matches!(adapt(&source, &target, &dev, 0.0, &cfg, 1), Err(Error::Config(_))));

    let mut spec = SynthSpec::default();
    spec.domains.retain(|d| d.name == "restaurant");
    spec.domains.push({
        let mut d = SynthSpec::default().domains[1].clone();
        d.name = "guesthouse".into();
        d
    });
    let (foreign, _) = spec.generate(1).unwrap();
    let foreign_train = select(&foreign, Split::Train, Some("guesthouse"));
    assert!(matches!(adapt(&source, &foreign_train, &dev, 0.5, &cfg, 1), Err(Error::Compatibility(_))));
}

#[test]
fn sweep_counts_aggregates_and_reproduces() {
    let (corpus, ontology) = small_corpus();
    let cfg = TrainConfig { max_epochs: 2, ..quick(Mode::TreeAtt) };
    let mut sources = BTreeMap::new();
    for mode in [Mode::TreeAtt, Mode::Flat] {
        let c = TrainConfig { mode, ..cfg.clone() };
        sources.insert(mode, train(&corpus, &ontology, &c, Some("restaurant")).unwrap().model);
    }
    let spec = SweepSpec {
        source: "restaurant".into(),
        target: "hotel".into(),
        fractions: vec![0.0125, 0.5, 1.0],
        seeds: vec![1, 2],
        modes: vec![Mode::TreeAtt, Mode::Flat],
        beam_metrics: false,
    };
    let a = run_matrix(&sources, &corpus, &cfg, &spec, |_| {}).unwrap();
    assert_eq!(a.seed_rows().count(), 12);
    assert_eq!(a.aggregates().count(), 6);
    for agg in a.aggregates() {
        let seeds: Vec<f64> = a
            .seed_rows()
            .filter(|r| r.mode == agg.mode && r.fraction == agg.fraction)
            .map(|r| r.ser)
            .collect();
        let mean = seeds.iter().sum::<f64>() / seeds.len() as f64;
        assert!((agg.ser - mean).abs() < 1e-12);
    }
    let csv = a.to_csv().unwrap();
    assert_eq!(SweepTable::from_csv(&csv).unwrap(), a);
    let b = run_matrix(&sources, &corpus, &cfg, &spec, |_| {}).unwrap();
    assert_eq!(b.to_csv().unwrap(), csv);
}

#[test]
fn config_rejects_multi_layer_and_bad_objective() {
    let (corpus, ontology) = small_corpus();
    let cfg = TrainConfig { layers: 2, ..quick(Mode::Tree) };
    assert!(matches!(train(&corpus, &ontology, &cfg, None), Err(Error::Config(_))));
}
