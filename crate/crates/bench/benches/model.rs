use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use semtree_bench::Fixture;
use semtree_core::decoder::Dropout;
use semtree_core::generation::{beam_decode, greedy_decode, DEFAULT_BEAM};
use semtree_core::math::Tape;
use semtree_core::training::{sentence_loss, Objective};
use semtree_core::Mode;

fn encode(c: &mut Criterion) {
    let f = Fixture::synthetic();
    let (sr, _) = f.largest();
    let mut group = c.benchmark_group("encode");
    for mode in [Mode::TreeAtt, Mode::Flat] {
        let model = f.model(mode);
        group.bench_function(mode.as_str(), |b| {
            b.iter(|| {
                let mut tape = Tape::with_params(&model.params);
                black_box(model.encode(&mut tape, sr).expect("encodes").f_sr);
            })
        });
    }
    group.finish();
}

fn loss_and_gradient(c: &mut Criterion) {
    let f = Fixture::synthetic();
    let (sr, text) = f.largest();
    let mut group = c.benchmark_group("sentence_loss");
    for (mode, objective) in [(Mode::TreeAtt, Objective::Att), (Mode::Tree, Objective::Nll), (Mode::Flat, Objective::Nll)] {
        let model = f.model(mode);
        let target = model.target(sr, text);
        let mut grads = model.params.zeros_like();
        group.bench_function(mode.as_str(), |b| {
            b.iter(|| {
                let mut tape = Tape::with_params(&model.params);
                let loss = sentence_loss(&mut tape, &model, sr, &target, objective, &mut Dropout::off()).expect("builds");
                tape.backward_into(loss, &mut grads, 1.0).expect("backward");
            })
        });
    }
    group.finish();
}

fn decode(c: &mut Criterion) {
    let f = Fixture::synthetic();
    let (sr, _) = f.largest();
    let model = f.model(Mode::TreeAtt);
    let mut group = c.benchmark_group("decode");
    group.sample_size(20);
    group.bench_function("greedy", |b| b.iter(|| black_box(greedy_decode(&model, sr, 40).expect("decodes"))));
    group.bench_function("beam", |b| {
        b.iter(|| black_box(beam_decode(&model, sr, DEFAULT_BEAM, 40).expect("decodes")))
    });
    group.finish();
}

criterion_group!(benches, encode, loss_and_gradient, decode);
criterion_main!(benches);
