//! Sequential vs. data-parallel execution of the batch workloads.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use subtoken_attack::data::{fixture_vocab, generate_fixture, FixtureKind};
use subtoken_attack::exec::{self, Parallelism};
use subtoken_attack::model::{Target, Task, TinyTransformer, TinyTransformerSpec};
use subtoken_attack::selector::token_grad_norms;
use subtoken_attack::train::{train_reference, TrainOptions};
use subtoken_attack::visual::{build_visual_table, Extractor, Font};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn visual_tables(c: &mut Criterion) {
    let vocab = fixture_vocab();
    let font = Font::bundled();
    let mut group = c.benchmark_group("visual_table");
    group.sample_size(10);
    for extractor in [Extractor::Flat, Extractor::Cnn] {
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, extractor.id()), &mode, |b, &mode| {
                b.iter(|| build_visual_table(&vocab, &font, black_box(extractor), mode).unwrap())
            });
        }
    }
    group.finish();
}

fn gradient_batch(c: &mut Criterion) {
    let vocab = fixture_vocab();
    let data = generate_fixture(FixtureKind::Sentence4, 64, 3).dataset;
    let examples = data.examples(&vocab);
    let model = TinyTransformer::new(
        TinyTransformerSpec::small(vocab.len(), 4, Task::Sentence),
        1,
    )
    .unwrap();
    let mut group = c.benchmark_group("grad_norms_64_sentences");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                exec::map(mode, &examples, |ex| {
                    token_grad_norms(&model, &ex.ids, Target::Sentence, 0, 7.0).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let vocab = fixture_vocab();
    let data = generate_fixture(FixtureKind::Sentence4, 128, 4).dataset;
    let examples = data.examples(&vocab);
    let spec = TinyTransformerSpec::small(vocab.len(), 4, Task::Sentence);
    let mut group = c.benchmark_group("train_epoch_128");
    group.sample_size(10);
    for (name, mode) in MODES {
        let opts = TrainOptions {
            epochs: 1,
            parallelism: mode,
            ..TrainOptions::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| train_reference(&examples, &[], spec.clone(), 1, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, visual_tables, gradient_batch, training_epoch);
criterion_main!(benches);
