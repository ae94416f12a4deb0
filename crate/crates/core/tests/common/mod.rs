//! Shared trained fixture model for the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use subtoken_attack::data::{fixture_vocab, generate_fixture, Dataset, FixtureKind};
use subtoken_attack::exec::Parallelism;
use subtoken_attack::model::{Task, TinyTransformer, TinyTransformerSpec};
use subtoken_attack::search::Tables;
use subtoken_attack::train::{train_reference, TrainOptions, TrainReport};
use subtoken_attack::visual::{
    build_length_table, build_visual_table, Extractor, Font, LengthTable, VisualTable,
};
use subtoken_attack::vocab::Vocabulary;

pub const TRAIN_SIZE: usize = 1000;
pub const EVAL_SIZE: usize = 200;
pub const MODEL_SEED: u64 = 1;

pub struct Trained {
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub eval: Dataset,
    pub spec: TinyTransformerSpec,
    pub opts: TrainOptions,
    pub model: TinyTransformer,
    pub report: TrainReport,
    pub visual: VisualTable,
    pub lengths: LengthTable,
}

impl Trained {
    pub fn tables(&self) -> Tables<'_> {
        Tables {
            visual: Some(&self.visual),
            lengths: Some(&self.lengths),
        }
    }
}

/// SENTENCE4 fixture model trained once per test binary.
pub fn sentence4() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let vocab = fixture_vocab();
        let train = generate_fixture(FixtureKind::Sentence4, TRAIN_SIZE, 1).dataset;
        let eval = generate_fixture(FixtureKind::Sentence4, EVAL_SIZE, 2).dataset;
        let spec = TinyTransformerSpec::small(vocab.len(), 4, Task::Sentence);
        let opts = TrainOptions {
            epochs: 6,
            parallelism: Parallelism::Parallel,
            ..TrainOptions::default()
        };
        let (model, report) = train_reference(
            &train.examples(&vocab),
            &eval.examples(&vocab),
            spec.clone(),
            MODEL_SEED,
            &opts,
        )
        .expect("fixture training");
        let visual = build_visual_table(
            &vocab,
            &Font::bundled(),
            Extractor::Flat,
            Parallelism::Parallel,
        )
        .expect("visual table");
        let lengths = build_length_table(&vocab);
        Trained {
            vocab,
            train,
            eval,
            spec,
            opts,
            model,
            report,
            visual,
            lengths,
        }
    })
}
