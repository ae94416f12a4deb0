use subtoken_attack::data::{fixture_vocab, generate_fixture, FixtureKind};
use subtoken_attack::eval::{run_campaign, CampaignOptions};
use subtoken_attack::exec::Parallelism;
use subtoken_attack::model::{Task, TinyTransformerSpec};
use subtoken_attack::search::{AttackConfig, AttackTarget, Tables};
use subtoken_attack::train::{train_reference, TrainOptions};
use subtoken_attack::visual::{build_length_table, build_visual_table, Extractor, Font};

#[test]
fn entity_campaign_runs_end_to_end() {
    let vocab = fixture_vocab();
    let train = generate_fixture(FixtureKind::TokenNer, 1200, 21).dataset;
    let eval = generate_fixture(FixtureKind::TokenNer, 60, 22).dataset;
    let tags = train.label_names().to_vec();
    let spec = TinyTransformerSpec::small(vocab.len(), tags.len(), Task::Token);
    let opts = TrainOptions {
        epochs: 10,
        tag_names: Some(tags),
        parallelism: Parallelism::Parallel,
        ..TrainOptions::default()
    };
    let (model, report) = train_reference(
        &train.examples(&vocab),
        &eval.examples(&vocab),
        spec,
        3,
        &opts,
    )
    .unwrap();
    assert_eq!(report.metric, "span_f1");
    assert!(report.eval_metric.unwrap() > 0.5, "{report:?}");

    let visual = build_visual_table(
        &vocab,
        &Font::bundled(),
        Extractor::Flat,
        Parallelism::Parallel,
    )
    .unwrap();
    let lengths = build_length_table(&vocab);
    let tables = Tables {
        visual: Some(&visual),
        lengths: Some(&lengths),
    };
    let campaign_opts = CampaignOptions {
        sample_size: 6,
        seed: 5,
        parallelism: Parallelism::Parallel,
        dataset_id: "ner-eval".into(),
        model_id: model.weights().hash(),
        timestamps: false,
    };
    let c = run_campaign(
        &eval,
        &model,
        &vocab,
        &AttackConfig::token(),
        tables,
        &campaign_opts,
    )
    .unwrap();
    let r = &c.report;
    assert_eq!(r.n_attempted, c.entries.len());
    assert!(r.n_attempted > 0);
    assert_eq!(
        r.failures.unoptimized + r.failures.tokenization_inconsistency,
        r.n_attempted - r.n_success
    );
    assert!(r.adv_f1.is_some());
    for e in &c.entries {
        assert!(matches!(e.result.target, AttackTarget::Words { .. }));
        let tags = e.final_tags.as_ref().unwrap();
        assert_eq!(tags.len(), e.gold_tags.as_ref().unwrap().len());
        assert!(e.result.k_used <= AttackConfig::token().n2);
    }
}
