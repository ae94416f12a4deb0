mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use subtoken_attack::data::{generate_fixture, Dataset, FixtureKind};
use subtoken_attack::eval::{
    adversarial_examples, adversarial_retrain, read_entries, run_campaign, write_entries,
    write_report, CampaignOptions,
};
use subtoken_attack::exec::Parallelism;
use subtoken_attack::model::{Task, TinyTransformer, TinyTransformerSpec};
use subtoken_attack::search::{
    attack_sentence, AttackConfig, AttackTarget, NoiseKind, StraightThrough, Tables,
};
use subtoken_attack::train::{train_reference, Checkpoint, TrainOptions, VocabRef};
use subtoken_attack::visual::{
    build_length_table, build_visual_table, load_or_build_tables, Extractor, Font, LengthTable,
    VisualTable,
};
use subtoken_attack::vocab::{census_tsv, load_vocab, pre_tokenize, Convention, Vocabulary};

#[derive(Parser)]
#[command(
    name = "subtoken-attack",
    version,
    about = "Character-level attacks on subword-tokenized classifiers",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference transformer on a dataset.
    Train(TrainArgs),
    /// Render the vocabulary and write the visual and length tables.
    BuildTables(TablesArgs),
    /// Attack a single input.
    Attack(AttackArgs),
    /// Attack a seeded sample of a dataset and report metrics.
    Campaign(CampaignArgs),
    /// Count vocabulary pieces by length.
    Census(CensusArgs),
    /// Retrain with adversarial examples from a campaign.
    Retrain(RetrainArgs),
    /// Write a synthetic dataset and its vocabulary.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct VocabArgs {
    /// One token per line.
    #[arg(long)]
    vocab: PathBuf,
    /// Prefix convention: wordpiece, bytelevel or sentencepiece.
    #[arg(long, default_value = "wordpiece")]
    convention: Convention,
}

impl VocabArgs {
    fn load(&self) -> Result<Vocabulary> {
        load_vocab(&self.vocab, self.convention)
            .with_context(|| format!("loading vocabulary {}", self.vocab.display()))
    }
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the data-parallel executor.
    #[arg(long)]
    parallel: bool,
}

impl CommonArgs {
    fn parallelism(&self) -> Parallelism {
        Parallelism::from_flag(self.parallel)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// sentence or token.
    #[arg(long, default_value = "sentence")]
    task: Task,
    /// Held-out data for the reported metric.
    #[arg(long)]
    eval_dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct FeatureArgs {
    /// flat or cnn.
    #[arg(long, default_value = "flat")]
    extractor: Extractor,
    /// Font name or path to a TrueType file.
    #[arg(long)]
    font: Option<String>,
}

#[derive(Args)]
struct TablesArgs {
    #[command(flatten)]
    vocab: VocabArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    lambda_vis: Option<f64>,
    #[arg(long)]
    lambda_len: Option<f64>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    /// gumbel, uniform or none.
    #[arg(long)]
    noise: Option<NoiseKind>,
    /// Hard-sample gradient: full or argmax.
    #[arg(long)]
    straight_through: Option<StraightThrough>,
    /// Draw new noise at every optimizer step.
    #[arg(long)]
    resample_noise: bool,
    /// Token tasks: attack every word of each entity.
    #[arg(long)]
    entity_objective: bool,
    #[command(flatten)]
    features: FeatureArgs,
    /// Visual and length table cache; built in memory when absent.
    #[arg(long)]
    tables: Option<PathBuf>,
}

impl SearchArgs {
    fn config(&self, task: Task, seed: u64) -> AttackConfig {
        let mut c = AttackConfig::for_task(task);
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.kappa, self.kappa);
        set(&mut c.temperature, self.temp);
        set(&mut c.learning_rate, self.lr);
        set(&mut c.lambda_adv, self.lambda_adv);
        set(&mut c.lambda_vis, self.lambda_vis);
        set(&mut c.lambda_len, self.lambda_len);
        if let Some(v) = self.iters {
            c.max_iter = v;
        }
        if let Some(v) = self.n1 {
            c.n1 = v;
        }
        if let Some(v) = self.n2 {
            c.n2 = v;
        }
        if let Some(v) = self.noise {
            c.noise = v;
        }
        if let Some(v) = self.straight_through {
            c.straight_through = v;
        }
        c.resample_noise = self.resample_noise;
        c.entity_objective = self.entity_objective;
        c.seed = seed;
        c
    }

    fn tables(&self, vocab: &Vocabulary, par: Parallelism) -> Result<(VisualTable, LengthTable)> {
        let font = Font::resolve(self.features.font.as_deref())?;
        let extractor = self.features.extractor;
        Ok(match &self.tables {
            Some(path) => load_or_build_tables(vocab, &font, extractor, path, par)?,
            None => (
                build_visual_table(vocab, &font, extractor, par)?,
                build_length_table(vocab),
            ),
        })
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
}

struct Loaded {
    model: TinyTransformer,
    vocab: Vocabulary,
    labels: Vec<String>,
    model_id: String,
}

impl ModelArgs {
    fn load(&self) -> Result<Loaded> {
        let vocab = self.vocab.load()?;
        let ck = Checkpoint::load(&self.model)
            .with_context(|| format!("loading checkpoint {}", self.model.display()))?;
        if ck.vocab.hash != vocab.content_hash() {
            bail!(
                "{} was trained with a different vocabulary than {}",
                self.model.display(),
                self.vocab.vocab.display()
            );
        }
        let labels = ck.labels.clone();
        let model = ck.into_model()?;
        let model_id = model.weights().hash();
        Ok(Loaded {
            model,
            vocab,
            labels,
            model_id,
        })
    }
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Sentence to attack (sentence models).
    #[arg(long, conflicts_with = "dataset")]
    text: Option<String>,
    /// Gold label of --text; defaults to the model's prediction.
    #[arg(long, requires = "text")]
    label: Option<usize>,
    /// Dataset holding the input, used with --index.
    #[arg(long, requires = "index")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
    #[command(flatten)]
    search: SearchArgs,
    /// Write the result line here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock times in results.
    #[arg(long)]
    timestamps: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CampaignArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// Results, one JSON object per line.
    #[arg(long)]
    out: PathBuf,
    /// Report path; defaults to the results path with a .report.json suffix.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    sample_size: usize,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    timestamps: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CensusArgs {
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Args)]
struct RetrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// The original training data.
    #[arg(long)]
    dataset: PathBuf,
    /// Campaign results whose successes are added to the training data.
    #[arg(long)]
    attacks: PathBuf,
    #[arg(long)]
    eval_dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    /// Continue from the given model instead of a fresh initialization.
    #[arg(long)]
    fine_tune: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct FixtureArgs {
    /// sentence4 or token-ner.
    #[arg(long, default_value = "sentence4")]
    kind: FixtureKind,
    #[arg(long, default_value_t = 1000)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Train(a) => train(a),
        Command::BuildTables(a) => build_tables(a),
        Command::Attack(a) => attack(a),
        Command::Campaign(a) => campaign(a),
        Command::Census(a) => census(a),
        Command::Retrain(a) => retrain(a),
        Command::Fixture(a) => fixture(a),
    }
}

fn load_dataset(path: &Path, task: Task) -> Result<Dataset> {
    Dataset::load(path, task).with_context(|| format!("loading dataset {}", path.display()))
}

fn vocab_ref(args: &VocabArgs, vocab: &Vocabulary) -> VocabRef {
    VocabRef {
        path: Some(args.vocab.display().to_string()),
        hash: vocab.content_hash(),
        size: vocab.len(),
    }
}

fn train(a: TrainArgs) -> Result<String> {
    let vocab = a.vocab.load()?;
    let data = load_dataset(&a.dataset, a.task)?;
    let eval = match &a.eval_dataset {
        Some(p) => load_dataset(p, a.task)?.examples(&vocab),
        None => Vec::new(),
    };
    let labels = data.label_names().to_vec();
    let spec = TinyTransformerSpec::small(vocab.len(), labels.len(), a.task);
    let opts = TrainOptions {
        epochs: a.epochs,
        tag_names: (a.task == Task::Token).then(|| labels.clone()),
        parallelism: a.common.parallelism(),
        ..TrainOptions::default()
    };
    let (model, report) =
        train_reference(&data.examples(&vocab), &eval, spec, a.common.seed, &opts)?;
    Checkpoint::new(&model, vocab_ref(&a.vocab, &vocab), labels).save(&a.out)?;
    let eval_part = report
        .eval_metric
        .map(|m| format!(" eval {}={m:.4}", report.metric))
        .unwrap_or_default();
    Ok(format!(
        "trained {} on {} examples: train {}={:.4}{eval_part} -> {}",
        a.task,
        data.len(),
        report.metric,
        report.train_metric,
        a.out.display()
    ))
}

fn build_tables(a: TablesArgs) -> Result<String> {
    let vocab = a.vocab.load()?;
    let font = Font::resolve(a.features.font.as_deref())?;
    // a stale file at the target is rebuilt, a matching one reused
    let (visual, _) = load_or_build_tables(
        &vocab,
        &font,
        a.features.extractor,
        &a.out,
        a.common.parallelism(),
    )?;
    Ok(format!(
        "tables for {} tokens ({} features, {}, {}) -> {}",
        vocab.len(),
        visual.dim(),
        visual.extractor_id,
        visual.font_id,
        a.out.display()
    ))
}

fn attack(a: AttackArgs) -> Result<String> {
    let loaded = a.model.load()?;
    let (model, vocab) = (&loaded.model, &loaded.vocab);
    let task = subtoken_attack::model::DifferentiableClassifier::task(model);
    let (words, target) = match (&a.text, &a.dataset, a.index) {
        (Some(text), _, _) => {
            if task != Task::Sentence {
                bail!("--text needs a sentence model; use --dataset and --index for token models");
            }
            let words = pre_tokenize(text);
            let label = match a.label {
                Some(l) => l,
                None => subtoken_attack::search::predict_words(
                    model,
                    vocab,
                    &words,
                    &AttackTarget::Sentence { label: 0 },
                )?[0],
            };
            (words, AttackTarget::Sentence { label })
        }
        (None, Some(path), Some(index)) => {
            let data = load_dataset(path, task)?;
            input_at(&data, index)?
        }
        _ => bail!("give either --text or --dataset with --index"),
    };
    let par = a.common.parallelism();
    let (visual, lengths) = a.search.tables(vocab, par)?;
    let config = a.search.config(task, a.common.seed);
    let mut result = attack_sentence(
        model,
        vocab,
        &words,
        &target,
        &config,
        Tables {
            visual: Some(&visual),
            lengths: Some(&lengths),
        },
    )?;
    if a.timestamps {
        result.timestamp = Some(format!("{:?}", std::time::SystemTime::now()));
    }
    let line = result.to_json_line()?;
    match &a.out {
        Some(p) => std::fs::write(p, format!("{line}\n"))?,
        None => println!("{line}"),
    }
    Ok(format!(
        "{}: {} queries, k={} | {}",
        if result.success { "success" } else { "failure" },
        result.queries,
        result.k_used,
        result.adversarial_text
    ))
}

fn input_at(data: &Dataset, index: usize) -> Result<(Vec<String>, AttackTarget)> {
    match data {
        Dataset::Sentence(d) => {
            let r = d.records.get(index).with_context(|| {
                format!("index {index} out of range ({} records)", d.records.len())
            })?;
            Ok((
                pre_tokenize(&r.text),
                AttackTarget::Sentence { label: r.label },
            ))
        }
        Dataset::Token(d) => {
            let r = d.records.get(index).with_context(|| {
                format!("index {index} out of range ({} records)", d.records.len())
            })?;
            if r.spans.is_empty() {
                bail!("record {index} has no entities to attack");
            }
            let words: Vec<usize> = r.spans.iter().map(|s| s.start).collect();
            Ok((
                r.tokens.clone(),
                AttackTarget::Words {
                    labels: words.iter().map(|&w| r.tags[w]).collect(),
                    words,
                },
            ))
        }
    }
}

fn campaign(a: CampaignArgs) -> Result<String> {
    let loaded = a.model.load()?;
    let task = subtoken_attack::model::DifferentiableClassifier::task(&loaded.model);
    let data = load_dataset(&a.dataset, task)?;
    let par = a.common.parallelism();
    let (visual, lengths) = a.search.tables(&loaded.vocab, par)?;
    let config = a.search.config(task, a.common.seed);
    let opts = CampaignOptions {
        sample_size: a.sample_size,
        seed: a.common.seed,
        parallelism: par,
        dataset_id: a.dataset.display().to_string(),
        model_id: loaded.model_id.clone(),
        timestamps: a.timestamps,
    };
    let run = run_campaign(
        &data,
        &loaded.model,
        &loaded.vocab,
        &config,
        Tables {
            visual: Some(&visual),
            lengths: Some(&lengths),
        },
        &opts,
    )?;
    write_entries(&a.out, &run.entries)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_report(&report_path, &run.report)?;
    let r = &run.report;
    let quality = match (r.adv_accuracy, r.adv_f1) {
        (Some(acc), _) => format!("adv_accuracy {acc:.3}"),
        (_, Some(f1)) => format!("adv_f1 {f1:.3}"),
        _ => String::new(),
    };
    Ok(format!(
        "attacked {} of {} eligible: success {:.3}, {quality}, queries {:.2}, edit distance {:.2} -> {}",
        r.n_attempted,
        r.meta.n_eligible,
        r.success_rate,
        r.mean_queries,
        r.mean_edit_distance,
        a.out.display()
    ))
}

fn census(a: CensusArgs) -> Result<String> {
    let vocab = a.vocab.load()?;
    let rows = vocab.subword_length_census();
    print!("{}", census_tsv(&rows));
    Ok(format!(
        "{} tokens, {} length rows",
        vocab.len(),
        rows.len()
    ))
}

fn retrain(a: RetrainArgs) -> Result<String> {
    let loaded = a.model.load()?;
    let spec = loaded.model.spec().clone();
    let data = load_dataset(&a.dataset, spec.task)?;
    let eval = match &a.eval_dataset {
        Some(p) => load_dataset(p, spec.task)?.examples(&loaded.vocab),
        None => Vec::new(),
    };
    let entries = read_entries(&a.attacks)?;
    let adversarial = adversarial_examples(&entries, &loaded.vocab);
    let opts = TrainOptions {
        epochs: a.epochs,
        tag_names: (spec.task == Task::Token).then(|| loaded.labels.clone()),
        parallelism: a.common.parallelism(),
        ..TrainOptions::default()
    };
    let base = a.fine_tune.then_some(&loaded.model);
    let (model, report) = adversarial_retrain(
        spec,
        base,
        &data.examples(&loaded.vocab),
        &adversarial,
        &eval,
        a.common.seed,
        &opts,
    )?;
    Checkpoint::new(
        &model,
        vocab_ref(&a.model.vocab, &loaded.vocab),
        loaded.labels,
    )
    .save(&a.out)?;
    Ok(format!(
        "retrained on {} original + {} adversarial examples: train {}={:.4} -> {}",
        data.len(),
        adversarial.len(),
        report.metric,
        report.train_metric,
        a.out.display()
    ))
}

fn fixture(a: FixtureArgs) -> Result<String> {
    let fx = generate_fixture(a.kind, a.size, a.seed);
    fx.write(&a.out)?;
    Ok(format!(
        "{} records, {} vocabulary tokens -> {}",
        fx.dataset.len(),
        fx.vocab_tokens.len(),
        a.out.display()
    ))
}
