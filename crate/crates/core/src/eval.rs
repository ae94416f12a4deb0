//! Metrics and campaign orchestration.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{decode_bio, Dataset, Example, Label, TokenRecord};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::model::{DifferentiableClassifier, Logits, Task, TinyTransformer, TinyTransformerSpec};
use crate::search::{
    attack_sentence, predict_words, AttackConfig, AttackResult, AttackTarget, FailureKind, Tables,
    WordChange,
};
use crate::seed;
use crate::train::{continue_training, span_f1, train_reference, TrainOptions, TrainReport};
use crate::vocab::{pre_tokenize, TokenId, Vocabulary};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sum of the word-level edit distances of every modified word.
pub fn sentence_edit_distance(result: &AttackResult) -> usize {
    result
        .words
        .iter()
        .map(|w| edit_distance(&w.original, &w.replacement))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordConsistency {
    pub index: usize,
    pub original: String,
    pub replacement: String,
    pub attack_ids: Vec<TokenId>,
    pub retokenized_ids: Vec<TokenId>,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub words: Vec<WordConsistency>,
    pub inconsistent_words: usize,
    /// Some word re-tokenizes differently and the attack still succeeded.
    pub inconsistent_but_adversarial: bool,
    /// Some word re-tokenizes differently and the attack failed.
    pub inconsistent_and_failed: bool,
}

/// Compares each modified word's attack-time subtokens with the standard
/// tokenization of its surface form.
pub fn retokenization_check(result: &AttackResult, vocab: &Vocabulary) -> ConsistencyRecord {
    let words: Vec<WordConsistency> = result
        .words
        .iter()
        .map(|w| {
            let retokenized_ids = vocab.tokenize(&w.replacement);
            WordConsistency {
                index: w.index,
                original: w.original.clone(),
                replacement: w.replacement.clone(),
                consistent: retokenized_ids == w.attack_ids,
                attack_ids: w.attack_ids.clone(),
                retokenized_ids,
            }
        })
        .collect();
    let inconsistent_words = words.iter().filter(|w| !w.consistent).count();
    ConsistencyRecord {
        inconsistent_but_adversarial: inconsistent_words > 0 && result.success,
        inconsistent_and_failed: inconsistent_words > 0 && !result.success,
        inconsistent_words,
        words,
    }
}

/// One input prepared for attack.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignItem {
    pub id: String,
    pub words: Vec<String>,
    pub target: AttackTarget,
    /// Gold tag of every word (token tasks).
    pub gold_tags: Option<Vec<usize>>,
}

/// An attack result plus what the campaign needs to score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignEntry {
    #[serde(flatten)]
    pub result: AttackResult,
    pub gold_tags: Option<Vec<usize>>,
    /// Predicted tag of every word after the last attempt (token tasks).
    pub final_tags: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    pub dataset_id: String,
    pub model_id: String,
    pub task: Task,
    pub label_names: Vec<String>,
    pub config: AttackConfig,
    pub seed: u64,
    pub sample_size: usize,
    /// Correctly classified inputs available for sampling.
    pub n_eligible: usize,
    /// Sampled inputs with no attackable word.
    pub n_infeasible: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureBreakdown {
    pub unoptimized: usize,
    pub tokenization_inconsistency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    #[serde(flatten)]
    pub meta: CampaignMeta,
    pub n_attempted: usize,
    pub n_success: usize,
    pub success_rate: f64,
    /// Sentence tasks: fraction still correct after the last attempt.
    pub adv_accuracy: Option<f64>,
    /// Token tasks: micro-averaged exact-match span F1 after substitution.
    pub adv_f1: Option<f64>,
    pub mean_queries: f64,
    /// Over successful attacks; per sentence for sentence tasks, per gold
    /// entity for token tasks.
    pub mean_edit_distance: f64,
    pub modified_words: usize,
    pub inconsistent_words: usize,
    pub retokenization_inconsistency_rate: f64,
    pub inconsistent_but_adversarial: usize,
    pub failures: FailureBreakdown,
    /// Failures whose final prediction is nonetheless wrong.
    pub misclassified_failures: usize,
    /// Successes without a recorded flipped prediction on re-tokenized input.
    pub unverified_successes: usize,
}

impl CampaignReport {
    /// Pure fold over the entries.
    pub fn from_entries(meta: CampaignMeta, entries: &[CampaignEntry]) -> Self {
        let n = entries.len();
        let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
        let mut n_success = 0;
        let mut queries = 0;
        let mut edit_sum = 0usize;
        let mut edit_units = 0usize;
        let mut modified = 0;
        let mut inconsistent = 0;
        let mut inconsistent_adv = 0;
        let mut failures = FailureBreakdown::default();
        let mut misclassified_failures = 0;
        let mut unverified = 0;
        let mut still_correct = 0;
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for e in entries {
            let r = &e.result;
            let labels = target_labels(&r.target);
            let flipped = r.final_prediction.as_ref().is_some_and(|p| {
                p.len() == labels.len() && p.iter().zip(&labels).any(|(a, b)| a != b)
            });
            queries += r.queries;
            for w in &r.words {
                modified += 1;
                if w.attack_ids != w.retokenized_ids {
                    inconsistent += 1;
                }
            }
            let any_inconsistent = r.words.iter().any(|w| w.attack_ids != w.retokenized_ids);
            if r.success {
                n_success += 1;
                if !flipped {
                    unverified += 1;
                }
                if any_inconsistent {
                    inconsistent_adv += 1;
                }
                edit_sum += sentence_edit_distance(r);
                edit_units += match meta.task {
                    Task::Sentence => 1,
                    Task::Token => e
                        .gold_tags
                        .as_ref()
                        .map_or(1, |t| gold_spans(t, &meta.label_names).max(1)),
                };
            } else {
                match r.failure {
                    Some(FailureKind::TokenizationInconsistency) => {
                        failures.tokenization_inconsistency += 1
                    }
                    _ => failures.unoptimized += 1,
                }
                if flipped {
                    misclassified_failures += 1;
                }
            }
            if !flipped {
                still_correct += 1;
            }
            if let (Some(g), Some(p)) = (&e.gold_tags, &e.final_tags) {
                gold.push(g.clone());
                pred.push(p.clone());
            }
        }
        let success_rate = ratio(n_success as f64, n);
        let (adv_accuracy, adv_f1) = match meta.task {
            Task::Sentence => (Some(ratio(still_correct as f64, n)), None),
            Task::Token => (None, Some(span_f1(&gold, &pred, &meta.label_names))),
        };
        if let Some(acc) = adv_accuracy {
            if (acc + success_rate - 1.0).abs() > 1e-12 {
                log::warn!(
                    "adversarial accuracy {acc} and success rate {success_rate} do not sum to 1 \
                     ({misclassified_failures} failures misclassified, {unverified} unverified successes)"
                );
            }
        }
        CampaignReport {
            schema_version: REPORT_SCHEMA_VERSION,
            meta,
            n_attempted: n,
            n_success,
            success_rate,
            adv_accuracy,
            adv_f1,
            mean_queries: ratio(queries as f64, n),
            mean_edit_distance: ratio(edit_sum as f64, edit_units),
            modified_words: modified,
            inconsistent_words: inconsistent,
            retokenization_inconsistency_rate: ratio(inconsistent as f64, modified),
            inconsistent_but_adversarial: inconsistent_adv,
            failures,
            misclassified_failures,
            unverified_successes: unverified,
        }
    }
}

fn target_labels(target: &AttackTarget) -> Vec<usize> {
    match target {
        AttackTarget::Sentence { label } => vec![*label],
        AttackTarget::Words { labels, .. } => labels.clone(),
    }
}

fn gold_spans(tags: &[usize], names: &[String]) -> usize {
    let names: Vec<&str> = tags
        .iter()
        .map(|&t| names.get(t).map_or("O", String::as_str))
        .collect();
    decode_bio(&names).0.len()
}

/// Per-word predicted tag: argmax at each word's first subtoken.
pub fn predict_tags<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    words: &[String],
) -> Result<Vec<usize>> {
    let enc = vocab.encode_words(words);
    let logits = model.logits(&enc.ids)?;
    enc.word_spans
        .iter()
        .map(|s| Ok(Logits::select(&logits, crate::model::Target::Position(s.start))?.argmax()))
        .collect()
}

/// Words of the input with `changes` applied.
pub fn apply_changes(words: &[String], changes: &[WordChange]) -> Vec<String> {
    let mut out = words.to_vec();
    for c in changes {
        if let Some(w) = out.get_mut(c.index) {
            w.clone_from(&c.replacement);
        }
    }
    out
}

/// Every input of `dataset` the model classifies correctly, ready to
/// attack. Token inputs without entities are skipped.
pub fn eligible_items<M: DifferentiableClassifier + ?Sized>(
    dataset: &Dataset,
    model: &M,
    vocab: &Vocabulary,
    entity_objective: bool,
    parallelism: Parallelism,
) -> Result<Vec<CampaignItem>> {
    let candidates: Vec<CampaignItem> = match dataset {
        Dataset::Sentence(d) => d
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| CampaignItem {
                id: i.to_string(),
                words: pre_tokenize(&r.text),
                target: AttackTarget::Sentence { label: r.label },
                gold_tags: None,
            })
            .collect(),
        Dataset::Token(d) => d
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.spans.is_empty())
            .map(|(i, r)| {
                let words: Vec<usize> = if entity_objective {
                    r.spans.iter().flat_map(|s| s.start..s.end).collect()
                } else {
                    r.spans.iter().map(|s| s.start).collect()
                };
                CampaignItem {
                    id: i.to_string(),
                    words: r.tokens.clone(),
                    target: AttackTarget::Words {
                        labels: words.iter().map(|&w| r.tags[w]).collect(),
                        words,
                    },
                    gold_tags: Some(r.tags.clone()),
                }
            })
            .collect(),
    };
    let correct = exec::try_map(parallelism, &candidates, |item| {
        if item.words.is_empty() {
            return Ok(false);
        }
        let pred = predict_words(model, vocab, &item.words, &item.target)?;
        Ok::<_, Error>(pred == target_labels(&item.target))
    })?;
    Ok(candidates
        .into_iter()
        .zip(correct)
        .filter_map(|(item, ok)| ok.then_some(item))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOptions {
    pub sample_size: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
    pub dataset_id: String,
    pub model_id: String,
    /// Stamp each result with the wall-clock time.
    pub timestamps: bool,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            sample_size: 1000,
            seed: 0,
            parallelism: Parallelism::Sequential,
            dataset_id: String::new(),
            model_id: String::new(),
            timestamps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub entries: Vec<CampaignEntry>,
    pub report: CampaignReport,
}

/// Uniform sample without replacement, returned in ascending order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_str(seed, "campaign-sample"));
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Attacks a seeded sample of correctly classified inputs.
pub fn run_campaign<M: DifferentiableClassifier + ?Sized>(
    dataset: &Dataset,
    model: &M,
    vocab: &Vocabulary,
    config: &AttackConfig,
    tables: Tables<'_>,
    opts: &CampaignOptions,
) -> Result<Campaign> {
    config.validate()?;
    if dataset.task() != model.task() {
        return Err(Error::InvalidConfig(format!(
            "{:?} dataset given to a {:?} model",
            dataset.task(),
            model.task()
        )));
    }
    let items = eligible_items(
        dataset,
        model,
        vocab,
        config.entity_objective,
        opts.parallelism,
    )?;
    if items.is_empty() {
        return Err(Error::NoEligibleInputs);
    }
    let picked: Vec<&CampaignItem> = sample_indices(items.len(), opts.sample_size, opts.seed)
        .into_iter()
        .map(|i| &items[i])
        .collect();
    let outcomes = exec::try_map(opts.parallelism, &picked, |item| {
        attack_item(model, vocab, item, config, tables, opts)
    })?;
    let n_infeasible = outcomes.iter().filter(|o| o.is_none()).count();
    let entries: Vec<CampaignEntry> = outcomes.into_iter().flatten().collect();
    let meta = CampaignMeta {
        dataset_id: opts.dataset_id.clone(),
        model_id: opts.model_id.clone(),
        task: dataset.task(),
        label_names: dataset.label_names().to_vec(),
        config: config.clone(),
        seed: opts.seed,
        sample_size: opts.sample_size,
        n_eligible: items.len(),
        n_infeasible,
    };
    let report = CampaignReport::from_entries(meta, &entries);
    Ok(Campaign { entries, report })
}

fn attack_item<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    item: &CampaignItem,
    config: &AttackConfig,
    tables: Tables<'_>,
    opts: &CampaignOptions,
) -> Result<Option<CampaignEntry>> {
    let mut cfg = config.clone();
    cfg.seed = seed::derive_str(opts.seed, &item.id);
    let mut result = match attack_sentence(model, vocab, &item.words, &item.target, &cfg, tables) {
        Ok(r) => r,
        Err(Error::AttackInfeasible) => {
            log::info!("input {}: no attackable word, skipped", item.id);
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    result.example_id = Some(item.id.clone());
    if opts.timestamps {
        result.timestamp = Some(now_stamp());
    }
    // the model's own words: re-split for sentences
    let words = match item.target {
        AttackTarget::Sentence { .. } => pre_tokenize(&item.words.join(" ")),
        AttackTarget::Words { .. } => item.words.clone(),
    };
    let last = result
        .attempts
        .last()
        .expect("an attack makes at least one attempt");
    let final_words = apply_changes(&words, &last.changes);
    if result.final_prediction.is_none() {
        // scoring only; not an attack query
        result.final_prediction = Some(predict_words(model, vocab, &final_words, &item.target)?);
    }
    let final_tags = match item.gold_tags {
        Some(_) => Some(predict_tags(model, vocab, &final_words)?),
        None => None,
    };
    Ok(Some(CampaignEntry {
        result,
        gold_tags: item.gold_tags.clone(),
        final_tags,
    }))
}

fn now_stamp() -> String {
    let d = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    format!("{}.{:03}", d.as_secs(), d.subsec_millis())
}

pub fn write_entries(path: impl AsRef<Path>, entries: &[CampaignEntry]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_entries(path: impl AsRef<Path>) -> Result<Vec<CampaignEntry>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(entries)
}

pub fn write_report(path: impl AsRef<Path>, report: &CampaignReport) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Training examples built from successful attacks, labeled with the
/// original gold labels.
pub fn adversarial_examples(entries: &[CampaignEntry], vocab: &Vocabulary) -> Vec<Example> {
    entries
        .iter()
        .filter(|e| e.result.success)
        .filter_map(|e| match (&e.result.target, &e.gold_tags) {
            (AttackTarget::Sentence { label }, _) => Some(Example {
                ids: vocab
                    .encode_words(&pre_tokenize(&e.result.adversarial_text))
                    .ids,
                label: Label::Class(*label),
            }),
            (AttackTarget::Words { .. }, Some(tags)) => {
                let tokens: Vec<String> = e
                    .result
                    .adversarial_text
                    .split_whitespace()
                    .map(str::to_string)
                    .collect();
                (tokens.len() == tags.len()).then(|| {
                    TokenRecord {
                        tokens,
                        tags: tags.clone(),
                        spans: Vec::new(),
                    }
                    .encode(vocab)
                })
            }
            _ => None,
        })
        .collect()
}

/// Retrains on the original examples plus the adversarial ones. With
/// `base` the given model is trained further instead of starting from a
/// fresh initialization.
pub fn adversarial_retrain(
    spec: TinyTransformerSpec,
    base: Option<&TinyTransformer>,
    train: &[Example],
    adversarial: &[Example],
    eval: &[Example],
    seed: u64,
    opts: &TrainOptions,
) -> Result<(TinyTransformer, TrainReport)> {
    if adversarial.is_empty() {
        log::warn!("no adversarial examples; retraining on the original data only");
    }
    let combined: Vec<Example> = train.iter().chain(adversarial).cloned().collect();
    match base {
        Some(model) => {
            if model.spec() != &spec {
                return Err(Error::InvalidSpec(
                    "base model spec differs from the requested spec".into(),
                ));
            }
            continue_training(model.clone(), &combined, eval, seed, opts)
        }
        None => train_reference(&combined, eval, spec, seed, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{Attempt, FinalLosses, LossBreakdown, RESULT_SCHEMA_VERSION};

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance("boston", "bosfon"), 1);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("same", "same"), 0);
    }

    fn change(
        original: &str,
        replacement: &str,
        attack: Vec<TokenId>,
        re: Vec<TokenId>,
    ) -> WordChange {
        WordChange {
            index: 0,
            original: original.into(),
            replacement: replacement.into(),
            edit_distance: edit_distance(original, replacement),
            attack_ids: attack,
            retokenized_ids: re,
        }
    }

    fn result(
        success: bool,
        words: Vec<WordChange>,
        pred: usize,
        failure: Option<FailureKind>,
    ) -> AttackResult {
        AttackResult {
            schema_version: RESULT_SCHEMA_VERSION,
            example_id: None,
            original_text: String::new(),
            adversarial_text: String::new(),
            target: AttackTarget::Sentence { label: 0 },
            success,
            queries: 2,
            k_used: 2,
            iterations_used: 300,
            words,
            losses: FinalLosses {
                adv: 0.0,
                vis: 0.0,
                len: 0.0,
            },
            failure,
            final_prediction: Some(vec![pred]),
            attempts: vec![Attempt {
                k: 2,
                words: vec![],
                shortfall: false,
                text: String::new(),
                losses: LossBreakdown::default(),
                hard_loss: 0.0,
                gate_passed: success,
                verified_prediction: None,
                changes: vec![],
            }],
            config: AttackConfig::sentence(),
            timestamp: None,
        }
    }

    #[test]
    fn sentence_edit_distance_sums() {
        let r = result(
            true,
            vec![
                change("boston", "bosfon", vec![], vec![]),
                change("ab", "ba", vec![], vec![]),
            ],
            1,
            None,
        );
        assert_eq!(sentence_edit_distance(&r), 3);
        assert_eq!(sentence_edit_distance(&result(false, vec![], 0, None)), 0);
    }

    #[test]
    fn consistency_flags() {
        let v = Vocabulary::from_tokens(
            ["[UNK]", "bo", "bos", "##sl", "##on", "##lon"],
            crate::vocab::Convention::WordPiece,
        )
        .unwrap();
        let w = change("boston", "boslon", vec![1, 3, 4], vec![]);
        let rec = retokenization_check(&result(true, vec![w], 1, None), &v);
        assert_eq!(rec.words[0].retokenized_ids, vec![2, 5]);
        assert!(!rec.words[0].consistent);
        assert!(rec.inconsistent_but_adversarial);
        let same = change("boston", "boslon", vec![2, 5], vec![]);
        let rec = retokenization_check(&result(false, vec![same], 0, None), &v);
        assert!(rec.words[0].consistent);
        assert!(!rec.inconsistent_and_failed);
    }

    fn meta() -> CampaignMeta {
        CampaignMeta {
            dataset_id: "d".into(),
            model_id: "m".into(),
            task: Task::Sentence,
            label_names: vec!["a".into(), "b".into()],
            config: AttackConfig::sentence(),
            seed: 0,
            sample_size: 10,
            n_eligible: 10,
            n_infeasible: 0,
        }
    }

    #[test]
    fn report_arithmetic() {
        let mut entries = Vec::new();
        for i in 0..10 {
            let ok = i < 8;
            let failure = match i {
                8 => Some(FailureKind::Unoptimized),
                9 => Some(FailureKind::TokenizationInconsistency),
                _ => None,
            };
            entries.push(CampaignEntry {
                result: result(ok, vec![], usize::from(ok), failure),
                gold_tags: None,
                final_tags: None,
            });
        }
        let r = CampaignReport::from_entries(meta(), &entries);
        assert_eq!(r.n_attempted, 10);
        assert_eq!(r.n_success, 8);
        assert!((r.success_rate - 0.8).abs() < 1e-12);
        assert!((r.adv_accuracy.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(
            r.failures.unoptimized + r.failures.tokenization_inconsistency,
            2
        );
        assert_eq!(r.mean_queries, 2.0);
        assert_eq!(r.unverified_successes, 0);
    }

    #[test]
    fn sampling_is_seeded_and_clamped() {
        assert_eq!(sample_indices(5, 10, 1), vec![0, 1, 2, 3, 4]);
        let a = sample_indices(100, 10, 3);
        assert_eq!(a, sample_indices(100, 10, 3));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
