//! Supervised training of the reference transformer and checkpoint I/O.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{decode_bio, Example, Label};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::model::{
    argmax, cross_entropy, DifferentiableClassifier, Input, Task, TinyTransformer,
    TinyTransformerSpec,
};
use crate::optim::Adam;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Tag names for token tasks; enables span F1 reporting.
    pub tag_names: Option<Vec<String>>,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            learning_rate: 3e-3,
            tag_names: None,
            parallelism: Parallelism::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// "accuracy" or "span_f1".
    pub metric: String,
    pub train_metric: f64,
    pub eval_metric: Option<f64>,
    pub final_loss: f64,
    pub weights_hash: String,
}

fn check_example(ex: &Example, spec: &TinyTransformerSpec) -> Result<()> {
    match (&ex.label, spec.task) {
        (Label::Class(c), Task::Sentence) if *c < spec.num_classes => Ok(()),
        (Label::Class(c), Task::Sentence) => Err(Error::InvalidClass {
            class: *c,
            num_classes: spec.num_classes,
        }),
        (Label::Tags(tags), Task::Token) => {
            if tags.len() != ex.ids.len() {
                return Err(Error::AlignmentMismatch(format!(
                    "{} tags for {} subtokens",
                    tags.len(),
                    ex.ids.len()
                )));
            }
            match tags.iter().flatten().find(|&&t| t >= spec.num_classes) {
                Some(&t) => Err(Error::InvalidClass {
                    class: t,
                    num_classes: spec.num_classes,
                }),
                None => Ok(()),
            }
        }
        _ => Err(Error::InvalidSpec(format!(
            "example label does not fit a {:?} model",
            spec.task
        ))),
    }
}

/// Loss and parameter gradients for one example.
fn example_grads(
    model: &TinyTransformer,
    ex: &Example,
    dropout_seed: u64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let out = model.build(&mut tape, &params, Input::Ids(&ex.ids), Some(&mut rng))?;
    let logits = tape.value(out);
    let mut seed = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    match &ex.label {
        Label::Class(y) => {
            let (l, g) = cross_entropy(logits.row(0), *y);
            loss = l;
            seed.row_mut(0).assign(&g);
        }
        Label::Tags(tags) => {
            let n = tags.iter().flatten().count().max(1) as f64;
            for (p, t) in tags.iter().enumerate() {
                if let Some(t) = t {
                    let (l, g) = cross_entropy(logits.row(p), *t);
                    loss += l / n;
                    seed.row_mut(p).assign(&(g / n));
                }
            }
        }
    }
    let mut grads = tape.backward(out, seed);
    let g = params
        .iter()
        .zip(model.weights().tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Array2::zeros(t.dim())))
        .collect();
    Ok((loss, g))
}

/// Trains a fresh model. Deterministic in `seed`, independent of the
/// parallelism mode.
pub fn train_reference(
    train: &[Example],
    eval: &[Example],
    spec: TinyTransformerSpec,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(TinyTransformer, TrainReport)> {
    spec.validate()?;
    let model = TinyTransformer::new(spec, seed)?;
    continue_training(model, train, eval, seed, opts)
}

/// Runs `opts.epochs` further epochs on an existing model.
pub fn continue_training(
    mut model: TinyTransformer,
    train: &[Example],
    eval: &[Example],
    seed: u64,
    opts: &TrainOptions,
) -> Result<(TinyTransformer, TrainReport)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in train.iter().chain(eval) {
        check_example(ex, model.spec())?;
    }
    let shapes: Vec<_> = model.weights().tensors().iter().map(|t| t.dim()).collect();
    let mut adam = Adam::new(opts.learning_rate, shapes);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, 0x5348_5546));
    let batch = opts.batch_size.max(1);
    let mut final_loss = 0.0;
    let mut step: u64 = 0;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            step += 1;
            let base = seed::derive(seed, step);
            let results = exec::try_map(opts.parallelism, chunk, |&i| {
                example_grads(&model, &train[i], seed::derive(base, i as u64))
            })?;
            let mut total: Vec<Array2<f64>> = Vec::new();
            for (loss, grads) in results {
                epoch_loss += loss;
                if total.is_empty() {
                    total = grads;
                } else {
                    for (t, g) in total.iter_mut().zip(grads) {
                        *t += &g;
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            total.iter_mut().for_each(|t| *t *= scale);
            let mut params = model.weights_mut().tensors_mut();
            adam.update(&mut params, &total);
        }
        final_loss = epoch_loss / train.len() as f64;
        log::debug!("epoch {epoch}: mean loss {final_loss:.4}");
    }
    let (metric, train_metric) = evaluate(&model, train, opts)?;
    let eval_metric = if eval.is_empty() {
        None
    } else {
        Some(evaluate(&model, eval, opts)?.1)
    };
    let report = TrainReport {
        metric: metric.to_string(),
        train_metric,
        eval_metric,
        final_loss,
        weights_hash: model.weights().hash(),
    };
    Ok((model, report))
}

/// Accuracy for sentence models; span F1 (or tag accuracy without tag
/// names) for token models.
pub fn evaluate(
    model: &TinyTransformer,
    examples: &[Example],
    opts: &TrainOptions,
) -> Result<(&'static str, f64)> {
    let preds = exec::try_map(opts.parallelism, examples, |ex| model.logits(&ex.ids))?;
    match model.task() {
        Task::Sentence => {
            let correct = preds
                .iter()
                .zip(examples)
                .filter(|(l, ex)| ex.label == Label::Class(argmax(l.row(0).iter().copied())))
                .count();
            Ok(("accuracy", correct as f64 / examples.len().max(1) as f64))
        }
        Task::Token => {
            let mut gold = Vec::new();
            let mut pred = Vec::new();
            for (l, ex) in preds.iter().zip(examples) {
                let Label::Tags(tags) = &ex.label else {
                    continue;
                };
                let mut g = Vec::new();
                let mut p = Vec::new();
                for (pos, t) in tags.iter().enumerate() {
                    if let Some(t) = t {
                        g.push(*t);
                        p.push(argmax(l.row(pos).iter().copied()));
                    }
                }
                gold.push(g);
                pred.push(p);
            }
            match &opts.tag_names {
                Some(names) => Ok(("span_f1", span_f1(&gold, &pred, names))),
                None => {
                    let (mut hit, mut n) = (0, 0);
                    for (g, p) in gold.iter().zip(&pred) {
                        hit += g.iter().zip(p).filter(|(a, b)| a == b).count();
                        n += g.len();
                    }
                    Ok(("tag_accuracy", hit as f64 / n.max(1) as f64))
                }
            }
        }
    }
}

/// Micro-averaged exact-match span F1 over word-level tag sequences.
pub fn span_f1(gold: &[Vec<usize>], pred: &[Vec<usize>], tag_names: &[String]) -> f64 {
    let (mut tp, mut n_gold, mut n_pred) = (0usize, 0usize, 0usize);
    let name = |t: usize| tag_names.get(t).map_or("O", String::as_str);
    for (g, p) in gold.iter().zip(pred) {
        let (gs, _) = decode_bio(&g.iter().map(|&t| name(t)).collect::<Vec<_>>());
        let (ps, _) = decode_bio(&p.iter().map(|&t| name(t)).collect::<Vec<_>>());
        n_gold += gs.len();
        n_pred += ps.len();
        tp += ps.iter().filter(|s| gs.contains(s)).count();
    }
    if n_gold + n_pred == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (n_gold + n_pred) as f64
}

pub const CHECKPOINT_FORMAT: &str = "subtoken-attack/tiny-transformer";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabRef {
    pub path: Option<String>,
    pub hash: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: TinyTransformerSpec,
    pub vocab: VocabRef,
    pub labels: Vec<String>,
    pub weights: crate::model::Weights,
}

impl Checkpoint {
    pub fn new(model: &TinyTransformer, vocab: VocabRef, labels: Vec<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: model.spec().clone(),
            vocab,
            labels,
            weights: model.weights().clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn into_model(self) -> Result<TinyTransformer> {
        TinyTransformer::from_parts(self.spec, self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data() -> Vec<Example> {
        // class = whether token 3 appears
        (0..40)
            .map(|i| {
                let mut ids = vec![1 + (i % 2) as u32, 2, 4 + (i % 3) as u32];
                let y = i % 2;
                if y == 1 {
                    ids[1] = 3;
                }
                Example {
                    ids,
                    label: Label::Class(y),
                }
            })
            .collect()
    }

    fn spec() -> TinyTransformerSpec {
        TinyTransformerSpec {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            max_len: 8,
            dropout: 0.1,
            vocab_size: 8,
            num_classes: 2,
            task: Task::Sentence,
        }
    }

    #[test]
    fn learns_a_toy_rule_deterministically() {
        let data = toy_data();
        let opts = TrainOptions {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (_, a) = train_reference(&data, &data, spec(), 3, &opts).unwrap();
        assert!(a.eval_metric.unwrap() > 0.95, "{a:?}");
        let par = TrainOptions {
            parallelism: Parallelism::Parallel,
            ..opts
        };
        let (_, b) = train_reference(&data, &[], spec(), 3, &par).unwrap();
        assert_eq!(a.weights_hash, b.weights_hash);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let mut s = spec();
        assert!(matches!(
            train_reference(&[], &[], s.clone(), 0, &TrainOptions::default()),
            Err(Error::EmptyDataset)
        ));
        s.num_classes = 1;
        assert!(matches!(
            train_reference(&toy_data(), &[], s, 0, &TrainOptions::default()),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn span_f1_counts_exact_matches() {
        let names: Vec<String> = ["O", "B-X", "I-X"].iter().map(|s| s.to_string()).collect();
        let gold = vec![vec![1, 2, 0, 1]];
        assert_eq!(span_f1(&gold, &gold, &names), 1.0);
        let pred = vec![vec![1, 0, 0, 1]];
        assert!((span_f1(&gold, &pred, &names) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = TinyTransformer::new(spec(), 9).unwrap();
        let ck = Checkpoint::new(
            &m,
            VocabRef {
                path: None,
                hash: "h".into(),
                size: 8,
            },
            vec!["a".into(), "b".into()],
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let m2 = back.into_model().unwrap();
        assert_eq!(m2.weights().hash(), m.weights().hash());
        assert_eq!(m2.logits(&[1, 2]).unwrap(), m.logits(&[1, 2]).unwrap());
    }
}
