//! Gradient search over relaxed middle subtokens.
//!
//! Each replaceable position holds unconstrained scores `phi`; the working
//! distribution is a masked, temperature-scaled softmax of `phi` plus fixed
//! noise. The objective mixes the margin loss on the relaxed input, the
//! margin loss on its argmax sample (with a straight-through gradient), a
//! glyph-similarity penalty and a length penalty. The outer loop grows the
//! number of attacked words until a re-tokenized sample fools the model.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::edit_distance;
use crate::model::{
    argmax, margin_loss, multi_margin_value_and_grad, DifferentiableClassifier, Logits, Target,
};
use crate::optim::Adam;
use crate::seed;
use crate::selector::{rank_words, select_targets, split_words};
use crate::visual::{LengthTable, VisualTable};
use crate::vocab::{pre_tokenize, Role, TokenId, Vocabulary};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// `-ln(-ln u)` with `u ~ U(0, 1)`.
    Gumbel,
    /// `u ~ U(0, 1)` used directly.
    Uniform,
    /// No perturbation.
    None,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gumbel" => Ok(NoiseKind::Gumbel),
            "uniform" => Ok(NoiseKind::Uniform),
            "none" => Ok(NoiseKind::None),
            _ => Err(Error::InvalidConfig(format!("unknown noise kind {s:?}"))),
        }
    }
}

/// How the gradient of the hard sample reaches the relaxed row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StraightThrough {
    /// Identity: the one-hot is read as `onehot + pi - stop_grad(pi)`.
    #[default]
    Full,
    /// Only the argmax coordinate, read as `pi_a / stop_grad(pi_a)`.
    Argmax,
}

impl std::str::FromStr for StraightThrough {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(StraightThrough::Full),
            "argmax" => Ok(StraightThrough::Argmax),
            _ => Err(Error::InvalidConfig(format!(
                "unknown straight-through mode {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kappa: f64,
    pub lambda_adv: f64,
    pub lambda_vis: f64,
    pub lambda_len: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub max_iter: usize,
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
    pub noise: NoiseKind,
    #[serde(default)]
    pub straight_through: StraightThrough,
    /// Draw fresh noise every optimizer step instead of once per attempt.
    pub resample_noise: bool,
    /// Token tasks: score every word of the target entity rather than only
    /// its first word.
    pub entity_objective: bool,
}

impl AttackConfig {
    pub fn sentence() -> Self {
        Self {
            kappa: 7.0,
            lambda_adv: 1.0,
            lambda_vis: 0.1,
            lambda_len: 2.0,
            temperature: 1.0,
            learning_rate: 0.3,
            max_iter: 300,
            n1: 2,
            n2: 15,
            seed: 0,
            noise: NoiseKind::Gumbel,
            straight_through: StraightThrough::Full,
            resample_noise: false,
            entity_objective: false,
        }
    }

    pub fn token() -> Self {
        Self {
            kappa: 5.0,
            max_iter: 100,
            n1: 1,
            n2: 2,
            ..Self::sentence()
        }
    }

    pub fn for_task(task: crate::model::Task) -> Self {
        match task {
            crate::model::Task::Sentence => Self::sentence(),
            crate::model::Task::Token => Self::token(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidMargin(self.kappa));
        }
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_vis", self.lambda_vis),
            ("lambda_len", self.lambda_len),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if self.n1 == 0 || self.n1 > self.n2 {
            return bad(format!(
                "need 1 <= n1 <= n2, got n1={} n2={}",
                self.n1, self.n2
            ));
        }
        Ok(())
    }
}

/// Noise matrix for `rows x cols` relaxed entries.
pub fn sample_noise(rows: usize, cols: usize, seed: u64, kind: NoiseKind) -> Array2<f64> {
    if kind == NoiseKind::None {
        return Array2::zeros((rows, cols));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| {
        // open interval so that the Gumbel transform stays finite
        let u: f64 = loop {
            let u = rng.gen::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        match kind {
            NoiseKind::Gumbel => -(-u.ln()).ln(),
            _ => u,
        }
    })
}

fn check_mask(mask: &[bool], width: usize) -> Result<()> {
    if mask.len() != width {
        return Err(Error::WidthMismatch {
            got: mask.len(),
            expected: width,
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyCandidateMask);
    }
    Ok(())
}

/// Row-wise softmax of `(phi + noise) / t` restricted to `mask`; masked-out
/// entries are exactly zero.
pub fn masked_softmax(
    phi: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    t: f64,
    mask: &[bool],
) -> Result<Array2<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidTemperature(t));
    }
    check_mask(mask, phi.ncols())?;
    let mut out = Array2::zeros(phi.dim());
    for ((p, g), mut o) in phi.rows().into_iter().zip(noise.rows()).zip(out.rows_mut()) {
        let mut max = f64::NEG_INFINITY;
        for j in 0..p.len() {
            if mask[j] {
                max = max.max((p[j] + g[j]) / t);
            }
        }
        let mut z = 0.0;
        for j in 0..p.len() {
            if mask[j] {
                let e = ((p[j] + g[j]) / t - max).exp();
                o[j] = e;
                z += e;
            }
        }
        o /= z;
    }
    Ok(out)
}

/// Backward pass of [`masked_softmax`] with respect to `phi`.
pub fn masked_softmax_backward(pi: &Array2<f64>, dpi: &Array2<f64>, t: f64) -> Array2<f64> {
    let mut out = Array2::zeros(pi.dim());
    for ((p, d), mut o) in pi.rows().into_iter().zip(dpi.rows()).zip(out.rows_mut()) {
        let inner = p.dot(&d);
        for j in 0..p.len() {
            o[j] = p[j] * (d[j] - inner) / t;
        }
    }
    out
}

/// Relaxes score rows (typically one-hot) into noisy masked softmax rows.
pub fn relax(
    phi: &Array2<f64>,
    t: f64,
    noise_seed: u64,
    kind: NoiseKind,
    mask: &[bool],
) -> Result<Array2<f64>> {
    let noise = sample_noise(phi.nrows(), phi.ncols(), noise_seed, kind);
    masked_softmax(phi.view(), noise.view(), t, mask)
}

/// One-hot at the argmax (lowest index on ties), plus that index.
pub fn hard_sample(row: ArrayView1<f64>) -> (Array1<f64>, usize) {
    let a = argmax(row.iter().copied());
    let mut h = Array1::zeros(row.len());
    h[a] = 1.0;
    (h, a)
}

/// Straight-through gradient of [`hard_sample`] with respect to the
/// relaxed row. In `Argmax` mode only the argmax coordinate receives
/// `upstream[a] / row[a]`; in `Full` mode the upstream gradient passes
/// unchanged.
pub fn hard_sample_backward(
    row: ArrayView1<f64>,
    upstream: ArrayView1<f64>,
    mode: StraightThrough,
) -> Array1<f64> {
    match mode {
        StraightThrough::Full => upstream.to_owned(),
        StraightThrough::Argmax => {
            let a = argmax(row.iter().copied());
            let mut g = Array1::zeros(row.len());
            if row[a] > 0.0 {
                g[a] = upstream[a] / row[a];
            }
            g
        }
    }
}

/// Per-position distributions over the vocabulary for one input. Frozen
/// positions are fixed one-hots of the original ids; relaxed positions are
/// driven by the scores `phi`.
#[derive(Debug, Clone)]
pub struct TokenDistribution {
    ids: Vec<TokenId>,
    relaxed: Vec<usize>,
    phi: Array2<f64>,
    noise: Array2<f64>,
    temperature: f64,
    noise_seed: u64,
    noise_kind: NoiseKind,
    candidate_mask: Vec<bool>,
}

impl TokenDistribution {
    /// Scores start as the one-hot of each original id.
    pub fn new(
        ids: Vec<TokenId>,
        relaxed: Vec<usize>,
        candidate_mask: Vec<bool>,
        temperature: f64,
        noise_seed: u64,
        noise_kind: NoiseKind,
    ) -> Result<Self> {
        let v = candidate_mask.len();
        check_mask(&candidate_mask, v)?;
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidTemperature(temperature));
        }
        for (i, &p) in relaxed.iter().enumerate() {
            if p >= ids.len() || relaxed[..i].contains(&p) {
                return Err(Error::InvalidPosition {
                    position: p,
                    len: ids.len(),
                });
            }
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(Error::IdOutOfRange { id: bad, size: v });
        }
        let mut phi = Array2::zeros((relaxed.len(), v));
        for (r, &p) in relaxed.iter().enumerate() {
            phi[[r, ids[p] as usize]] = 1.0;
        }
        let noise = sample_noise(relaxed.len(), v, noise_seed, noise_kind);
        Ok(Self {
            ids,
            relaxed,
            phi,
            noise,
            temperature,
            noise_seed,
            noise_kind,
            candidate_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.candidate_mask.len()
    }

    pub fn original_ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn relaxed_positions(&self) -> &[usize] {
        &self.relaxed
    }

    /// Original ids at the relaxed positions.
    pub fn relaxed_original_ids(&self) -> Vec<TokenId> {
        self.relaxed.iter().map(|&p| self.ids[p]).collect()
    }

    pub fn frozen(&self) -> Vec<bool> {
        (0..self.ids.len())
            .map(|p| !self.relaxed.contains(&p))
            .collect()
    }

    pub fn candidate_mask(&self) -> &[bool] {
        &self.candidate_mask
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut Array2<f64> {
        &mut self.phi
    }

    pub fn noise(&self) -> &Array2<f64> {
        &self.noise
    }

    /// Replaces the noise with a fresh draw for optimizer step `step`.
    pub fn resample_noise(&mut self, step: u64) {
        self.noise = sample_noise(
            self.relaxed.len(),
            self.vocab_size(),
            seed::derive(self.noise_seed, step),
            self.noise_kind,
        );
    }

    /// The relaxed rows only, `|I| x V`.
    pub fn relaxed_rows(&self) -> Array2<f64> {
        masked_softmax(
            self.phi.view(),
            self.noise.view(),
            self.temperature,
            &self.candidate_mask,
        )
        .expect("mask and temperature validated at construction")
    }

    fn assemble(&self, relaxed_rows: &Array2<f64>) -> Array2<f64> {
        let mut m = Array2::zeros((self.ids.len(), self.vocab_size()));
        for (p, &id) in self.ids.iter().enumerate() {
            m[[p, id as usize]] = 1.0;
        }
        for (r, &p) in self.relaxed.iter().enumerate() {
            m.row_mut(p).assign(&relaxed_rows.row(r));
        }
        m
    }

    /// Full `L x V` matrix with relaxed rows in place.
    pub fn rows(&self) -> Array2<f64> {
        self.assemble(&self.relaxed_rows())
    }

    /// Full matrix with every relaxed row replaced by its hard sample.
    pub fn hard_rows(&self) -> Array2<f64> {
        let pi = self.relaxed_rows();
        let hard = Array2::from_shape_fn(pi.dim(), |(r, j)| {
            if argmax(pi.row(r).iter().copied()) == j {
                1.0
            } else {
                0.0
            }
        });
        self.assemble(&hard)
    }

    /// The discrete sequence the current scores select.
    pub fn hard_ids(&self) -> Vec<TokenId> {
        let pi = self.relaxed_rows();
        let mut ids = self.ids.clone();
        for (r, &p) in self.relaxed.iter().enumerate() {
            ids[p] = argmax(pi.row(r).iter().copied()) as TokenId;
        }
        ids
    }
}

/// Which predictions an attack tries to change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    /// The sentence label.
    Sentence { label: usize },
    /// Labels of the first subtoken of each listed word.
    Words {
        words: Vec<usize>,
        labels: Vec<usize>,
    },
}

impl AttackTarget {
    fn resolve(&self, spans: &[Range<usize>]) -> Result<Vec<(Target, usize)>> {
        match self {
            AttackTarget::Sentence { label } => Ok(vec![(Target::Sentence, *label)]),
            AttackTarget::Words { words, labels } => {
                if words.len() != labels.len() || words.is_empty() {
                    return Err(Error::InvalidConfig(
                        "token targets need one label per word".into(),
                    ));
                }
                words
                    .iter()
                    .zip(labels)
                    .map(|(&w, &y)| {
                        spans.get(w).map(|s| (Target::Position(s.start), y)).ok_or(
                            Error::InvalidPosition {
                                position: w,
                                len: spans.len(),
                            },
                        )
                    })
                    .collect()
            }
        }
    }
}

fn goal_loss(logits: &Array2<f64>, goal: &[(Target, usize)], kappa: f64) -> Result<f64> {
    let mut total = 0.0;
    for &(t, y) in goal {
        total += margin_loss(&Logits::select(logits, t)?, y, kappa)?;
    }
    Ok(total)
}

/// Constraint tables; either may be absent when its weight is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tables<'a> {
    pub visual: Option<&'a VisualTable>,
    pub lengths: Option<&'a LengthTable>,
}

/// Sum over rows of `|| pi_i . V - V[orig_i] ||_2` and its gradient in `pi`.
pub fn visual_loss_rows(
    pi: &Array2<f64>,
    originals: &[TokenId],
    table: &VisualTable,
) -> Result<(f64, Array2<f64>)> {
    let vt = &table.vectors;
    if vt.nrows() != pi.ncols() {
        return Err(Error::WidthMismatch {
            got: vt.nrows(),
            expected: pi.ncols(),
        });
    }
    let mut diff = pi.dot(vt);
    let mut loss = 0.0;
    for (mut d, &orig) in diff.rows_mut().into_iter().zip(originals) {
        d -= &vt.row(orig as usize);
        let norm = d.dot(&d).sqrt();
        loss += norm;
        if norm > 0.0 {
            d /= norm;
        } else {
            d.fill(0.0);
        }
    }
    let grad = diff.dot(&vt.t());
    Ok((loss, grad))
}

/// Sum over rows of `| pi_i . l - l[orig_i] |` and its gradient in `pi`.
pub fn length_loss_rows(
    pi: &Array2<f64>,
    originals: &[TokenId],
    table: &LengthTable,
) -> Result<(f64, Array2<f64>)> {
    if table.lengths.len() != pi.ncols() {
        return Err(Error::WidthMismatch {
            got: table.lengths.len(),
            expected: pi.ncols(),
        });
    }
    let l = Array1::from_iter(table.lengths.iter().map(|&x| x as f64));
    let mut loss = 0.0;
    let mut grad = Array2::zeros(pi.dim());
    for (r, &orig) in originals.iter().enumerate() {
        let gap = pi.row(r).dot(&l) - l[orig as usize];
        loss += gap.abs();
        let sign = if gap > 0.0 {
            1.0
        } else if gap < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.row_mut(r).assign(&(&l * sign));
    }
    Ok((loss, grad))
}

/// Visual gap of the relaxed rows from their original tokens.
pub fn visual_loss(dist: &TokenDistribution, table: Option<&VisualTable>) -> Result<f64> {
    let table = table.ok_or(Error::MissingTable("visual"))?;
    visual_loss_rows(&dist.relaxed_rows(), &dist.relaxed_original_ids(), table).map(|(l, _)| l)
}

/// Expected length change of the relaxed rows.
pub fn length_loss(dist: &TokenDistribution, table: Option<&LengthTable>) -> Result<f64> {
    let table = table.ok_or(Error::MissingTable("length"))?;
    length_loss_rows(&dist.relaxed_rows(), &dist.relaxed_original_ids(), table).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Margin loss on the relaxed input.
    pub relaxed: f64,
    /// Margin loss on the hard sample.
    pub hard: f64,
    /// `relaxed + lambda_adv * hard`.
    pub adv: f64,
    pub vis: f64,
    pub len: f64,
    pub total: f64,
}

/// Two-term adversarial objective: relaxed margin plus weighted hard-sample
/// margin.
pub fn adv_objective<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    dist: &TokenDistribution,
    goal: &[(Target, usize)],
    kappa: f64,
    lambda_adv: f64,
) -> Result<f64> {
    let relaxed = goal_loss(&model.logits_dist(&dist.rows())?, goal, kappa)?;
    let hard = goal_loss(&model.logits_dist(&dist.hard_rows())?, goal, kappa)?;
    Ok(relaxed + lambda_adv * hard)
}

/// Full objective and its gradient with respect to the scores `phi`.
pub fn total_loss<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    dist: &TokenDistribution,
    goal: &[(Target, usize)],
    config: &AttackConfig,
    tables: Tables<'_>,
) -> Result<(LossBreakdown, Array2<f64>)> {
    let pi = dist.relaxed_rows();
    let full = dist.assemble(&pi);
    let (relaxed, d_full) = multi_margin_value_and_grad(model, &full, goal, config.kappa)?;
    let mut dpi = Array2::zeros(pi.dim());
    for (r, &p) in dist.relaxed.iter().enumerate() {
        dpi.row_mut(r).assign(&d_full.row(p));
    }

    let hard = if config.lambda_adv > 0.0 {
        let hard_full = dist.hard_rows();
        let (h, d_hard) = multi_margin_value_and_grad(model, &hard_full, goal, config.kappa)?;
        for (r, &p) in dist.relaxed.iter().enumerate() {
            let st = hard_sample_backward(pi.row(r), d_hard.row(p), config.straight_through);
            dpi.row_mut(r).scaled_add(config.lambda_adv, &st);
        }
        h
    } else {
        goal_loss(&model.logits_dist(&dist.hard_rows())?, goal, config.kappa)?
    };

    let originals = dist.relaxed_original_ids();
    let mut vis = 0.0;
    if config.lambda_vis > 0.0 {
        let table = tables.visual.ok_or(Error::MissingTable("visual"))?;
        let (v, g) = visual_loss_rows(&pi, &originals, table)?;
        vis = v;
        dpi.scaled_add(config.lambda_vis, &g);
    } else if let Some(table) = tables.visual {
        vis = visual_loss_rows(&pi, &originals, table)?.0;
    }
    let mut len = 0.0;
    if config.lambda_len > 0.0 {
        let table = tables.lengths.ok_or(Error::MissingTable("length"))?;
        let (l, g) = length_loss_rows(&pi, &originals, table)?;
        len = l;
        dpi.scaled_add(config.lambda_len, &g);
    } else if let Some(table) = tables.lengths {
        len = length_loss_rows(&pi, &originals, table)?.0;
    }

    let adv = relaxed + config.lambda_adv * hard;
    let breakdown = LossBreakdown {
        relaxed,
        hard,
        adv,
        vis,
        len,
        total: adv + config.lambda_vis * vis + config.lambda_len * len,
    };
    let dphi = masked_softmax_backward(&pi, &dpi, dist.temperature);
    if dphi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient(format!(
            "score gradient at total loss {}",
            breakdown.total
        )));
    }
    Ok((breakdown, dphi))
}

/// Runs `config.max_iter` Adam steps on the scores and returns the loss
/// breakdown at the final scores.
pub fn optimize<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    dist: &mut TokenDistribution,
    goal: &[(Target, usize)],
    config: &AttackConfig,
    tables: Tables<'_>,
) -> Result<LossBreakdown> {
    let mut adam = Adam::new(config.learning_rate, [dist.phi.dim()]);
    for step in 0..config.max_iter {
        if config.resample_noise && step > 0 {
            dist.resample_noise(step as u64);
        }
        let (_, g) = total_loss(model, dist, goal, config, tables)?;
        adam.update(&mut [&mut dist.phi], &[g]);
    }
    Ok(total_loss(model, dist, goal, config, tables)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// The hard sample never reached the margin.
    Unoptimized,
    /// The hard sample reached the margin but the re-tokenized text did not
    /// fool the model.
    TokenizationInconsistency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordChange {
    pub index: usize,
    pub original: String,
    pub replacement: String,
    pub edit_distance: usize,
    /// Subtokens used during the attack.
    pub attack_ids: Vec<TokenId>,
    /// Standard tokenization of the replacement.
    pub retokenized_ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub k: usize,
    pub words: Vec<usize>,
    pub shortfall: bool,
    pub text: String,
    pub losses: LossBreakdown,
    /// Margin loss of the discrete sample under the attack tokenization.
    pub hard_loss: f64,
    pub gate_passed: bool,
    /// Prediction on the re-tokenized text, when it was checked.
    pub verified_prediction: Option<Vec<usize>>,
    pub changes: Vec<WordChange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FinalLosses {
    pub adv: f64,
    pub vis: f64,
    pub len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub schema_version: u32,
    pub example_id: Option<String>,
    pub original_text: String,
    pub adversarial_text: String,
    pub target: AttackTarget,
    pub success: bool,
    /// Discrete full-input model evaluations.
    pub queries: usize,
    pub k_used: usize,
    pub iterations_used: usize,
    pub words: Vec<WordChange>,
    pub losses: FinalLosses,
    pub failure: Option<FailureKind>,
    /// Predictions (one per target) on the re-tokenized adversarial text of
    /// the last attempt, when known.
    pub final_prediction: Option<Vec<usize>>,
    pub attempts: Vec<Attempt>,
    pub config: AttackConfig,
    pub timestamp: Option<String>,
}

impl AttackResult {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Words the model sees for an input: re-split text for sentence targets,
/// the given words for token targets.
fn model_words(words: &[String], target: &AttackTarget) -> Vec<String> {
    match target {
        AttackTarget::Sentence { .. } => pre_tokenize(&words.join(" ")),
        AttackTarget::Words { .. } => words.to_vec(),
    }
}

/// Prediction per goal entry on the standard tokenization of `words`.
pub fn predict_words<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    words: &[String],
    target: &AttackTarget,
) -> Result<Vec<usize>> {
    let words = model_words(words, target);
    let enc = vocab.encode_words(&words);
    let goal = target.resolve(&enc.word_spans)?;
    let logits = model.logits(&enc.ids)?;
    goal.iter()
        .map(|&(t, _)| Ok(Logits::select(&logits, t)?.argmax()))
        .collect()
}

fn labels_of(target: &AttackTarget) -> Vec<usize> {
    match target {
        AttackTarget::Sentence { label } => vec![*label],
        AttackTarget::Words { labels, .. } => labels.clone(),
    }
}

/// Attacks one input.
///
/// `words` are the input's words: the pre-tokenized sentence for sentence
/// targets, the dataset tokens for token targets. The caller should only
/// pass inputs the model currently classifies correctly.
pub fn attack_sentence<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    words: &[String],
    target: &AttackTarget,
    config: &AttackConfig,
    tables: Tables<'_>,
) -> Result<AttackResult> {
    config.validate()?;
    if model.vocab_size() != vocab.len() {
        return Err(Error::WidthMismatch {
            got: vocab.len(),
            expected: model.vocab_size(),
        });
    }
    let words = model_words(words, target);
    if words.is_empty() {
        return Err(Error::EmptySequence);
    }
    let labels = labels_of(target);
    let std_enc = vocab.encode_words(&words);
    let std_goal = target.resolve(&std_enc.word_spans)?;

    // ranking uses the summed gradient over all goal entries
    let dist = crate::model::one_hot(&std_enc.ids, vocab.len());
    let (_, grad) = multi_margin_value_and_grad(model, &dist, &std_goal, config.kappa)?;
    let norms = crate::model::row_norms(&grad);
    let ranking = rank_words(&std_enc.word_spans, &norms)?;

    let splits = split_words(&words, vocab);
    let eligible: Vec<bool> = splits.iter().map(Option::is_some).collect();
    if !eligible.iter().any(|&e| e) {
        return Err(Error::AttackInfeasible);
    }
    let mask = vocab.candidate_mask();

    let mut queries = 0;
    let mut iterations = 0;
    let mut attempts: Vec<Attempt> = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    for k in config.n1..=config.n2 {
        let selection = select_targets(&ranking, k, &eligible)?;
        if previous.as_ref() == Some(&selection.words) {
            break;
        }
        previous = Some(selection.words.clone());

        // attack tokenization: adversarial split for selected words
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        let mut relaxed = Vec::new();
        for (w, word) in words.iter().enumerate() {
            let start = ids.len();
            match splits[w].as_ref().filter(|_| selection.words.contains(&w)) {
                Some(split) => {
                    for (i, (&id, role)) in split.subtoken_ids.iter().zip(&split.roles).enumerate()
                    {
                        if *role == Role::Middle && mask[id as usize] {
                            relaxed.push(start + i);
                        }
                        ids.push(id);
                    }
                }
                None => ids.extend(vocab.tokenize(word)),
            }
            spans.push(start..ids.len());
        }
        let goal = target.resolve(&spans)?;
        let mut dist = TokenDistribution::new(
            ids,
            relaxed,
            mask.clone(),
            config.temperature,
            seed::derive(config.seed, k as u64),
            config.noise,
        )?;
        let losses = optimize(model, &mut dist, &goal, config, tables)?;
        iterations += config.max_iter;

        let hard_ids = dist.hard_ids();
        queries += 1;
        let hard_logits = model.logits(&hard_ids)?;
        let hard_loss = goal_loss(&hard_logits, &goal, config.kappa)?;

        let mut adv_words = words.clone();
        let mut changes = Vec::new();
        for &w in &selection.words {
            let piece = &hard_ids[spans[w].clone()];
            let replacement = vocab.detokenize(piece)?;
            changes.push(WordChange {
                index: w,
                original: words[w].clone(),
                edit_distance: edit_distance(&words[w], &replacement),
                attack_ids: piece.to_vec(),
                retokenized_ids: vocab.tokenize(&replacement),
                replacement: replacement.clone(),
            });
            adv_words[w] = replacement;
        }
        changes.sort_by_key(|c| c.index);
        let text = adv_words.join(" ");

        let gate_passed = hard_loss == 0.0;
        let mut verified_prediction = None;
        let mut success = false;
        if gate_passed {
            queries += 1;
            let pred = predict_words(model, vocab, &adv_words, target)?;
            success = pred.iter().zip(&labels).any(|(p, y)| p != y);
            verified_prediction = Some(pred);
        }
        attempts.push(Attempt {
            k,
            words: selection.words,
            shortfall: selection.shortfall,
            text,
            losses,
            hard_loss,
            gate_passed,
            verified_prediction,
            changes,
        });
        if success {
            break;
        }
    }

    let last = attempts.last().expect("at least one attempt runs");
    let success = last
        .verified_prediction
        .as_ref()
        .is_some_and(|p| p.iter().zip(&labels).any(|(p, y)| p != y));
    let best = if success {
        last
    } else {
        attempts
            .iter()
            .min_by(|a, b| a.hard_loss.total_cmp(&b.hard_loss).then(a.k.cmp(&b.k)))
            .expect("non-empty")
    };
    let failure = if success {
        None
    } else if attempts.iter().any(|a| a.gate_passed) {
        Some(FailureKind::TokenizationInconsistency)
    } else {
        Some(FailureKind::Unoptimized)
    };
    Ok(AttackResult {
        schema_version: RESULT_SCHEMA_VERSION,
        example_id: None,
        original_text: words.join(" "),
        adversarial_text: best.text.clone(),
        target: target.clone(),
        success,
        queries,
        k_used: last.k,
        iterations_used: iterations,
        words: best.changes.clone(),
        losses: FinalLosses {
            adv: best.losses.adv,
            vis: best.losses.vis,
            len: best.losses.len,
        },
        failure,
        final_prediction: last.verified_prediction.clone(),
        config: config.clone(),
        attempts,
        timestamp: None,
    })
}

/// Total absolute mass outside `mask`.
pub fn mass_outside(rows: &Array2<f64>, mask: &[bool]) -> f64 {
    rows.axis_iter(Axis(0))
        .map(|r| {
            r.iter()
                .zip(mask)
                .filter(|(_, m)| !**m)
                .map(|(v, _)| v.abs())
                .sum::<f64>()
        })
        .sum()
}
