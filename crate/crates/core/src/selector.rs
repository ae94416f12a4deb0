//! Ranks the words of an input by how strongly the adversarial loss reacts
//! to them and picks the attack targets.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{grad_wrt_distribution, one_hot, row_norms, DifferentiableClassifier, Target};
use crate::vocab::{TokenId, TokenizedWord, Vocabulary};

/// L2 norm of the margin-loss gradient at each subtoken position.
pub fn token_grad_norms<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    ids: &[TokenId],
    target: Target,
    y: usize,
    kappa: f64,
) -> Result<Vec<f64>> {
    let dist = one_hot(ids, model.vocab_size());
    let grad = grad_wrt_distribution(model, &dist, target, y, kappa)?;
    Ok(row_norms(&grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRanking {
    /// Word indices, most vulnerable first.
    pub order: Vec<usize>,
    /// Score of each word, indexed by word.
    pub scores: Vec<f64>,
}

/// Scores each word by the mean of its subtokens' norms and sorts words by
/// descending score, breaking ties by position.
pub fn rank_words(word_spans: &[Range<usize>], norms: &[f64]) -> Result<WordRanking> {
    let mut expected = 0;
    for (i, span) in word_spans.iter().enumerate() {
        if span.start != expected || span.is_empty() {
            return Err(Error::AlignmentMismatch(format!(
                "word {i} covers {span:?}, expected a non-empty span starting at {expected}"
            )));
        }
        expected = span.end;
    }
    if expected != norms.len() {
        return Err(Error::AlignmentMismatch(format!(
            "words cover {expected} subtokens but {} norms were given",
            norms.len()
        )));
    }
    let scores: Vec<f64> = word_spans
        .iter()
        .map(|s| norms[s.clone()].iter().sum::<f64>() / s.len() as f64)
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(WordRanking { order, scores })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub words: Vec<usize>,
    /// Fewer than the requested number of eligible words exist.
    pub shortfall: bool,
}

/// The first `k` eligible words in ranking order.
pub fn select_targets(ranking: &WordRanking, k: usize, eligible: &[bool]) -> Result<Selection> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if eligible.len() != ranking.scores.len() {
        return Err(Error::AlignmentMismatch(format!(
            "{} eligibility flags for {} words",
            eligible.len(),
            ranking.scores.len()
        )));
    }
    let words: Vec<usize> = ranking
        .order
        .iter()
        .copied()
        .filter(|&w| eligible[w])
        .take(k)
        .collect();
    Ok(Selection {
        shortfall: words.len() < k,
        words,
    })
}

/// The adversarial split of each word, or `None` for words that cannot be
/// attacked: punctuation, unknown words, and words with no middle piece.
pub fn split_words<S: AsRef<str>>(words: &[S], vocab: &Vocabulary) -> Vec<Option<TokenizedWord>> {
    words
        .iter()
        .map(|w| {
            let w = w.as_ref();
            if w.chars().all(|c| c.is_ascii_punctuation()) {
                return None;
            }
            if vocab.tokenize(w) == [vocab.unk_id()] {
                return None;
            }
            vocab.adv_tokenize(w).ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub index: usize,
    pub word: String,
    pub score: f64,
    pub eligible: bool,
}

/// Ranking in order, for debugging dumps.
pub fn ranking_report<S: AsRef<str>>(
    words: &[S],
    ranking: &WordRanking,
    eligible: &[bool],
) -> Vec<RankingEntry> {
    ranking
        .order
        .iter()
        .map(|&i| RankingEntry {
            index: i,
            word: words[i].as_ref().to_string(),
            score: ranking.scores[i],
            eligible: eligible.get(i).copied().unwrap_or(false),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(lens: &[usize]) -> Vec<Range<usize>> {
        let mut at = 0;
        lens.iter()
            .map(|&l| {
                at += l;
                at - l..at
            })
            .collect()
    }

    #[test]
    fn ranks_by_mean_norm() {
        let r = rank_words(&spans(&[2, 1, 3]), &[3.0, 1.0, 5.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.scores, vec![2.0, 5.0, 2.0]);
        assert_eq!(r.order, vec![1, 0, 2]);
        assert_eq!(rank_words(&spans(&[1]), &[0.3]).unwrap().order, vec![0]);
        let flat = rank_words(&spans(&[1, 1, 1, 1]), &[1.0; 4]).unwrap();
        assert_eq!(flat.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn misaligned_spans_are_rejected() {
        assert!(matches!(
            rank_words(&spans(&[2, 2]), &[1.0; 3]),
            Err(Error::AlignmentMismatch(_))
        ));
        assert!(rank_words(&[0..1, 2..3], &[1.0; 3]).is_err());
    }

    #[test]
    fn selection_skips_and_flags() {
        let r = WordRanking {
            order: vec![2, 0, 1],
            scores: vec![0.5, 0.1, 0.9],
        };
        let all = [true; 3];
        assert_eq!(select_targets(&r, 2, &all).unwrap().words, vec![2, 0]);
        let s = select_targets(&r, 2, &[true, true, false]).unwrap();
        assert_eq!(s.words, vec![0, 1]);
        assert!(!s.shortfall);
        let s = select_targets(&r, 3, &[true, false, false]).unwrap();
        assert_eq!(
            s,
            Selection {
                words: vec![0],
                shortfall: true
            }
        );
        assert!(select_targets(&r, 0, &all).is_err());
    }
}
