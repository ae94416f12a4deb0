//! Subword vocabularies, greedy longest-match tokenization and the
//! start/middle/end split used to pick substitutable subtokens.
//!
//! Three prefix conventions are supported. WordPiece marks *attachable*
//! pieces (`##ing`), while byte-level BPE (`Ġword`) and SentencePiece
//! (`▁word`) mark *word-start* pieces. Internally every token is reduced to
//! its marker-free surface text plus an attachable flag, so callers never
//! need to know which convention a vocabulary uses.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Token id: the zero-based line index in the vocabulary file.
pub type TokenId = u32;

const UNK_CANDIDATES: [&str; 3] = ["[UNK]", "<unk>", "<UNK>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Convention {
    /// `##` prefix on attachable pieces (BERT).
    WordPiece,
    /// `Ġ` prefix on word-start pieces (RoBERTa, GPT-2).
    ByteLevel,
    /// `▁` prefix on word-start pieces (XLNet, ALBERT).
    SentencePiece,
}

impl Convention {
    pub fn marker(self) -> &'static str {
        match self {
            Convention::WordPiece => "##",
            Convention::ByteLevel => "Ġ",
            Convention::SentencePiece => "▁",
        }
    }

    /// True when the marker sits on attachable pieces rather than on
    /// word-start pieces.
    pub fn marks_attachable(self) -> bool {
        matches!(self, Convention::WordPiece)
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::WordPiece => "wordpiece",
            Convention::ByteLevel => "bytelevel",
            Convention::SentencePiece => "sentencepiece",
        })
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "##" | "wordpiece" | "bert" => Ok(Convention::WordPiece),
            "Ġ" | "ġ" | "bytelevel" | "roberta" | "gpt2" => Ok(Convention::ByteLevel),
            "▁" | "sentencepiece" | "xlnet" | "albert" => Ok(Convention::SentencePiece),
            _ => Err(Error::UnknownConvention(s.to_string())),
        }
    }
}

/// Special tokens are bracketed markers such as `[CLS]` or `<pad>`.
pub fn is_special_token(token: &str) -> bool {
    let n = token.chars().count();
    n > 2
        && ((token.starts_with('[') && token.ends_with(']'))
            || (token.starts_with('<') && token.ends_with('>')))
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    convention: Convention,
    attachable: Vec<bool>,
    special: Vec<bool>,
    surface: Vec<String>,
    start_index: HashMap<String, TokenId>,
    attach_index: HashMap<String, TokenId>,
    max_chars: usize,
    unk_id: TokenId,
    lowercase: bool,
}

/// Reads a vocabulary file with one token per line.
pub fn load_vocab(path: impl AsRef<Path>, convention: Convention) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let tokens: Vec<String> = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect();
    Vocabulary::build(tokens, convention, path.to_path_buf())
}

impl Vocabulary {
    pub fn from_tokens<S: Into<String>>(
        tokens: impl IntoIterator<Item = S>,
        convention: Convention,
    ) -> Result<Self> {
        let tokens = tokens.into_iter().map(Into::into).collect();
        Self::build(tokens, convention, PathBuf::from("<memory>"))
    }

    fn build(tokens: Vec<String>, convention: Convention, source: PathBuf) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyVocab(source));
        }
        let marker = convention.marker();
        let mut id_of = HashMap::with_capacity(tokens.len());
        let mut attachable = Vec::with_capacity(tokens.len());
        let mut special = Vec::with_capacity(tokens.len());
        let mut surface = Vec::with_capacity(tokens.len());
        let mut start_index = HashMap::new();
        let mut attach_index = HashMap::new();
        let mut max_chars = 0;

        for (i, tok) in tokens.iter().enumerate() {
            let id = i as TokenId;
            if id_of.insert(tok.clone(), id).is_some() {
                return Err(Error::DuplicateToken {
                    path: source,
                    line: i + 1,
                    token: tok.clone(),
                });
            }
            let has_marker = tok.starts_with(marker);
            let is_attachable = has_marker == convention.marks_attachable();
            let is_special = is_special_token(tok);
            let text = if has_marker {
                tok[marker.len()..].to_string()
            } else {
                tok.clone()
            };
            if !is_special && !text.is_empty() {
                max_chars = max_chars.max(text.chars().count());
                let index = if is_attachable {
                    &mut attach_index
                } else {
                    &mut start_index
                };
                // lowest id wins among identical surfaces
                index.entry(text.clone()).or_insert(id);
            }
            attachable.push(is_attachable);
            special.push(is_special);
            surface.push(if is_special { String::new() } else { text });
        }

        let unk_id = UNK_CANDIDATES
            .iter()
            .find_map(|u| id_of.get(*u).copied())
            .ok_or_else(|| Error::MissingUnk(UNK_CANDIDATES.join(", ")))?;

        Ok(Self {
            tokens,
            id_of,
            convention,
            attachable,
            special,
            surface,
            start_index,
            attach_index,
            max_chars,
            unk_id,
            lowercase: false,
        })
    }

    /// Lowercase words before tokenizing them.
    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn unk_token(&self) -> &str {
        &self.tokens[self.unk_id as usize]
    }

    pub fn attachable_mask(&self) -> &[bool] {
        &self.attachable
    }

    pub fn is_attachable(&self, id: TokenId) -> bool {
        self.attachable.get(id as usize).copied().unwrap_or(false)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.get(id as usize).copied().unwrap_or(false)
    }

    /// Marker-free text of a token; empty for special tokens.
    pub fn surface(&self, id: TokenId) -> &str {
        &self.surface[id as usize]
    }

    /// Tokens a substitution may use: attachable, non-special, non-empty.
    pub fn candidate_mask(&self) -> Vec<bool> {
        (0..self.len())
            .map(|i| self.attachable[i] && !self.special[i] && !self.surface[i].is_empty())
            .collect()
    }

    /// Stable content hash used to key derived caches.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.convention.to_string().as_bytes());
        for t in &self.tokens {
            h.update([0u8]);
            h.update(t.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn normalize<'a>(&self, word: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase {
            std::borrow::Cow::Owned(word.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(word)
        }
    }

    /// Greedy longest-match-first segmentation of a single word. Returns the
    /// unknown-token id alone when some position cannot be matched.
    pub fn tokenize(&self, word: &str) -> Vec<TokenId> {
        let word = self.normalize(word);
        let chars: Vec<char> = word.chars().collect();
        self.greedy(&chars, true)
            .unwrap_or_else(|| vec![self.unk_id])
    }

    /// Greedy segmentation where every piece (including the first) must be
    /// attachable. `None` when the text cannot be covered.
    pub fn tokenize_attached(&self, text: &str) -> Option<Vec<TokenId>> {
        let chars: Vec<char> = text.chars().collect();
        self.greedy(&chars, false)
    }

    fn greedy(&self, chars: &[char], word_start: bool) -> Option<Vec<TokenId>> {
        if chars.is_empty() {
            return None;
        }
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let index = if pos == 0 && word_start {
                &self.start_index
            } else {
                &self.attach_index
            };
            let longest = (chars.len() - pos).min(self.max_chars);
            let found = (1..=longest).rev().find_map(|n| {
                let piece: String = chars[pos..pos + n].iter().collect();
                index.get(&piece).map(|&id| (id, n))
            });
            let (id, n) = found?;
            out.push(id);
            pos += n;
        }
        Some(out)
    }

    /// Splits a word into a longest START piece, middle pieces and a longest
    /// END piece, with the middle pieces as the replaceable positions.
    ///
    /// START and END are each confined to strictly less than half of the
    /// word, so at least one middle character always remains.
    pub fn adv_tokenize(&self, word: &str) -> Result<TokenizedWord> {
        let infeasible = || Error::SplitInfeasible(word.to_string());
        let norm = self.normalize(word);
        let chars: Vec<char> = norm.chars().collect();
        let n = chars.len();
        if n < 3 {
            return Err(infeasible());
        }
        let half = (n - 1) / 2;

        let (start_id, start_len) = (1..=half.min(self.max_chars))
            .rev()
            .find_map(|len| {
                let piece: String = chars[..len].iter().collect();
                self.start_index.get(&piece).map(|&id| (id, len))
            })
            .ok_or_else(infeasible)?;

        let end = (1..=half.min(self.max_chars)).rev().find_map(|len| {
            let piece: String = chars[n - len..].iter().collect();
            self.attach_index.get(&piece).map(|&id| (id, len))
        });
        let end_len = end.map_or(0, |(_, len)| len);

        let middle: String = chars[start_len..n - end_len].iter().collect();
        let middle_ids = self.tokenize_attached(&middle).ok_or_else(infeasible)?;

        let mut ids = Vec::with_capacity(middle_ids.len() + 2);
        let mut roles = Vec::with_capacity(middle_ids.len() + 2);
        ids.push(start_id);
        roles.push(Role::Start);
        for id in middle_ids {
            ids.push(id);
            roles.push(Role::Middle);
        }
        if let Some((end_id, _)) = end {
            ids.push(end_id);
            roles.push(Role::End);
        }
        if ids.len() < 3 {
            return Err(infeasible());
        }
        let replaceable_positions = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Role::Middle)
            .map(|(i, _)| i)
            .collect();
        Ok(TokenizedWord {
            word: norm.into_owned(),
            subtoken_ids: ids,
            roles,
            replaceable_positions,
        })
    }

    /// Concatenates surfaces with continuation markers removed.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id as usize >= self.len() {
                return Err(Error::IdOutOfRange {
                    id,
                    size: self.len(),
                });
            }
            if self.special[id as usize] {
                out.push_str(&self.tokens[id as usize]);
            } else {
                out.push_str(&self.surface[id as usize]);
            }
        }
        Ok(out)
    }

    /// Tokenizes pre-split words and records which subtoken positions each
    /// word occupies.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Encoding {
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let start = ids.len();
            ids.extend(self.tokenize(w.as_ref()));
            spans.push(start..ids.len());
        }
        Encoding {
            ids,
            word_spans: spans,
        }
    }

    /// Counts attachable pieces made only of `a`-`z`, per character length,
    /// against the 26^len possible strings of that length.
    pub fn subword_length_census(&self) -> Vec<CensusRow> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for i in 0..self.len() {
            if !self.attachable[i] || self.special[i] {
                continue;
            }
            let s = &self.surface[i];
            if !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase()) {
                *counts.entry(s.len()).or_default() += 1;
            }
        }
        let longest = counts.keys().copied().max().unwrap_or(0).clamp(5, 27);
        (1..=longest)
            .map(|length| {
                let count = counts.get(&length).copied().unwrap_or(0);
                let potential = 26u128.pow(length as u32);
                CensusRow {
                    length,
                    count,
                    potential,
                    ratio: count as f64 / potential as f64,
                }
            })
            .collect()
    }
}

/// Splits text into words on whitespace and isolates ASCII punctuation.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    /// Subtoken positions of each word, in word order.
    pub word_spans: Vec<Range<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Start,
    Middle,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedWord {
    pub word: String,
    pub subtoken_ids: Vec<TokenId>,
    pub roles: Vec<Role>,
    pub replaceable_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusRow {
    pub length: usize,
    pub count: usize,
    pub potential: u128,
    pub ratio: f64,
}

/// Renders census rows as a tab-separated table with a header line.
pub fn census_tsv(rows: &[CensusRow]) -> String {
    let mut out = String::from("length\tcount\tpotential\tratio\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6e}\n",
            r.length, r.count, r.potential, r.ratio
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small() -> Vocabulary {
        Vocabulary::from_tokens(
            [
                "[PAD]", "[UNK]", "bo", "##sf", "##on", "##lon", "##sl", "da", "dal", "##ll",
                "##as", "##las", "##l", "##a", "##s", "boston", "d",
            ],
            Convention::WordPiece,
        )
        .unwrap()
    }

    #[test]
    fn load_reads_mask_and_is_deterministic() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\nb\n##c\n[UNK]").unwrap();
        let v = load_vocab(f.path(), Convention::WordPiece).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.attachable_mask(), &[false, false, true, false]);
        let again = load_vocab(f.path(), Convention::WordPiece).unwrap();
        assert_eq!(v.tokens(), again.tokens());
        assert_eq!(v.id("##c"), Some(2));
        assert_eq!(v.unk_token(), "[UNK]");
    }

    #[test]
    fn load_rejects_duplicates_and_empty_files() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\n[UNK]\na").unwrap();
        match load_vocab(f.path(), Convention::WordPiece) {
            Err(Error::DuplicateToken { line, token, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(token, "a");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
        let empty = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(
            load_vocab(empty.path(), Convention::WordPiece),
            Err(Error::EmptyVocab(_))
        ));
    }

    #[test]
    fn start_prefix_conventions_flip_the_mask() {
        let v = Vocabulary::from_tokens(["<unk>", "▁the", "ing", "▁"], Convention::SentencePiece)
            .unwrap();
        assert_eq!(v.attachable_mask(), &[true, false, true, false]);
        assert!(v.is_special(0));
        assert_eq!(v.surface(1), "the");
        let bpe = Vocabulary::from_tokens(["<unk>", "Ġword", "s"], Convention::ByteLevel).unwrap();
        assert_eq!(bpe.tokenize("words"), vec![1, 2]);
        assert_eq!(bpe.detokenize(&[1, 2]).unwrap(), "words");
    }

    #[test]
    fn greedy_tokenize() {
        let v = small();
        let ids = v.tokenize("bosfon");
        let toks: Vec<_> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["bo", "##sf", "##on"]);
        assert_eq!(v.tokenize("boston"), vec![v.id("boston").unwrap()]);
        assert_eq!(v.tokenize("bo!"), vec![v.unk_id()]);
        assert_eq!(v.detokenize(&v.tokenize("bosfon")).unwrap(), "bosfon");
    }

    #[test]
    fn adv_tokenize_dallas() {
        let v = small();
        let t = v.adv_tokenize("dallas").unwrap();
        let toks: Vec<_> = t
            .subtoken_ids
            .iter()
            .map(|&i| v.token(i).unwrap())
            .collect();
        assert_eq!(toks, ["da", "##ll", "##as"]);
        assert_eq!(t.roles, [Role::Start, Role::Middle, Role::End]);
        assert_eq!(t.replaceable_positions, [1]);
        assert_eq!(v.detokenize(&t.subtoken_ids).unwrap(), "dallas");
    }

    #[test]
    fn adv_tokenize_rejects_short_and_uncoverable() {
        let v = small();
        assert!(matches!(
            v.adv_tokenize("ab"),
            Err(Error::SplitInfeasible(_))
        ));
        assert!(matches!(
            v.adv_tokenize("xyzzy"),
            Err(Error::SplitInfeasible(_))
        ));
    }

    #[test]
    fn detokenize_rejects_bad_ids() {
        let v = small();
        assert!(matches!(
            v.detokenize(&[99]),
            Err(Error::IdOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn census_on_tiny_and_empty_sets() {
        let v = small();
        let rows = v.subword_length_census();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].count, 3); // ##l ##a ##s
        assert_eq!(rows[1].count, 5); // ##sf ##on ##sl ##ll ##as
        assert_eq!(rows[2].count, 2); // ##lon ##las
        assert_eq!(rows[1].potential, 676);
        let none = Vocabulary::from_tokens(["[UNK]", "a", "b"], Convention::WordPiece).unwrap();
        assert!(none.subword_length_census().iter().all(|r| r.count == 0));
        let tsv = census_tsv(&rows);
        assert!(tsv.starts_with("length\tcount\tpotential\tratio\n1\t3\t26\t"));
    }

    #[test]
    fn pre_tokenize_splits_punctuation() {
        assert_eq!(
            pre_tokenize("hi, there!  ok"),
            ["hi", ",", "there", "!", "ok"]
        );
    }
}
