//! Dataset ingestion (label/text CSV and CoNLL-style tagging files) and the
//! synthetic keyword fixtures used for desk-scale experiments.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Task;
use crate::vocab::{pre_tokenize, Convention, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    /// First word of the entity.
    pub start: usize,
    /// One past the last word.
    pub end: usize,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub tokens: Vec<String>,
    /// Indices into the dataset's tag list, one per token.
    pub tags: Vec<usize>,
    pub spans: Vec<EntitySpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDataset {
    pub labels: Vec<String>,
    pub records: Vec<SentenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDataset {
    pub tags: Vec<String>,
    pub records: Vec<TokenRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Sentence(SentenceDataset),
    Token(TokenDataset),
}

impl Dataset {
    pub fn task(&self) -> Task {
        match self {
            Dataset::Sentence(_) => Task::Sentence,
            Dataset::Token(_) => Task::Token,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Sentence(d) => d.records.len(),
            Dataset::Token(d) => d.records.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class names (sentence task) or tag names (token task).
    pub fn label_names(&self) -> &[String] {
        match self {
            Dataset::Sentence(d) => &d.labels,
            Dataset::Token(d) => &d.tags,
        }
    }

    /// Loads a dataset by task: CSV for sentences, CoNLL for tokens.
    pub fn load(path: impl AsRef<Path>, task: Task) -> Result<Self> {
        match task {
            Task::Sentence => ingest_sentence_csv(path, None).map(Dataset::Sentence),
            Task::Token => ingest_conll(path).map(Dataset::Token),
        }
    }

    pub fn examples(&self, vocab: &Vocabulary) -> Vec<Example> {
        match self {
            Dataset::Sentence(d) => d.examples(vocab),
            Dataset::Token(d) => d.examples(vocab),
        }
    }
}

/// Supervision for one encoded input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    /// Per subtoken position; only the first subtoken of each word is labeled.
    Tags(Vec<Option<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub ids: Vec<TokenId>,
    pub label: Label,
}

impl SentenceDataset {
    pub fn examples(&self, vocab: &Vocabulary) -> Vec<Example> {
        self.records
            .iter()
            .map(|r| Example {
                ids: vocab.encode_words(&pre_tokenize(&r.text)).ids,
                label: Label::Class(r.label),
            })
            .collect()
    }
}

impl TokenRecord {
    pub fn encode(&self, vocab: &Vocabulary) -> Example {
        let enc = vocab.encode_words(&self.tokens);
        let mut tags = vec![None; enc.ids.len()];
        for (span, &t) in enc.word_spans.iter().zip(&self.tags) {
            tags[span.start] = Some(t);
        }
        Example {
            ids: enc.ids,
            label: Label::Tags(tags),
        }
    }
}

impl TokenDataset {
    pub fn examples(&self, vocab: &Vocabulary) -> Vec<Example> {
        self.records.iter().map(|r| r.encode(vocab)).collect()
    }
}

/// Reads a CSV with a `label,text` header. Labels are integers unless
/// `label_map` is given, in which case label strings are looked up in it.
pub fn ingest_sentence_csv(
    path: impl AsRef<Path>,
    label_map: Option<&[String]>,
) -> Result<SentenceDataset> {
    let path = path.as_ref();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != ["label", "text"] {
        return Err(parse_err(
            1,
            format!("expected header label,text, got {cols:?}"),
        ));
    }
    let mut records = Vec::new();
    let mut max_label = 0usize;
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let raw = row.get(0).unwrap_or("").trim();
        let label = match label_map {
            Some(map) => map
                .iter()
                .position(|m| m == raw)
                .ok_or_else(|| parse_err(line, format!("label {raw:?} is not in the label map")))?,
            None => raw
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("label {raw:?} is not an integer")))?,
        };
        max_label = max_label.max(label);
        records.push(SentenceRecord {
            text: row.get(1).unwrap_or("").to_string(),
            label,
        });
    }
    let labels = match label_map {
        Some(map) => map.to_vec(),
        None if records.is_empty() => Vec::new(),
        None => (0..=max_label).map(|l| l.to_string()).collect(),
    };
    Ok(SentenceDataset { labels, records })
}

pub fn write_sentence_csv(path: impl AsRef<Path>, data: &SentenceDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "text"])?;
    for r in &data.records {
        w.write_record([r.label.to_string().as_str(), r.text.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Decodes BIO tags into spans. An `I-X` that does not continue an `X`
/// entity opens a new one.
pub fn decode_bio<S: AsRef<str>>(tags: &[S]) -> (Vec<EntitySpan>, Vec<usize>) {
    let mut spans = Vec::new();
    let mut dangling = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let (prefix, kind) = match tag.split_once('-') {
            Some((p, k)) if p == "B" || p == "I" => (p, k),
            _ => ("O", ""),
        };
        let continues = prefix == "I" && open.as_ref().is_some_and(|s| s.kind == kind);
        if continues {
            if let Some(s) = open.as_mut() {
                s.end = i + 1;
            }
            continue;
        }
        spans.extend(open.take());
        if prefix == "O" {
            continue;
        }
        if prefix == "I" {
            dangling.push(i);
        }
        open = Some(EntitySpan {
            start: i,
            end: i + 1,
            kind: kind.to_string(),
        });
    }
    spans.extend(open);
    (spans, dangling)
}

/// Reads whitespace-separated token lines (token first, tag last), blank
/// lines between sentences. `-DOCSTART-` lines are skipped.
pub fn ingest_conll(path: impl AsRef<Path>) -> Result<TokenDataset> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut sentences: Vec<(usize, Vec<(String, String)>)> = Vec::new();
    let mut cur: Vec<(String, String)> = Vec::new();
    let mut cur_line = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if !cur.is_empty() {
                sentences.push((cur_line, std::mem::take(&mut cur)));
            }
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: "expected a token and a tag".into(),
            });
        }
        if cur.is_empty() {
            cur_line = n + 1;
        }
        cur.push((cols[0].to_string(), cols[cols.len() - 1].to_string()));
    }
    if !cur.is_empty() {
        sentences.push((cur_line, cur));
    }

    let mut tag_set: BTreeSet<String> = BTreeSet::new();
    for (_, s) in &sentences {
        tag_set.extend(s.iter().map(|(_, t)| t.clone()));
    }
    tag_set.remove("O");
    let mut tags = vec!["O".to_string()];
    tags.extend(tag_set);
    let tag_id: HashMap<&str, usize> = tags
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let records = sentences
        .into_iter()
        .map(|(line, s)| {
            let raw: Vec<&str> = s.iter().map(|(_, t)| t.as_str()).collect();
            let (spans, dangling) = decode_bio(&raw);
            for d in dangling {
                log::warn!(
                    "{}:{}: {} does not continue an entity; treated as its start",
                    path.display(),
                    line + d,
                    raw[d]
                );
            }
            TokenRecord {
                tags: raw.iter().map(|t| tag_id[t]).collect(),
                tokens: s.into_iter().map(|(w, _)| w).collect(),
                spans,
            }
        })
        .collect();
    Ok(TokenDataset { tags, records })
}

pub fn write_conll(path: impl AsRef<Path>, data: &TokenDataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (i, r) in data.records.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        for (w, &t) in r.tokens.iter().zip(&r.tags) {
            writeln!(out, "{w} {}", data.tags[t])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// Four classes, decided by planted keywords.
    Sentence4,
    /// PER/LOC/ORG entities marked by planted name pieces.
    TokenNer,
}

impl std::str::FromStr for FixtureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sentence4" => Ok(FixtureKind::Sentence4),
            "token-ner" | "ner" => Ok(FixtureKind::TokenNer),
            _ => Err(Error::InvalidConfig(format!("unknown fixture kind {s:?}"))),
        }
    }
}

const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
/// Marker frames; `_` is the vowel slot. The vowel picks the class.
const FRAMES: [&str; 10] = [
    "z_", "k_", "v_l", "r_n", "t_m", "d_g", "p_s", "br_k", "pl_t", "gr_n",
];
const STARTS: [&str; 24] = [
    "ka", "mo", "pe", "tu", "si", "no", "ra", "le", "di", "fo", "gu", "he", "ja", "wi", "co", "ba",
    "ne", "lu", "ma", "sa", "te", "ro", "ve", "hi",
];
const ENDS: [&str; 12] = [
    "ex", "on", "ar", "us", "el", "or", "is", "an", "um", "et", "ix", "ed",
];
const NEUTRAL_PIECES: [&str; 40] = [
    "ent", "ist", "ous", "ing", "ment", "ness", "tion", "ful", "ish", "ly", "ive", "ure", "ory",
    "ant", "ine", "ard", "ick", "ock", "est", "ial", "ble", "ter", "der", "ner", "ler", "ling",
    "ward", "hood", "ship", "dom", "ism", "wy", "xy", "ft", "ck", "ng", "th", "sh", "ch", "ph",
];
const FILLERS: [&str; 48] = [
    "the", "a", "movie", "was", "and", "very", "this", "story", "plot", "really", "but", "with",
    "of", "to", "is", "it", "in", "for", "on", "that", "film", "show", "we", "they", "some",
    "more", "just", "all", "time", "people", "about", "from", "by", "at", "an", "one", "after",
    "there", "when", "what", "who", "had", "have", "been", "were", "new", "said", "over",
];
const NER_TYPES: [(&str, usize); 3] = [("PER", 0), ("LOC", 1), ("ORG", 3)];

fn marker(frame: &str, vowel: char) -> String {
    frame.replace('_', &vowel.to_string())
}

fn all_markers() -> impl Iterator<Item = String> {
    FRAMES
        .iter()
        .flat_map(|f| VOWELS.iter().map(move |&v| marker(f, v)))
}

/// The fixed WordPiece vocabulary shared by both fixtures.
pub fn fixture_vocab_tokens() -> Vec<String> {
    let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    let mut push = |t: String, tokens: &mut Vec<String>| {
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    };
    for p in [".", ",", "!", "?", "'", "-"] {
        push(p.to_string(), &mut tokens);
    }
    for c in ('a'..='z').chain('0'..='9') {
        push(c.to_string(), &mut tokens);
        push(format!("##{c}"), &mut tokens);
    }
    for w in FILLERS {
        push(w.to_string(), &mut tokens);
    }
    for s in STARTS {
        push(s.to_string(), &mut tokens);
    }
    for e in ENDS {
        push(format!("##{e}"), &mut tokens);
    }
    for m in all_markers() {
        push(format!("##{m}"), &mut tokens);
    }
    for p in NEUTRAL_PIECES {
        push(format!("##{p}"), &mut tokens);
    }
    // two-letter attachables, consonant-vowel and vowel-consonant
    let cons = "bcdfghjklmnprstvwz";
    for c in cons.chars() {
        for v in VOWELS {
            push(format!("##{c}{v}"), &mut tokens);
        }
    }
    for v in VOWELS {
        for c in "lnrst".chars() {
            push(format!("##{v}{c}"), &mut tokens);
        }
    }
    // digit and letter lookalikes
    for p in [
        "11", "1l", "l1", "ll", "0o", "o0", "00", "oo", "rn", "m", "vv", "w",
    ] {
        push(format!("##{p}"), &mut tokens);
    }
    tokens
}

pub fn fixture_vocab() -> Vocabulary {
    Vocabulary::from_tokens(fixture_vocab_tokens(), Convention::WordPiece)
        .expect("fixture vocabulary is well formed")
}

pub fn write_vocab(path: impl AsRef<Path>, tokens: &[String]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for t in tokens {
        writeln!(out, "{t}")?;
    }
    out.flush()?;
    Ok(())
}

/// A planted word: START + marker + END that both tokenizers split into
/// exactly those three pieces, for every vowel of its frame.
#[derive(Debug, Clone)]
struct PlantedForm {
    start: &'static str,
    frame: &'static str,
    end: &'static str,
}

impl PlantedForm {
    fn word(&self, vowel: char) -> String {
        format!("{}{}{}", self.start, marker(self.frame, vowel), self.end)
    }
}

fn planted_forms(vocab: &Vocabulary) -> Vec<PlantedForm> {
    let mut forms = Vec::new();
    for start in STARTS {
        for frame in FRAMES {
            for end in ENDS {
                let form = PlantedForm { start, frame, end };
                let ok = VOWELS.iter().all(|&v| {
                    let w = form.word(v);
                    let want = [
                        vocab.id(start),
                        vocab.id(&format!("##{}", marker(frame, v))),
                        vocab.id(&format!("##{end}")),
                    ];
                    let Some(want) = want.into_iter().collect::<Option<Vec<_>>>() else {
                        return false;
                    };
                    let adv = vocab.adv_tokenize(&w).map(|t| t.subtoken_ids);
                    vocab.tokenize(&w) == want && adv.ok().as_deref() == Some(&want[..])
                });
                if ok {
                    forms.push(form);
                }
            }
        }
    }
    forms
}

/// Words that mark a class or entity type, e.g. for checking rankings.
pub fn is_planted_keyword(word: &str, vowels: &[char]) -> bool {
    FRAMES.iter().any(|f| {
        vowels.iter().any(|&v| {
            let m = marker(f, v);
            STARTS.iter().any(|s| {
                word.strip_prefix(s)
                    .and_then(|rest| rest.strip_prefix(m.as_str()))
                    .is_some_and(|rest| ENDS.contains(&rest))
            })
        })
    })
}

/// Whether a word carries one of the four sentence-class markers.
pub fn is_sentence_keyword(word: &str) -> bool {
    is_planted_keyword(word, &VOWELS[..4])
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub vocab_tokens: Vec<String>,
    pub dataset: Dataset,
}

impl Fixture {
    /// Writes `vocab.txt` and `data.csv` or `data.conll` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_vocab(dir.join("vocab.txt"), &self.vocab_tokens)?;
        match &self.dataset {
            Dataset::Sentence(d) => write_sentence_csv(dir.join("data.csv"), d),
            Dataset::Token(d) => write_conll(dir.join("data.conll"), d),
        }
    }
}

fn filler_word(rng: &mut ChaCha8Rng, forms: &[PlantedForm]) -> String {
    if rng.gen_bool(0.25) {
        // neutral piece word: a planted shape with the neutral vowel or a
        // neutral attachable in the middle
        let f = &forms[rng.gen_range(0..forms.len())];
        if rng.gen_bool(0.5) {
            return f.word('u');
        }
        let mid = NEUTRAL_PIECES[rng.gen_range(0..NEUTRAL_PIECES.len())];
        return format!("{}{}{}", f.start, mid, f.end);
    }
    FILLERS[rng.gen_range(0..FILLERS.len())].to_string()
}

/// Deterministic synthetic dataset of `size` records.
pub fn generate_fixture(kind: FixtureKind, size: usize, seed: u64) -> Fixture {
    let vocab = fixture_vocab();
    let forms = planted_forms(&vocab);
    assert!(
        !forms.is_empty(),
        "fixture vocabulary admits no planted words"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = match kind {
        FixtureKind::Sentence4 => {
            let mut labels: Vec<usize> = (0..size).map(|i| i % 4).collect();
            labels.shuffle(&mut rng);
            let records = labels
                .into_iter()
                .map(|label| {
                    let keywords = match rng.gen_range(0..10) {
                        0..=4 => 1,
                        5..=7 => 2,
                        _ => 3,
                    };
                    let fillers = rng.gen_range(3..=6);
                    let mut words: Vec<String> = (0..keywords)
                        .map(|_| forms[rng.gen_range(0..forms.len())].word(VOWELS[label]))
                        .collect();
                    words.extend((0..fillers).map(|_| filler_word(&mut rng, &forms)));
                    words.shuffle(&mut rng);
                    let mut text = words.join(" ");
                    if rng.gen_bool(0.3) {
                        text.push_str(" .");
                    }
                    SentenceRecord { text, label }
                })
                .collect();
            Dataset::Sentence(SentenceDataset {
                labels: (0..4).map(|l| l.to_string()).collect(),
                records,
            })
        }
        FixtureKind::TokenNer => {
            let mut tags = vec!["O".to_string()];
            for (t, _) in NER_TYPES {
                tags.push(format!("B-{t}"));
                tags.push(format!("I-{t}"));
            }
            let records = (0..size)
                .map(|_| {
                    let mut units: Vec<Vec<(String, usize)>> = Vec::new();
                    for _ in 0..rng.gen_range(1..=2) {
                        let ty = rng.gen_range(0..NER_TYPES.len());
                        let vowel = VOWELS[NER_TYPES[ty].1];
                        let len = if rng.gen_bool(0.3) { 2 } else { 1 };
                        units.push(
                            (0..len)
                                .map(|j| {
                                    let f = &forms[rng.gen_range(0..forms.len())];
                                    (f.word(vowel), 1 + 2 * ty + usize::from(j > 0))
                                })
                                .collect(),
                        );
                    }
                    for _ in 0..rng.gen_range(3..=6) {
                        units.push(vec![(filler_word(&mut rng, &forms), 0)]);
                    }
                    units.shuffle(&mut rng);
                    let (tokens, tag_ids): (Vec<String>, Vec<usize>) =
                        units.into_iter().flatten().unzip();
                    let names: Vec<&str> = tag_ids.iter().map(|&t| tags[t].as_str()).collect();
                    let (spans, _) = decode_bio(&names);
                    TokenRecord {
                        tokens,
                        tags: tag_ids,
                        spans,
                    }
                })
                .collect();
            Dataset::Token(TokenDataset { tags, records })
        }
    };
    Fixture {
        vocab_tokens: fixture_vocab_tokens(),
        dataset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bio_decoding() {
        let (spans, dangling) = decode_bio(&["B-ORG", "I-ORG", "O"]);
        assert_eq!(
            spans,
            vec![EntitySpan {
                start: 0,
                end: 2,
                kind: "ORG".into()
            }]
        );
        assert!(dangling.is_empty());
        let (spans, dangling) = decode_bio(&["I-PER", "O", "B-LOC", "I-PER"]);
        assert_eq!(spans.len(), 3);
        assert_eq!(spans[0].start, 0);
        assert_eq!(dangling, vec![0, 3]);
    }

    #[test]
    fn fixture_vocab_is_small_and_unique() {
        let toks = fixture_vocab_tokens();
        assert!(toks.len() <= 1000, "{}", toks.len());
        let v = fixture_vocab();
        assert_eq!(v.len(), toks.len());
        assert!(planted_forms(&v).len() > 100);
    }

    #[test]
    fn sentence_fixture_is_balanced_and_deterministic() {
        let a = generate_fixture(FixtureKind::Sentence4, 1000, 5);
        let b = generate_fixture(FixtureKind::Sentence4, 1000, 5);
        let (Dataset::Sentence(da), Dataset::Sentence(db)) = (&a.dataset, &b.dataset) else {
            panic!("wrong kind")
        };
        assert_eq!(da, db);
        assert_eq!(da.records.len(), 1000);
        let mut counts = [0usize; 4];
        for r in &da.records {
            counts[r.label] += 1;
        }
        assert!(counts.iter().all(|&c| (249..=251).contains(&c)));
        for r in &da.records {
            let words = pre_tokenize(&r.text);
            assert!(words
                .iter()
                .any(|w| is_planted_keyword(w, &[VOWELS[r.label]])));
        }
    }

    #[test]
    fn ner_fixture_tags_line_up() {
        let f = generate_fixture(FixtureKind::TokenNer, 50, 1);
        let Dataset::Token(d) = &f.dataset else {
            panic!()
        };
        for r in &d.records {
            assert_eq!(r.tokens.len(), r.tags.len());
            assert!(!r.spans.is_empty());
        }
    }
}
