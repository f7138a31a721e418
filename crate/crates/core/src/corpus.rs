//! Labeled text corpora: JSON-lines ingestion, tokenization, vocabularies,
//! encoding and seeded ratio subsampling.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::seed;

pub type TokenId = u32;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const PAD: &str = "[PAD]";

pub const CLS_ID: TokenId = 0;
pub const SEP_ID: TokenId = 1;
pub const MASK_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const PAD_ID: TokenId = 4;

pub const SPECIAL_TOKENS: [&str; 5] = [CLS, SEP, MASK, UNK, PAD];

pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: unknown label `{label}` (allowed: {})", allowed.join(", "))]
    UnknownLabel {
        line: usize,
        label: String,
        allowed: Vec<String>,
    },
    #[error("line {line}: text is empty after tokenization")]
    EmptyText { line: usize },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{id}` has label {label} but the corpus has {num_labels} labels")]
    LabelOutOfRange {
        id: String,
        label: usize,
        num_labels: usize,
    },
    #[error("ratio {0}% is outside [0, 1]")]
    InvalidRatio(f64),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub segment_a: Vec<String>,
    pub segment_b: Option<Vec<String>>,
    pub label: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, segment_a: Vec<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            segment_a,
            segment_b: None,
            label,
        }
    }

    pub fn pair(id: impl Into<String>, segment_a: Vec<String>, segment_b: Vec<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            segment_a,
            segment_b: Some(segment_b),
            label,
        }
    }

    /// All text tokens of both segments, without special markers.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.segment_a
            .iter()
            .chain(self.segment_b.iter().flatten())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    documents: Vec<Document>,
    labels: Vec<String>,
    split_name: String,
}

impl LabeledCorpus {
    pub fn new(documents: Vec<Document>, labels: Vec<String>, split_name: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if doc.label >= labels.len() {
                return Err(CorpusError::LabelOutOfRange {
                    id: doc.id.clone(),
                    label: doc.label,
                    num_labels: labels.len(),
                });
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self {
            documents,
            labels,
            split_name: split_name.into(),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// A corpus holding the documents at `indices`, in the given order.
    pub fn select(&self, indices: &[usize], split_name: impl Into<String>) -> LabeledCorpus {
        LabeledCorpus {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            labels: self.labels.clone(),
            split_name: split_name.into(),
        }
    }
}

/// Maps JSON record fields onto documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    /// Field holding the first (or only) text segment.
    pub text: String,
    /// Field holding the second segment for sentence-pair tasks.
    pub text_b: Option<String>,
    pub label: String,
    /// Optional id field; line numbers are used when absent.
    pub id: Option<String>,
    /// Fixed label order. When absent, labels are numbered in discovery order.
    pub labels: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            text: "text".into(),
            text_b: None,
            label: "label".into(),
            id: None,
            labels: None,
        }
    }
}

impl Schema {
    pub fn pair(text_a: &str, text_b: &str, label: &str) -> Self {
        Self {
            text: text_a.into(),
            text_b: Some(text_b.into()),
            label: label.into(),
            ..Self::default()
        }
    }
}

/// Load a JSON-lines dataset. Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_jsonl(path: &Path, schema: &Schema) -> Result<LabeledCorpus> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let split_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_jsonl(BufReader::new(file), schema, &split_name).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_jsonl<R: BufRead>(reader: R, schema: &Schema, split_name: &str) -> Result<LabeledCorpus> {
    let fixed = schema.labels.is_some();
    let mut labels: Vec<String> = schema.labels.clone().unwrap_or_default();
    let mut documents = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(fields) = record else {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };

        let text_field = |name: &str| -> Result<String> {
            match fields.get(name) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("field `{name}` is not a string"),
                }),
                None => Err(CorpusError::MissingField {
                    line: line_no,
                    field: name.to_string(),
                }),
            }
        };

        let segment_a = tokenize(&text_field(&schema.text)?);
        if segment_a.is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        let segment_b = match &schema.text_b {
            Some(name) => Some(tokenize(&text_field(name)?)),
            None => None,
        };

        let raw_label = match fields.get(&schema.label) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(Value::Bool(b)) => b.to_string(),
            Some(_) => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("field `{}` is not a scalar", schema.label),
                })
            }
            None => {
                return Err(CorpusError::MissingField {
                    line: line_no,
                    field: schema.label.clone(),
                })
            }
        };
        let label = match labels.iter().position(|l| *l == raw_label) {
            Some(i) => i,
            None if fixed => {
                return Err(CorpusError::UnknownLabel {
                    line: line_no,
                    label: raw_label,
                    allowed: labels,
                })
            }
            None => {
                labels.push(raw_label);
                labels.len() - 1
            }
        };

        let id = match &schema.id {
            Some(name) => match fields.get(name) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => {
                    return Err(CorpusError::MissingField {
                        line: line_no,
                        field: name.clone(),
                    })
                }
            },
            None => line_no.to_string(),
        };

        documents.push(Document {
            id,
            segment_a,
            segment_b,
            label,
        });
    }

    LabeledCorpus::new(documents, labels, split_name)
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercase, split on whitespace, then peel leading and trailing punctuation
/// characters off into their own tokens. Inner punctuation ("don't") stays.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars.iter().position(|&c| !is_punct(c));
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|&c| !is_punct(c)).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

/// Bidirectional token/id map with corpus frequencies.
///
/// Ids 0..5 are the special markers; the rest are ordered by ascending
/// frequency, then lexicographically, so an id doubles as a frequency rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequency: Vec<u64>,
    id_of: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    frequency: Vec<u64>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(repr: VocabularyRepr) -> Self {
        Vocabulary::from_parts(repr.tokens, repr.frequency)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(vocab: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: vocab.tokens,
            frequency: vocab.frequency,
        }
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, frequency: Vec<u64>) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            tokens,
            frequency,
            id_of,
        }
    }

    /// A vocabulary holding only the special markers.
    pub fn specials_only() -> Self {
        Self::from_parts(
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            vec![0; SPECIAL_TOKENS.len()],
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn frequency(&self, id: TokenId) -> u64 {
        self.frequency[id as usize]
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequency
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// SHA-256 over the token list, used to pair checkpoints with vocabularies.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update((token.len() as u64).to_le_bytes());
            hasher.update(token.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }
}

pub fn build_vocabulary(corpus: &LabeledCorpus, min_freq: u64) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus.documents() {
        for token in doc.tokens() {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !SPECIAL_TOKENS.contains(&t))
        .collect();
    kept.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut frequency = vec![0; SPECIAL_TOKENS.len()];
    for (t, c) in kept {
        tokens.push(t.to_string());
        frequency.push(c);
    }
    Vocabulary::from_parts(tokens, frequency)
}

/// `[CLS] a.. [SEP] (b.. [SEP])`, truncated to `max_len` with the final `[SEP]` kept.
pub fn encode(document: &Document, vocab: &Vocabulary, max_len: usize) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(document.segment_a.len() + 3);
    ids.push(CLS_ID);
    ids.extend(document.segment_a.iter().map(|t| vocab.id_or_unk(t)));
    if let Some(b) = &document.segment_b {
        ids.push(SEP_ID);
        ids.extend(b.iter().map(|t| vocab.id_or_unk(t)));
    }
    ids.push(SEP_ID);
    if ids.len() > max_len {
        ids.truncate(max_len.saturating_sub(1));
        ids.push(SEP_ID);
    }
    ids
}

/// Ratios are resolved at 1e-6 percent so that sizes are computed in exact
/// integer arithmetic.
const RATIO_SCALE: u128 = 1_000_000;

/// floor(n * r / 100), exact for ratios with at most six decimals.
pub fn subsample_size(n: usize, ratio_percent: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio_percent) {
        return Err(CorpusError::InvalidRatio(ratio_percent));
    }
    let scaled = (ratio_percent * RATIO_SCALE as f64).round() as u128;
    Ok((n as u128 * scaled / (100 * RATIO_SCALE)) as usize)
}

/// Indices of a uniform sample without replacement, returned in ascending order.
pub fn subsample_indices(n: usize, ratio_percent: f64, seed: u64) -> Result<Vec<usize>> {
    let amount = subsample_size(n, ratio_percent)?;
    let mut rng = seed::rng(seed);
    let mut picked = index::sample(&mut rng, n, amount).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub fn subsample(corpus: &LabeledCorpus, ratio_percent: f64, seed: u64) -> Result<LabeledCorpus> {
    let picked = subsample_indices(corpus.len(), ratio_percent, seed)?;
    Ok(corpus.select(&picked, format!("{}@{}%", corpus.split_name(), ratio_percent)))
}

/// Per-label document counts, indexed by label id.
pub fn label_counts(corpus: &LabeledCorpus) -> Vec<usize> {
    let mut counts = vec![0; corpus.num_labels()];
    for doc in corpus.documents() {
        counts[doc.label] += 1;
    }
    counts
}
