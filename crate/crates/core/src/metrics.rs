//! Prediction bias, AOPC faithfulness, local mutual information (LMI) and KL
//! divergence between LMI distributions. All logarithms are natural.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledCorpus, TokenId, Vocabulary};
use crate::explain::{ranked_indices, top_k_features, Attribution};
use crate::models::{ModelError, Predictor};

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_AOPC_U: usize = 10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no test examples: prediction and data counts are empty")]
    NoExamples,
    #[error("prediction counts ({t}) and data counts ({d}) must cover the same examples and labels")]
    CountMismatch { t: String, d: String },
    #[error("no test example carries label {majority} or {minority}; prediction bias is undefined")]
    NoExtremeLabelData { majority: usize, minority: usize },
    #[error("feature pool is empty")]
    EmptyPool,
    #[error("token {0} does not occur in the feature pool")]
    TokenAbsent(TokenId),
    #[error("token {token} is outside the vocabulary of {vocab_size}")]
    TokenOutOfVocabulary { token: TokenId, vocab_size: usize },
    #[error("distributions differ in {0}")]
    Incompatible(&'static str),
    #[error("LMI distribution for label {0} is degenerate (no positive mass)")]
    Degenerate(usize),
    #[error("AOPC needs at least one example")]
    NoAopcExamples,
    #[error("AOPC needs U >= 1")]
    ZeroU,
    #[error("corpus is empty; there is no training-data reference")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReading {
    pub pb: f64,
    pub majority: usize,
    pub minority: usize,
    pub prediction_counts: Vec<u64>,
    pub data_counts: Vec<u64>,
}

/// Most-predicted label; ties go to the lowest id.
pub fn majority_label(prediction_counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in prediction_counts.iter().enumerate() {
        if c > prediction_counts[best] {
            best = i;
        }
    }
    best
}

/// Least-predicted label other than `majority`; ties go to the lowest id.
pub fn minority_label(prediction_counts: &[u64], majority: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, &c) in prediction_counts.iter().enumerate() {
        if i == majority {
            continue;
        }
        if best.is_none_or(|b| c < prediction_counts[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(majority)
}

/// `|(T₁−T₂)/(T₁+T₂) − (D₁−D₂)/(D₁+D₂)|` over the majority and most-minority
/// predicted labels.
pub fn prediction_bias(prediction_counts: &[u64], data_counts: &[u64]) -> Result<BiasReading> {
    let t_total: u64 = prediction_counts.iter().sum();
    let d_total: u64 = data_counts.iter().sum();
    if prediction_counts.len() != data_counts.len() || t_total != d_total {
        return Err(MetricsError::CountMismatch {
            t: format!("{prediction_counts:?}"),
            d: format!("{data_counts:?}"),
        });
    }
    if t_total == 0 {
        return Err(MetricsError::NoExamples);
    }
    let majority = majority_label(prediction_counts);
    let minority = minority_label(prediction_counts, majority);
    let skew = |counts: &[u64]| -> Option<f64> {
        let (a, b) = (counts[majority] as f64, counts[minority] as f64);
        (a + b > 0.0).then(|| (a - b) / (a + b))
    };
    let t_skew = skew(prediction_counts).unwrap_or(0.0);
    let d_skew = skew(data_counts).ok_or(MetricsError::NoExtremeLabelData { majority, minority })?;
    Ok(BiasReading {
        pb: (t_skew - d_skew).abs(),
        majority,
        minority,
        prediction_counts: prediction_counts.to_vec(),
        data_counts: data_counts.to_vec(),
    })
}

/// One explained prediction for AOPC.
#[derive(Debug, Clone, Copy)]
pub struct AopcExample<'a> {
    pub ids: &'a [TokenId],
    pub label: usize,
    pub attribution: &'a Attribution,
}

/// Area over the perturbation curve: mask the top-1..U attributed positions in
/// turn and average the drop in the label's probability, divided by U + 1.
///
/// An example with fewer than U positions repeats its fully-masked drop for
/// the remaining steps.
pub fn aopc(predictor: &dyn Predictor, examples: &[AopcExample<'_>], u: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(MetricsError::NoAopcExamples);
    }
    if u == 0 {
        return Err(MetricsError::ZeroU);
    }
    let mut total = 0.0;
    for ex in examples {
        total += aopc_example(predictor, ex, u)?;
    }
    Ok(total / examples.len() as f64 / (u + 1) as f64)
}

/// Σ_{u=1..U} [p(y|x) − p(y|x without the top-u positions)] for one example.
pub fn aopc_example(predictor: &dyn Predictor, ex: &AopcExample<'_>, u: usize) -> Result<f64> {
    let base = predictor.predict_proba(ex.ids)?[ex.label];
    let order: Vec<usize> = ranked_indices(ex.attribution)
        .into_iter()
        .map(|i| ex.attribution.positions[i])
        .collect();
    let mut x = ex.ids.to_vec();
    let mut sum = 0.0;
    let mut last_delta = 0.0;
    for step in 0..u {
        if let Some(&pos) = order.get(step) {
            x[pos] = crate::corpus::MASK_ID;
            last_delta = base - predictor.predict_proba(&x)?[ex.label];
        }
        sum += last_delta;
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolSource {
    ModelExplanations,
    TrainingData,
}

/// Multiset of (token, label) occurrences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePool {
    pub source: PoolSource,
    num_labels: usize,
    pair_counts: BTreeMap<(TokenId, usize), u64>,
    token_counts: BTreeMap<TokenId, u64>,
    label_counts: Vec<u64>,
    total: u64,
}

impl FeaturePool {
    pub fn new(source: PoolSource, num_labels: usize) -> Self {
        Self {
            source,
            num_labels,
            pair_counts: BTreeMap::new(),
            token_counts: BTreeMap::new(),
            label_counts: vec![0; num_labels],
            total: 0,
        }
    }

    pub fn add(&mut self, token: TokenId, label: usize) {
        *self.pair_counts.entry((token, label)).or_default() += 1;
        *self.token_counts.entry(token).or_default() += 1;
        self.label_counts[label] += 1;
        self.total += 1;
    }

    /// |E|
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn count(&self, token: TokenId) -> u64 {
        self.token_counts.get(&token).copied().unwrap_or(0)
    }

    pub fn count_label(&self, label: usize) -> u64 {
        self.label_counts[label]
    }

    pub fn count_pair(&self, token: TokenId, label: usize) -> u64 {
        self.pair_counts.get(&(token, label)).copied().unwrap_or(0)
    }

    pub fn label_counts(&self) -> &[u64] {
        &self.label_counts
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.token_counts.keys().copied()
    }
}

/// Pool the top-`k` tokens of every attribution under its explained class.
pub fn pool_model_features(attributions: &[Attribution], k: usize, num_labels: usize) -> FeaturePool {
    let mut pool = FeaturePool::new(PoolSource::ModelExplanations, num_labels);
    for a in attributions {
        for token in top_k_features(a, k) {
            pool.add(token, a.class);
        }
    }
    pool
}

/// Every text-token occurrence of every document under its gold label.
/// Special markers are not part of the text and are left out.
pub fn pool_data_features(corpus: &LabeledCorpus, vocab: &Vocabulary) -> Result<FeaturePool> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut pool = FeaturePool::new(PoolSource::TrainingData, corpus.num_labels());
    for doc in corpus.documents() {
        for token in doc.tokens() {
            let id = vocab.id_or_unk(token);
            if !Vocabulary::is_special(id) {
                pool.add(id, doc.label);
            }
        }
    }
    Ok(pool)
}

/// `p(e,y) · ln(p(y|e) / p(y))`, zero when the pair never occurs.
pub fn lmi(pool: &FeaturePool, token: TokenId, label: usize) -> Result<f64> {
    if pool.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    let c_e = pool.count(token);
    if c_e == 0 {
        return Err(MetricsError::TokenAbsent(token));
    }
    let c_ey = pool.count_pair(token, label);
    if c_ey == 0 {
        return Ok(0.0);
    }
    let c_y = pool.count_label(label);
    let total = pool.total();
    // p(y|e)/p(y) = c_ey·|E| / (c_e·c_y); compare exactly before taking logs.
    let num = c_ey as u128 * total as u128;
    let den = c_e as u128 * c_y as u128;
    if num == den {
        return Ok(0.0);
    }
    let p_ey = c_ey as f64 / total as f64;
    Ok(p_ey * (num as f64 / den as f64).ln())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeLmi {
    /// Negative values become 0 before normalization.
    #[default]
    Clamp,
    /// Negative values contribute their magnitude.
    Abs,
}

/// Normalized LMI over the whole vocabulary for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiDistribution {
    pub label: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
    /// No positive mass to normalize; `values` are all zero.
    pub degenerate: bool,
}

impl LmiDistribution {
    /// Up to `n` tokens with positive mass, highest first (ties by ascending id).
    pub fn top_tokens(&self, n: usize) -> Vec<(TokenId, f64)> {
        let mut entries: Vec<(TokenId, f64)> = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| (i as TokenId, v))
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(n);
        entries
    }
}

pub fn lmi_distribution(pool: &FeaturePool, vocab: &Vocabulary, label: usize) -> Result<LmiDistribution> {
    lmi_distribution_with(pool, vocab, label, NegativeLmi::Clamp)
}

pub fn lmi_distribution_with(
    pool: &FeaturePool,
    vocab: &Vocabulary,
    label: usize,
    negative: NegativeLmi,
) -> Result<LmiDistribution> {
    if pool.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    let mut values = vec![0.0; vocab.len()];
    for token in pool.tokens() {
        let slot = values
            .get_mut(token as usize)
            .ok_or(MetricsError::TokenOutOfVocabulary {
                token,
                vocab_size: vocab.len(),
            })?;
        let raw = lmi(pool, token, label)?;
        *slot = match negative {
            NegativeLmi::Clamp => raw.max(0.0),
            NegativeLmi::Abs => raw.abs(),
        };
    }
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        return Ok(LmiDistribution {
            label,
            values,
            normalized: false,
            degenerate: true,
        });
    }
    values.iter_mut().for_each(|v| *v /= sum);
    Ok(LmiDistribution {
        label,
        values,
        normalized: true,
        degenerate: false,
    })
}

/// KL(subject ‖ reference) after adding `epsilon` to every coordinate of both
/// and renormalizing.
pub fn kld(subject: &LmiDistribution, reference: &LmiDistribution, epsilon: f64) -> Result<f64> {
    if subject.values.len() != reference.values.len() {
        return Err(MetricsError::Incompatible("vocabulary"));
    }
    if subject.label != reference.label {
        return Err(MetricsError::Incompatible("label"));
    }
    for d in [subject, reference] {
        if d.degenerate {
            return Err(MetricsError::Degenerate(d.label));
        }
    }
    Ok(kl_smoothed(&subject.values, &reference.values, epsilon))
}

/// Smoothed KL divergence between two non-negative vectors of equal length.
pub fn kl_smoothed(p: &[f64], q: &[f64], epsilon: f64) -> f64 {
    let zp: f64 = p.iter().map(|x| x + epsilon).sum();
    let zq: f64 = q.iter().map(|x| x + epsilon).sum();
    let kl: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let pa = (a + epsilon) / zp;
            let qb = (b + epsilon) / zq;
            if pa == qb {
                0.0
            } else {
                pa * (pa / qb).ln()
            }
        })
        .sum();
    kl.max(0.0)
}

/// Top-k rule keyed on average encoded length: 10 for long-document corpora
/// (≥ 100 tokens), 6 otherwise.
pub fn auto_k(average_length: f64) -> usize {
    if average_length >= 100.0 {
        10
    } else {
        6
    }
}
