//! Post-hoc token attributions.
//!
//! Absent tokens are always *replaced* by `[MASK]`, never deleted, so
//! positions and sequence length stay fixed while features are switched off.
//! `[CLS]` and `[SEP]` are attributable like any other token; `[PAD]` is not.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{TokenId, Vocabulary, MASK_ID, PAD_ID};
use crate::models::tensor::argmax;
use crate::models::{ModelError, Predictor};
use crate::seed;

/// Largest player count [`exact_shapley`] will enumerate.
pub const EXACT_SHAPLEY_MAX: usize = 12;
pub const DEFAULT_SHAPLEY_SAMPLES: usize = 200;
pub const DEFAULT_IG_STEPS: usize = 100;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("exact Shapley enumerates 2^n coalitions; {n} attributable positions exceeds the limit of {EXACT_SHAPLEY_MAX}")]
    TooManyFeatures { n: usize },
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("{kind} predictors cannot provide {what}")]
    MissingCapability { kind: &'static str, what: &'static str },
    #[error("attribution line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, ExplainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ShapleySampled,
    ShapleyExact,
    IntegratedGradients,
    Attention,
    Occlusion,
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ShapleySampled => "shapley-sampled",
            Method::ShapleyExact => "shapley-exact",
            Method::IntegratedGradients => "integrated-gradients",
            Method::Attention => "attention",
            Method::Occlusion => "occlusion",
            Method::Random => "random",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        serde_json::from_value(Value::String(s.into())).map_err(|_| {
            format!(
                "unknown method `{s}` (expected shapley-sampled, shapley-exact, \
                 integrated-gradients, attention, occlusion or random)"
            )
        })
    }
}

/// Per-token importance scores for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub doc_id: String,
    pub method: Method,
    /// The explained class.
    pub class: usize,
    /// Predicted probability of `class` on the unmasked input.
    pub prob: f64,
    /// Attributable positions in the input sequence.
    pub positions: Vec<usize>,
    /// Token id at each attributable position.
    pub token_ids: Vec<TokenId>,
    pub scores: Vec<f64>,
}

impl Attribution {
    fn new(ids: &[TokenId], method: Method, class: usize, prob: f64, scores: Vec<f64>) -> Self {
        let positions = attributable_positions(ids);
        debug_assert_eq!(positions.len(), scores.len());
        Self {
            doc_id: String::new(),
            method,
            class,
            prob,
            token_ids: positions.iter().map(|&p| ids[p]).collect(),
            positions,
            scores,
        }
    }

    pub fn with_doc_id(mut self, doc_id: impl Into<String>) -> Self {
        self.doc_id = doc_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn tokens(&self, vocab: &Vocabulary) -> Vec<String> {
        vocab.decode(&self.token_ids)
    }

    /// One JSON object with exactly `doc_id, method, class, prob, tokens, scores`.
    /// Floats carry 17 significant digits.
    pub fn to_jsonl_line(&self, vocab: &Vocabulary) -> String {
        let quote = |s: &str| serde_json::to_string(s).expect("strings serialize");
        let mut out = String::new();
        write!(
            out,
            "{{\"doc_id\":{},\"method\":\"{}\",\"class\":{},\"prob\":{},\"tokens\":[",
            quote(&self.doc_id),
            self.method.as_str(),
            self.class,
            float17(self.prob)
        )
        .unwrap();
        for (i, t) in self.tokens(vocab).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&quote(t));
        }
        out.push_str("],\"scores\":[");
        for (i, s) in self.scores.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&float17(*s));
        }
        out.push_str("]}");
        out
    }

    pub fn from_jsonl_line(line: &str, line_no: usize, vocab: &Vocabulary) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Row {
            doc_id: String,
            method: Method,
            class: usize,
            prob: f64,
            tokens: Vec<String>,
            scores: Vec<f64>,
        }
        let parse_err = |message: String| ExplainError::Parse {
            line: line_no,
            message,
        };
        let row: Row = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if row.tokens.len() != row.scores.len() {
            return Err(parse_err(format!(
                "{} tokens but {} scores",
                row.tokens.len(),
                row.scores.len()
            )));
        }
        let token_ids = row.tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
        Ok(Self {
            doc_id: row.doc_id,
            method: row.method,
            class: row.class,
            prob: row.prob,
            positions: (0..row.tokens.len()).collect(),
            token_ids,
            scores: row.scores,
        })
    }
}

/// Scientific notation with 17 significant digits, valid as a JSON number.
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn attributable_positions(ids: &[TokenId]) -> Vec<usize> {
    (0..ids.len()).filter(|&i| ids[i] != PAD_ID).collect()
}

/// `ids` with the listed positions replaced by `[MASK]`.
pub fn mask_positions(ids: &[TokenId], positions: impl IntoIterator<Item = usize>) -> Vec<TokenId> {
    let mut out = ids.to_vec();
    for p in positions {
        out[p] = MASK_ID;
    }
    out
}

/// Probability of `class` when only the players flagged in `present` keep
/// their tokens.
fn coalition_value(
    predictor: &dyn Predictor,
    ids: &[TokenId],
    players: &[usize],
    present: impl Fn(usize) -> bool,
    class: usize,
) -> Result<f64> {
    let mut x = ids.to_vec();
    for (j, &p) in players.iter().enumerate() {
        if !present(j) {
            x[p] = MASK_ID;
        }
    }
    Ok(predictor.predict_proba(&x)?[class])
}

fn class_prob(predictor: &dyn Predictor, ids: &[TokenId], class: usize) -> Result<f64> {
    let probs = predictor.predict_proba(ids)?;
    if class >= probs.len() {
        return Err(ModelError::ClassOutOfRange {
            class,
            num_classes: probs.len(),
        }
        .into());
    }
    Ok(probs[class])
}

/// Permutation-sampling Shapley estimate of each position's contribution to
/// the probability of `class`.
///
/// Permutations are drawn in antithetic pairs (a uniform shuffle followed by
/// its reverse). Each one is still marginally uniform, so the estimate stays
/// unbiased, and for two players an even sample count is exact.
pub fn sampling_shapley(
    predictor: &dyn Predictor,
    ids: &[TokenId],
    class: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Attribution> {
    if num_samples == 0 {
        return Err(ExplainError::ZeroCount("number of Shapley samples"));
    }
    let full = class_prob(predictor, ids, class)?;
    let players = attributable_positions(ids);
    let n = players.len();
    let mut scores = vec![0.0; n];
    if n > 0 {
        let empty = coalition_value(predictor, ids, &players, |_| false, class)?;
        let mut rng = seed::rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        for sample in 0..num_samples {
            // Antithetic pairs: every odd sample walks the previous permutation backwards.
            if sample % 2 == 0 {
                order.shuffle(&mut rng);
            } else {
                order.reverse();
            }
            let mut x = mask_positions(ids, players.iter().copied());
            let mut prev = empty;
            for (step, &j) in order.iter().enumerate() {
                x[players[j]] = ids[players[j]];
                let value = if step + 1 == n {
                    full
                } else {
                    predictor.predict_proba(&x)?[class]
                };
                scores[j] += value - prev;
                prev = value;
            }
        }
        let inv = 1.0 / num_samples as f64;
        scores.iter_mut().for_each(|s| *s *= inv);
    }
    Ok(Attribution::new(ids, Method::ShapleySampled, class, full, scores))
}

/// Exact Shapley values by enumerating every coalition of attributable positions.
pub fn exact_shapley(predictor: &dyn Predictor, ids: &[TokenId], class: usize) -> Result<Attribution> {
    let players = attributable_positions(ids);
    let n = players.len();
    if n > EXACT_SHAPLEY_MAX {
        return Err(ExplainError::TooManyFeatures { n });
    }
    let full = class_prob(predictor, ids, class)?;
    let values = (0u32..1 << n)
        .map(|mask| coalition_value(predictor, ids, &players, |j| mask >> j & 1 == 1, class))
        .collect::<Result<Vec<f64>>>()?;

    // weight(s) = s! (n - s - 1)! / n!
    let factorial = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    let weights: Vec<f64> = (0..n)
        .map(|s| factorial(s) * factorial(n - s - 1) / factorial(n))
        .collect();

    let mut scores = vec![0.0; n];
    for (i, score) in scores.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0u32..1 << n {
            if mask & bit == 0 {
                let size = mask.count_ones() as usize;
                *score += weights[size] * (values[(mask | bit) as usize] - values[mask as usize]);
            }
        }
    }
    Ok(Attribution::new(ids, Method::ShapleyExact, class, full, scores))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IgBaseline {
    /// The zero vector at every position.
    #[default]
    Zero,
    /// The `[MASK]` embedding at every position.
    Mask,
}

/// Integrated gradients of the pre-softmax class score from the zero-embedding
/// baseline, by a right Riemann sum with `steps` points.
pub fn integrated_gradients(
    predictor: &dyn Predictor,
    ids: &[TokenId],
    class: usize,
    steps: usize,
) -> Result<Attribution> {
    integrated_gradients_from(predictor, ids, class, steps, IgBaseline::Zero)
}

pub fn integrated_gradients_from(
    predictor: &dyn Predictor,
    ids: &[TokenId],
    class: usize,
    steps: usize,
    baseline: IgBaseline,
) -> Result<Attribution> {
    let model = predictor
        .differentiable()
        .ok_or(ExplainError::MissingCapability {
            kind: predictor.kind_name(),
            what: "embedding gradients",
        })?;
    if steps == 0 {
        return Err(ExplainError::ZeroCount("integration steps"));
    }
    let prob = class_prob(predictor, ids, class)?;
    let input = model.embed(ids)?;
    let dim = input.first().map_or(0, Vec::len);
    let players = attributable_positions(ids);

    let base_vec = match baseline {
        IgBaseline::Zero => vec![0.0; dim],
        IgBaseline::Mask => model.embedding_of(MASK_ID)?,
    };
    // Non-attributable positions sit at their input embedding along the whole path.
    let start: Vec<Vec<f64>> = (0..ids.len())
        .map(|p| {
            if ids[p] == PAD_ID {
                input[p].clone()
            } else {
                base_vec.clone()
            }
        })
        .collect();

    let mut grad_sum = vec![vec![0.0; dim]; ids.len()];
    for s in 1..=steps {
        let alpha = s as f64 / steps as f64;
        let point: Vec<Vec<f64>> = start
            .iter()
            .zip(&input)
            .map(|(b, x)| b.iter().zip(x).map(|(bi, xi)| bi + alpha * (xi - bi)).collect())
            .collect();
        for (acc, g) in grad_sum
            .iter_mut()
            .zip(model.class_score_gradient_at(&point, class))
        {
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += gi;
            }
        }
    }
    let inv = 1.0 / steps as f64;
    let scores = players
        .iter()
        .map(|&p| {
            input[p]
                .iter()
                .zip(&start[p])
                .zip(&grad_sum[p])
                .map(|((x, b), g)| (x - b) * g * inv)
                .sum()
        })
        .collect();
    Ok(Attribution::new(
        ids,
        Method::IntegratedGradients,
        class,
        prob,
        scores,
    ))
}

/// Pooling weights as scores; the explained class is the predicted one.
pub fn attention_explanation(predictor: &dyn Predictor, ids: &[TokenId]) -> Result<Attribution> {
    if !predictor.capabilities().attention {
        return Err(ExplainError::MissingCapability {
            kind: predictor.kind_name(),
            what: "attention weights",
        });
    }
    let probs = predictor.predict_proba(ids)?;
    let class = argmax(&probs);
    let weights = predictor.attention_weights(ids)?;
    let scores = attributable_positions(ids).iter().map(|&p| weights[p]).collect();
    Ok(Attribution::new(
        ids,
        Method::Attention,
        class,
        probs[class],
        scores,
    ))
}

/// Leave-one-out: `f(x) − f(x with position i masked)`.
pub fn occlusion(predictor: &dyn Predictor, ids: &[TokenId], class: usize) -> Result<Attribution> {
    let full = class_prob(predictor, ids, class)?;
    let scores = attributable_positions(ids)
        .into_iter()
        .map(|p| Ok(full - predictor.predict_proba(&mask_positions(ids, [p]))?[class]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Attribution::new(ids, Method::Occlusion, class, full, scores))
}

/// Seeded uniform [0, 1) scores. Class and probability are left at zero for
/// the caller to fill in.
pub fn random_attribution(ids: &[TokenId], seed: u64) -> Attribution {
    let mut rng = seed::rng(seed);
    let n = attributable_positions(ids).len();
    let scores = (0..n).map(|_| rng.gen::<f64>()).collect();
    Attribution::new(ids, Method::Random, 0, 0.0, scores)
}

/// Indices into `attribution.scores`, best first: descending score, then
/// ascending token id, then ascending position.
pub fn ranked_indices(attribution: &Attribution) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..attribution.len()).collect();
    idx.sort_by(|&a, &b| {
        attribution.scores[b]
            .total_cmp(&attribution.scores[a])
            .then_with(|| attribution.token_ids[a].cmp(&attribution.token_ids[b]))
            .then_with(|| attribution.positions[a].cmp(&attribution.positions[b]))
    });
    idx
}

/// Token ids of the `k` highest-scoring positions, duplicates kept.
pub fn top_k_features(attribution: &Attribution, k: usize) -> Vec<TokenId> {
    ranked_indices(attribution)
        .into_iter()
        .take(k)
        .map(|i| attribution.token_ids[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub method: Method,
    /// Permutations per example for sampled Shapley.
    pub samples: usize,
    pub ig_steps: usize,
    pub ig_baseline: IgBaseline,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            method: Method::ShapleySampled,
            samples: DEFAULT_SHAPLEY_SAMPLES,
            ig_steps: DEFAULT_IG_STEPS,
            ig_baseline: IgBaseline::Zero,
        }
    }
}

/// Explain the predicted class of one example.
///
/// The RNG stream is derived from `(root_seed, doc_id)`, so results do not
/// depend on which worker handles the example.
pub fn explain_prediction(
    predictor: &dyn Predictor,
    config: &ExplainConfig,
    doc_id: &str,
    ids: &[TokenId],
    root_seed: u64,
) -> Result<Attribution> {
    let probs = predictor.predict_proba(ids)?;
    let class = argmax(&probs);
    let example_seed = seed::derive(root_seed, &["explain", doc_id]);
    let attribution = match config.method {
        Method::ShapleySampled => sampling_shapley(predictor, ids, class, config.samples, example_seed)?,
        Method::ShapleyExact => exact_shapley(predictor, ids, class)?,
        Method::IntegratedGradients => {
            integrated_gradients_from(predictor, ids, class, config.ig_steps, config.ig_baseline)?
        }
        Method::Attention => attention_explanation(predictor, ids)?,
        Method::Occlusion => occlusion(predictor, ids, class)?,
        Method::Random => {
            let mut a = random_attribution(ids, example_seed);
            a.class = class;
            a.prob = probs[class];
            a
        }
    };
    Ok(attribution.with_doc_id(doc_id))
}
