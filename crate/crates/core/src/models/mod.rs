//! Predictors the diagnostics run against.
//!
//! Two built-in classifiers are trainable in-process and expose analytic
//! embedding gradients (and, for the attention model, pooling weights).
//! External models are reached over a line-delimited JSON protocol and only
//! provide class probabilities.

mod attn;
mod bow;
mod eval;
pub mod external;
pub mod tensor;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TokenId, Vocabulary};
use crate::protocol::ProtocolError;
use crate::seed;

pub use attn::AttnParams;
pub use bow::BowParams;
pub use eval::{evaluate, predict_label, EvalResult};
pub use external::ExternalPredictor;
use tensor::{softmax, Matrix};
pub use train::{train, Hyper};

pub const CHECKPOINT_FORMAT: &str = "fsdiag-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const INIT_BOUND: f64 = 0.1;
pub const DEFAULT_EMBED_DIM: usize = 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("a classifier needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("embedding dimension must be at least 1")]
    ZeroEmbedDim,
    #[error("cannot predict on an empty id sequence")]
    EmptyInput,
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },
    #[error("class {class} is outside 0..{num_classes}")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("{kind} predictors do not support {capability}")]
    Unsupported {
        kind: &'static str,
        capability: &'static str,
    },
    #[error("training corpus is empty; use init_model for the r=0 checkpoint")]
    EmptyTrainingCorpus,
    #[error("corpus has {corpus} labels but the model has {model} classes")]
    LabelMismatch { corpus: usize, model: usize },
    #[error("checkpoint was built for vocabulary {expected}, got {actual}")]
    VocabularyMismatch { expected: String, actual: String },
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path} is not valid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BowLogreg,
    AttnPool,
    External,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::BowLogreg => "bow-logreg",
            ModelKind::AttnPool => "attn-pool",
            ModelKind::External => "external",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bow-logreg" => Ok(ModelKind::BowLogreg),
            "attn-pool" => Ok(ModelKind::AttnPool),
            "external" => Ok(ModelKind::External),
            other => Err(format!(
                "unknown model kind `{other}` (expected bow-logreg, attn-pool or external)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub gradients: bool,
    pub attention: bool,
}

/// Anything that maps an id sequence to a probability vector over classes.
pub trait Predictor: Send + Sync {
    fn kind_name(&self) -> &'static str;

    fn num_classes(&self) -> usize;

    fn predict_proba(&self, ids: &[TokenId]) -> Result<Vec<f64>>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    /// Gradient access, if the predictor is differentiable in-process.
    fn differentiable(&self) -> Option<&dyn Differentiable> {
        None
    }

    fn attention_weights(&self, _ids: &[TokenId]) -> Result<Vec<f64>> {
        Err(ModelError::Unsupported {
            kind: self.kind_name(),
            capability: "attention weights",
        })
    }
}

/// A model whose pre-softmax class scores can be evaluated and differentiated
/// at arbitrary points in embedding space.
pub trait Differentiable {
    fn embed(&self, ids: &[TokenId]) -> Result<Vec<Vec<f64>>>;

    fn embedding_of(&self, id: TokenId) -> Result<Vec<f64>>;

    fn class_score_at(&self, embeddings: &[Vec<f64>], class: usize) -> f64;

    /// ∂(class score)/∂e_i for every position.
    fn class_score_gradient_at(&self, embeddings: &[Vec<f64>], class: usize) -> Vec<Vec<f64>>;
}

/// Internal interface shared by the built-in architectures.
pub(crate) trait Architecture {
    fn embeddings(&self) -> &Matrix;
    fn embeddings_mut(&mut self) -> &mut Matrix;
    fn logits(&self, emb: &[&[f64]]) -> Vec<f64>;
    /// Backpropagate `dlogits`; accumulates into `dense` (ordered like
    /// [`Architecture::dense`]) when given, and returns per-position
    /// embedding gradients.
    fn backward(&self, emb: &[&[f64]], dlogits: &[f64], dense: Option<&mut [Vec<f64>]>) -> Vec<Vec<f64>>;
    fn dense(&self) -> Vec<&[f64]>;
    fn dense_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Params {
    BowLogreg(BowParams),
    AttnPool(AttnParams),
}

impl Params {
    pub(crate) fn arch(&self) -> &dyn Architecture {
        match self {
            Params::BowLogreg(p) => p,
            Params::AttnPool(p) => p,
        }
    }

    pub(crate) fn arch_mut(&mut self) -> &mut dyn Architecture {
        match self {
            Params::BowLogreg(p) => p,
            Params::AttnPool(p) => p,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Params::BowLogreg(_) => ModelKind::BowLogreg,
            Params::AttnPool(_) => ModelKind::AttnPool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub train_size: usize,
    pub train_seed: u64,
    /// Mean cross-entropy over the training set after each epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub vocab_fingerprint: String,
    pub ratio_percent: f64,
    pub seed: u64,
    pub training: Option<TrainingMeta>,
    pub params: Params,
}

/// Fresh checkpoint with every parameter drawn from a seeded uniform(-0.1, 0.1).
///
/// This is the r = 0 model: it has seen no labeled data, and whatever label
/// preference its random head carries is its prediction bias.
pub fn init_model(
    kind: ModelKind,
    vocab: &Vocabulary,
    num_classes: usize,
    embed_dim: usize,
    seed: u64,
) -> Result<Checkpoint> {
    if num_classes < 2 {
        return Err(ModelError::TooFewClasses(num_classes));
    }
    if embed_dim == 0 {
        return Err(ModelError::ZeroEmbedDim);
    }
    let mut rng = seed::rng(seed);
    let params = match kind {
        ModelKind::BowLogreg => Params::BowLogreg(BowParams::init(
            vocab.len(),
            num_classes,
            embed_dim,
            INIT_BOUND,
            &mut rng,
        )),
        ModelKind::AttnPool => Params::AttnPool(AttnParams::init(
            vocab.len(),
            num_classes,
            embed_dim,
            INIT_BOUND,
            &mut rng,
        )),
        ModelKind::External => {
            return Err(ModelError::Unsupported {
                kind: "external",
                capability: "in-process initialization",
            })
        }
    };
    Ok(Checkpoint::from_params(
        params,
        vocab,
        num_classes,
        embed_dim,
        seed,
    ))
}

impl Checkpoint {
    pub fn from_params(
        params: Params,
        vocab: &Vocabulary,
        num_classes: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: params.kind(),
            num_classes,
            embed_dim,
            vocab_size: vocab.len(),
            vocab_fingerprint: vocab.fingerprint(),
            ratio_percent: 0.0,
            seed,
            training: None,
            params,
        }
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(ModelError::ClassOutOfRange {
                class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    fn rows<'a>(&'a self, ids: &[TokenId]) -> Vec<&'a [f64]> {
        let table = self.params.arch().embeddings();
        ids.iter().map(|&id| table.row(id as usize)).collect()
    }

    pub fn logits(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        self.check_ids(ids)?;
        Ok(self.params.arch().logits(&self.rows(ids)))
    }

    /// Per-position gradient of the pre-softmax class score, with the
    /// embeddings it was evaluated at.
    pub fn embedding_gradients(&self, ids: &[TokenId], class: usize) -> Result<EmbeddingGradients> {
        self.check_ids(ids)?;
        self.check_class(class)?;
        let embeddings = self.embed(ids)?;
        let gradients = self.class_score_gradient_at(&embeddings, class);
        Ok(EmbeddingGradients {
            gradients,
            embeddings,
        })
    }

    pub fn ensure_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        let actual = vocab.fingerprint();
        if actual != self.vocab_fingerprint {
            return Err(ModelError::VocabularyMismatch {
                expected: self.vocab_fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// Shape and header consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::InvalidCheckpoint(msg));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unknown format `{}`", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.kind != self.params.kind() {
            return bad(format!(
                "header says {} but parameters are {}",
                self.kind,
                self.params.kind()
            ));
        }
        let (v, c, d) = (self.vocab_size, self.num_classes, self.embed_dim);
        let ok = match &self.params {
            Params::BowLogreg(p) => {
                p.embeddings.is_shape(v, d) && p.weights.is_shape(c, d) && p.bias.len() == c
            }
            Params::AttnPool(p) => {
                p.embeddings.is_shape(v, d)
                    && p.projection.is_shape(d, d)
                    && p.query.len() == d
                    && p.weights.is_shape(c, d)
                    && p.bias.len() == c
            }
        };
        if !ok {
            return bad(format!("parameter shapes do not match V={v}, C={c}, d={d}"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt = Self::from_json(&text).map_err(|source| ModelError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGradients {
    pub gradients: Vec<Vec<f64>>,
    pub embeddings: Vec<Vec<f64>>,
}

impl Predictor for Checkpoint {
    fn kind_name(&self) -> &'static str {
        self.kind.as_str()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(ids)?))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            attention: matches!(self.params, Params::AttnPool(_)),
        }
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }

    fn attention_weights(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        match &self.params {
            Params::AttnPool(p) => {
                self.check_ids(ids)?;
                Ok(p.attention(&self.rows(ids)))
            }
            Params::BowLogreg(_) => Err(ModelError::Unsupported {
                kind: self.kind.as_str(),
                capability: "attention weights",
            }),
        }
    }
}

impl Differentiable for Checkpoint {
    fn embed(&self, ids: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        self.check_ids(ids)?;
        Ok(self.rows(ids).into_iter().map(<[f64]>::to_vec).collect())
    }

    fn embedding_of(&self, id: TokenId) -> Result<Vec<f64>> {
        self.check_ids(&[id])?;
        Ok(self.params.arch().embeddings().row(id as usize).to_vec())
    }

    fn class_score_at(&self, embeddings: &[Vec<f64>], class: usize) -> f64 {
        let rows: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
        self.params.arch().logits(&rows)[class]
    }

    fn class_score_gradient_at(&self, embeddings: &[Vec<f64>], class: usize) -> Vec<Vec<f64>> {
        let rows: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
        let mut onehot = vec![0.0; self.num_classes];
        onehot[class] = 1.0;
        self.params.arch().backward(&rows, &onehot, None)
    }
}
