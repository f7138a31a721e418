use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Result};
use crate::corpus::Schema;
use crate::explain::{ExplainConfig, Method};
use crate::metrics::{NegativeLmi, DEFAULT_AOPC_U, DEFAULT_EPSILON};
use crate::models::{Hyper, ModelKind, DEFAULT_EMBED_DIM};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_RATIOS: [f64; 6] = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0];
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const DEFAULT_EXPLAIN_SAMPLE_SIZE: usize = 1000;

/// Top-k setting for model feature pools: a fixed count or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopK {
    Fixed(usize),
    Named(AutoK),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoK {
    Auto,
}

impl Default for TopK {
    fn default() -> Self {
        TopK::Named(AutoK::Auto)
    }
}

/// Where to reach an externally fine-tuned checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalCheckpoint {
    pub ratio: f64,
    /// Restrict to one run seed; applies to every seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub external: Vec<ExternalCheckpoint>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::BowLogreg,
            embed_dim: DEFAULT_EMBED_DIM,
            external: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub ood_test: Option<PathBuf>,
    #[serde(default)]
    pub schema: Schema,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub k: TopK,
    #[serde(default = "default_sample_size")]
    pub explain_sample_size: usize,
    #[serde(default = "default_u")]
    pub aopc_u: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub negative_lmi: NegativeLmi,
    #[serde(default = "default_min_freq")]
    pub min_freq: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_ratios() -> Vec<f64> {
    DEFAULT_RATIOS.to_vec()
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_sample_size() -> usize {
    DEFAULT_EXPLAIN_SAMPLE_SIZE
}

fn default_u() -> usize {
    DEFAULT_AOPC_U
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_min_freq() -> u64 {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Config with every default filled in for the given dataset paths.
    pub fn new(train: impl Into<PathBuf>, test: impl Into<PathBuf>) -> Self {
        Self {
            version: CONFIG_VERSION,
            train: train.into(),
            test: test.into(),
            ood_test: None,
            schema: Schema::default(),
            model: ModelConfig::default(),
            ratios: default_ratios(),
            seeds: default_seeds(),
            hyper: Hyper::default(),
            explain: ExplainConfig::default(),
            k: TopK::default(),
            explain_sample_size: default_sample_size(),
            aopc_u: default_u(),
            epsilon: default_epsilon(),
            negative_lmi: NegativeLmi::default(),
            min_freq: default_min_freq(),
            out_dir: default_out_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Read and validate a config file. Relative dataset and output paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_json(&text).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.train);
        resolve(&mut config.test);
        if let Some(p) = config.ood_test.as_mut() {
            resolve(p);
        }
        resolve(&mut config.out_dir);
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.ratios.is_empty() {
            return bad("ratios must not be empty".into());
        }
        for (i, &r) in self.ratios.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("ratio {r} is outside [0, 1]"));
            }
            if self.ratios[..i].contains(&r) {
                return bad(format!("ratio {r} is listed twice"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(format!("seed {s} is listed twice"));
            }
        }
        if self.explain_sample_size == 0 {
            return bad("explain_sample_size must be at least 1".into());
        }
        if self.aopc_u == 0 {
            return bad("aopc_u must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.k == TopK::Fixed(0) {
            return bad("k must be at least 1".into());
        }
        if self.model.embed_dim == 0 {
            return bad("model.embed_dim must be at least 1".into());
        }
        if self.hyper.batch_size == 0 || self.hyper.max_len < 2 {
            return bad("hyper.batch_size must be ≥ 1 and hyper.max_len ≥ 2".into());
        }
        if self.explain.samples == 0 || self.explain.ig_steps == 0 {
            return bad("explain.samples and explain.ig_steps must be at least 1".into());
        }
        match (self.model.kind, self.explain.method) {
            (ModelKind::BowLogreg, Method::Attention) => {
                return bad("bow-logreg has no attention weights; pick another explanation method".into())
            }
            (ModelKind::External, Method::IntegratedGradients | Method::Attention) => {
                return bad(format!(
                    "external predictors only answer probability queries; `{}` needs model internals",
                    self.explain.method.as_str()
                ))
            }
            _ => {}
        }
        if self.model.kind == ModelKind::External {
            for &r in &self.ratios {
                for &s in &self.seeds {
                    if self.endpoint_for(r, s).is_none() {
                        return bad(format!("no external endpoint for ratio {r}, seed {s}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Endpoint for an external checkpoint; seed-specific entries win.
    pub fn endpoint_for(&self, ratio: f64, seed: u64) -> Option<&str> {
        let matching = |e: &&ExternalCheckpoint| e.ratio == ratio;
        self.model
            .external
            .iter()
            .filter(matching)
            .find(|e| e.seed == Some(seed))
            .or_else(|| {
                self.model
                    .external
                    .iter()
                    .filter(matching)
                    .find(|e| e.seed.is_none())
            })
            .map(|e| e.endpoint.as_str())
    }
}
