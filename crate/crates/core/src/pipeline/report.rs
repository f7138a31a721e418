use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::corpus::{TokenId, Vocabulary};
use crate::metrics::{BiasReading, LmiDistribution};

pub const REPORT_FORMAT: &str = "fsdiag-report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format: String,
    pub tool_version: String,
    pub config_hash: String,
    /// SHA-256 of each dataset file, keyed by split name.
    pub data_hashes: BTreeMap<String, String>,
    pub model: String,
    pub vocab_size: usize,
    pub vocab_fingerprint: String,
    pub k: usize,
    /// Seconds since the Unix epoch when the run finished.
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub id: TokenId,
    pub token: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: usize,
    pub degenerate: bool,
    pub top_tokens: Vec<TokenScore>,
    pub kld_ori: Option<f64>,
    /// Why `kld_ori` is missing.
    pub kld_ori_note: Option<String>,
    pub kld_data: Option<f64>,
    pub kld_data_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub dataset: String,
    pub accuracy: f64,
    pub total: u64,
    /// Rows are gold labels, columns predicted labels.
    pub confusion: Vec<Vec<u64>>,
    pub prediction_counts: Vec<u64>,
    pub data_counts: Vec<u64>,
    pub bias: Option<BiasReading>,
    pub bias_error: Option<String>,
    /// Size of the explanation subset.
    pub explained: usize,
    /// Predicted labels over the explanation subset.
    pub explained_prediction_counts: Vec<u64>,
    pub aopc: f64,
    pub labels: Vec<LabelReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub ratio: f64,
    pub seed: u64,
    pub status: CellStatus,
    pub train_size: usize,
    pub final_loss: Option<f64>,
    pub splits: Vec<SplitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub ratio: f64,
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

/// Seed means for one (ratio, dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub ratio: f64,
    pub dataset: String,
    /// Seeds that completed.
    pub seeds: usize,
    pub accuracy: Option<f64>,
    pub pb: Option<f64>,
    pub aopc: Option<f64>,
}

/// Seed means for one (ratio, dataset, label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub ratio: f64,
    pub dataset: String,
    pub label: usize,
    pub kld_ori: Option<f64>,
    pub kld_ori_seeds: usize,
    pub kld_data: Option<f64>,
    pub kld_data_seeds: usize,
    /// Mean of the non-degenerate per-seed LMI distributions, renormalized;
    /// nonzero entries only, highest first.
    pub distribution: Vec<TokenScore>,
}

impl LabelSummary {
    pub fn top_tokens(&self, n: usize) -> &[TokenScore] {
        &self.distribution[..n.min(self.distribution.len())]
    }

    /// Dense distribution over `vocab`, or `None` when no seed contributed.
    pub fn to_distribution(&self, vocab_size: usize) -> Option<LmiDistribution> {
        if self.distribution.is_empty() {
            return None;
        }
        let mut values = vec![0.0; vocab_size];
        for t in &self.distribution {
            values[t.id as usize] = t.value;
        }
        Some(LmiDistribution {
            label: self.label,
            values,
            normalized: true,
            degenerate: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub metadata: Metadata,
    pub labels: Vec<String>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub datasets: Vec<String>,
    pub cells: Vec<CellReport>,
    pub summary: Vec<SplitSummary>,
    pub label_summary: Vec<LabelSummary>,
    pub failures: Vec<Failure>,
}

impl DiagnosticsReport {
    pub fn cell(&self, ratio: f64, seed: u64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.ratio == ratio && c.seed == seed)
    }

    pub fn split_summary(&self, ratio: f64, dataset: &str) -> Option<&SplitSummary> {
        self.summary
            .iter()
            .find(|s| s.ratio == ratio && s.dataset == dataset)
    }

    pub fn label_summary(&self, ratio: f64, dataset: &str, label: usize) -> Option<&LabelSummary> {
        self.label_summary
            .iter()
            .find(|s| s.ratio == ratio && s.dataset == dataset && s.label == label)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PipelineError::Report(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// `model,r,dataset,acc,pb` over seed means.
pub fn preds_csv(report: &DiagnosticsReport) -> String {
    let mut out = String::from("model,r,dataset,acc,pb\n");
    for s in &report.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            report.metadata.model,
            s.ratio,
            s.dataset,
            opt(s.accuracy),
            opt(s.pb)
        );
    }
    out
}

/// `model,r,dataset,label,kld_ori,kld_data` over seed means; empty when undefined.
pub fn kld_csv(report: &DiagnosticsReport) -> String {
    let mut out = String::from("model,r,dataset,label,kld_ori,kld_data\n");
    for s in &report.label_summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            report.metadata.model,
            s.ratio,
            s.dataset,
            report.labels[s.label],
            opt(s.kld_ori),
            opt(s.kld_data)
        );
    }
    out
}

/// Top-10 LMI tokens per label and ratio, one tab-separated row each.
pub fn top_features(report: &DiagnosticsReport) -> String {
    let mut out = String::from("model\tdataset\tr\tlabel\ttokens\n");
    for s in &report.label_summary {
        let tokens: Vec<&str> = s.top_tokens(10).iter().map(|t| t.token.as_str()).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            report.metadata.model,
            s.dataset,
            s.ratio,
            report.labels[s.label],
            tokens.join(" ")
        );
    }
    out
}

fn failures_json(report: &DiagnosticsReport) -> String {
    let mut text = serde_json::to_string_pretty(&report.failures).expect("failures serialize");
    text.push('\n');
    text
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|source| PipelineError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write `report.json`, `preds.csv`, `kld.csv`, `top_features.txt` and
/// `failures.json` (empty list when every cell completed).
pub fn emit_report(report: &DiagnosticsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|source| PipelineError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    Ok(vec![
        write(out_dir.join("report.json"), &report.to_json())?,
        write(out_dir.join("preds.csv"), &preds_csv(report))?,
        write(out_dir.join("kld.csv"), &kld_csv(report))?,
        write(out_dir.join("top_features.txt"), &top_features(report))?,
        write(out_dir.join("failures.json"), &failures_json(report))?,
    ])
}

/// Summary distribution entries for `dist`, highest first (ties by id).
pub fn token_scores(dist: &LmiDistribution, vocab: &Vocabulary, n: usize) -> Vec<TokenScore> {
    dist.top_tokens(n)
        .into_iter()
        .map(|(id, value)| TokenScore {
            id,
            token: vocab.token(id).to_string(),
            value,
        })
        .collect()
}
