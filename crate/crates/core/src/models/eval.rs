use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::argmax;
use super::{Predictor, Result};
use crate::corpus::{encode, LabeledCorpus, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Rows are gold labels, columns predicted labels.
    pub confusion: Vec<Vec<u64>>,
    /// Per-label prediction counts (column sums of `confusion`).
    pub prediction_counts: Vec<u64>,
    pub total: u64,
}

impl EvalResult {
    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (gold, pred) in pairs {
            confusion[gold][pred] += 1;
        }
        let prediction_counts: Vec<u64> = (0..num_classes)
            .map(|c| confusion.iter().map(|row| row[c]).sum())
            .collect();
        let total: u64 = prediction_counts.iter().sum();
        let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
        let accuracy = if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        };
        Self {
            accuracy,
            confusion,
            prediction_counts,
            total,
        }
    }

    /// Per-label gold counts (row sums of `confusion`).
    pub fn gold_counts(&self) -> Vec<u64> {
        self.confusion.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Argmax label, ties to the lowest label id.
pub fn predict_label(predictor: &dyn Predictor, ids: &[TokenId]) -> Result<usize> {
    Ok(argmax(&predictor.predict_proba(ids)?))
}

pub fn evaluate(
    predictor: &dyn Predictor,
    corpus: &LabeledCorpus,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EvalResult> {
    let preds: Vec<usize> = corpus
        .documents()
        .par_iter()
        .map(|d| predict_label(predictor, &encode(d, vocab, max_len)))
        .collect::<Result<_>>()?;
    Ok(EvalResult::from_pairs(
        predictor.num_classes(),
        corpus.documents().iter().map(|d| d.label).zip(preds),
    ))
}
