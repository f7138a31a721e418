use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, softmax};
use super::{Checkpoint, ModelError, Result, TrainingMeta};
use crate::corpus::{encode, LabeledCorpus, TokenId, Vocabulary, DEFAULT_MAX_LEN};
use crate::seed;

/// Mini-batch SGD settings for the built-in classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-batch global gradient-norm ceiling.
    pub grad_clip: f64,
    pub max_len: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1.0,
            epochs: 50,
            batch_size: 8,
            grad_clip: 1.0,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

struct Example {
    ids: Vec<TokenId>,
    label: usize,
}

fn example_loss(ckpt: &Checkpoint, ids: &[TokenId], label: usize) -> f64 {
    let logits = ckpt.params.arch().logits(&ckpt.rows(ids));
    let p = softmax(&logits);
    -p[label].max(f64::MIN_POSITIVE).ln()
}

fn mean_loss(ckpt: &Checkpoint, examples: &[Example]) -> f64 {
    examples
        .iter()
        .map(|ex| example_loss(ckpt, &ex.ids, ex.label))
        .sum::<f64>()
        / examples.len() as f64
}

/// Train a copy of `checkpoint` on `corpus` with seeded shuffling.
///
/// The returned checkpoint carries `ratio_percent` and the training metadata.
pub fn train(
    checkpoint: &Checkpoint,
    corpus: &LabeledCorpus,
    vocab: &Vocabulary,
    hyper: &Hyper,
    seed: u64,
    ratio_percent: f64,
) -> Result<Checkpoint> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyTrainingCorpus);
    }
    if corpus.num_labels() != checkpoint.num_classes {
        return Err(ModelError::LabelMismatch {
            corpus: corpus.num_labels(),
            model: checkpoint.num_classes,
        });
    }
    checkpoint.ensure_vocabulary(vocab)?;
    let examples: Vec<Example> = corpus
        .documents()
        .iter()
        .map(|d| Example {
            ids: encode(d, vocab, hyper.max_len),
            label: d.label,
        })
        .collect();

    let mut ckpt = checkpoint.clone();
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_history = Vec::with_capacity(hyper.epochs);
    let batch_size = hyper.batch_size.max(1);

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            step(&mut ckpt, &examples, batch, hyper);
        }
        loss_history.push(mean_loss(&ckpt, &examples));
    }

    let final_loss = loss_history
        .last()
        .copied()
        .unwrap_or_else(|| mean_loss(&ckpt, &examples));
    ckpt.ratio_percent = ratio_percent;
    ckpt.training = Some(TrainingMeta {
        lr: hyper.lr,
        epochs: hyper.epochs,
        batch_size,
        grad_clip: hyper.grad_clip,
        train_size: examples.len(),
        train_seed: seed,
        loss_history,
        final_loss,
    });
    Ok(ckpt)
}

fn step(ckpt: &mut Checkpoint, examples: &[Example], batch: &[usize], hyper: &Hyper) {
    let num_classes = ckpt.num_classes;
    let dim = ckpt.embed_dim;
    let scale = 1.0 / batch.len() as f64;

    let mut dense: Vec<Vec<f64>> = ckpt
        .params
        .arch()
        .dense()
        .iter()
        .map(|t| vec![0.0; t.len()])
        .collect();
    let mut sparse: BTreeMap<TokenId, Vec<f64>> = BTreeMap::new();

    for &i in batch {
        let ex = &examples[i];
        let rows = ckpt.rows(&ex.ids);
        let arch = ckpt.params.arch();
        let probs = softmax(&arch.logits(&rows));
        let mut dlogits: Vec<f64> = probs.iter().map(|p| p * scale).collect();
        dlogits[ex.label] -= scale;
        debug_assert_eq!(dlogits.len(), num_classes);
        let per_position = arch.backward(&rows, &dlogits, Some(&mut dense));
        for (&id, g) in ex.ids.iter().zip(&per_position) {
            axpy(sparse.entry(id).or_insert_with(|| vec![0.0; dim]), 1.0, g);
        }
    }

    let sq: f64 = dense.iter().flatten().map(|g| g * g).sum::<f64>()
        + sparse.values().flatten().map(|g| g * g).sum::<f64>();
    let norm = sq.sqrt();
    let clip = if hyper.grad_clip > 0.0 && norm > hyper.grad_clip {
        hyper.grad_clip / norm
    } else {
        1.0
    };
    let rate = -hyper.lr * clip;

    let arch = ckpt.params.arch_mut();
    for (param, grad) in arch.dense_mut().into_iter().zip(&dense) {
        axpy(param, rate, grad);
    }
    let table = arch.embeddings_mut();
    for (id, grad) in &sparse {
        axpy(table.row_mut(*id as usize), rate, grad);
    }
}
