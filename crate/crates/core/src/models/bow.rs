//! Bag-of-words logistic regression over mean-pooled token embeddings:
//! `logits = W · mean(e_i) + b`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, uniform_vec, Matrix};
use super::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowParams {
    /// vocab × dim
    pub embeddings: Matrix,
    /// classes × dim
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl BowParams {
    pub fn init<R: Rng>(vocab: usize, classes: usize, dim: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            embeddings: Matrix::uniform(vocab, dim, bound, rng),
            weights: Matrix::uniform(classes, dim, bound, rng),
            bias: uniform_vec(classes, bound, rng),
        }
    }

    pub fn zeros(vocab: usize, classes: usize, dim: usize) -> Self {
        Self {
            embeddings: Matrix::zeros(vocab, dim),
            weights: Matrix::zeros(classes, dim),
            bias: vec![0.0; classes],
        }
    }

    fn pooled(&self, emb: &[&[f64]]) -> Vec<f64> {
        let mut pooled = vec![0.0; self.embeddings.cols];
        let scale = 1.0 / emb.len() as f64;
        for e in emb {
            axpy(&mut pooled, scale, e);
        }
        pooled
    }
}

impl Architecture for BowParams {
    fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    fn embeddings_mut(&mut self) -> &mut Matrix {
        &mut self.embeddings
    }

    fn logits(&self, emb: &[&[f64]]) -> Vec<f64> {
        let pooled = self.pooled(emb);
        let mut logits = self.weights.matvec(&pooled);
        axpy(&mut logits, 1.0, &self.bias);
        logits
    }

    fn backward(&self, emb: &[&[f64]], dlogits: &[f64], dense: Option<&mut [Vec<f64>]>) -> Vec<Vec<f64>> {
        let n = emb.len() as f64;
        if let Some(dense) = dense {
            let pooled = self.pooled(emb);
            let dim = self.embeddings.cols;
            let (dw, db) = dense.split_at_mut(1);
            for (c, &g) in dlogits.iter().enumerate() {
                axpy(&mut dw[0][c * dim..(c + 1) * dim], g, &pooled);
            }
            axpy(&mut db[0], 1.0, dlogits);
        }
        let mut per_position = self.weights.matvec_t(dlogits);
        per_position.iter_mut().for_each(|x| *x /= n);
        vec![per_position; emb.len()]
    }

    fn dense(&self) -> Vec<&[f64]> {
        vec![&self.weights.data, &self.bias]
    }

    fn dense_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights.data, &mut self.bias]
    }
}
