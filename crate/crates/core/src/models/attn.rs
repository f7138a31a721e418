//! Additive-attention pooling classifier.
//!
//! ```text
//! s_i    = vᵀ · tanh(M · e_i)
//! a      = softmax(s)
//! pooled = Σ a_i e_i
//! logits = U · pooled + b
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, softmax, uniform_vec, Matrix};
use super::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnParams {
    /// vocab × dim
    pub embeddings: Matrix,
    /// dim × dim (`M`)
    pub projection: Matrix,
    /// dim (`v`)
    pub query: Vec<f64>,
    /// classes × dim (`U`)
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

struct Forward {
    /// tanh(M e_i) per position
    hidden: Vec<Vec<f64>>,
    attention: Vec<f64>,
    pooled: Vec<f64>,
}

impl AttnParams {
    pub fn init<R: Rng>(vocab: usize, classes: usize, dim: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            embeddings: Matrix::uniform(vocab, dim, bound, rng),
            projection: Matrix::uniform(dim, dim, bound, rng),
            query: uniform_vec(dim, bound, rng),
            weights: Matrix::uniform(classes, dim, bound, rng),
            bias: uniform_vec(classes, bound, rng),
        }
    }

    pub fn zeros(vocab: usize, classes: usize, dim: usize) -> Self {
        Self {
            embeddings: Matrix::zeros(vocab, dim),
            projection: Matrix::zeros(dim, dim),
            query: vec![0.0; dim],
            weights: Matrix::zeros(classes, dim),
            bias: vec![0.0; classes],
        }
    }

    fn forward(&self, emb: &[&[f64]]) -> Forward {
        let hidden: Vec<Vec<f64>> = emb
            .iter()
            .map(|e| self.projection.matvec(e).into_iter().map(f64::tanh).collect())
            .collect();
        let scores: Vec<f64> = hidden.iter().map(|h| dot(&self.query, h)).collect();
        let attention = softmax(&scores);
        let mut pooled = vec![0.0; self.embeddings.cols];
        for (e, &a) in emb.iter().zip(&attention) {
            axpy(&mut pooled, a, e);
        }
        Forward {
            hidden,
            attention,
            pooled,
        }
    }

    /// Pooling weights over positions.
    pub fn attention(&self, emb: &[&[f64]]) -> Vec<f64> {
        self.forward(emb).attention
    }
}

impl Architecture for AttnParams {
    fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    fn embeddings_mut(&mut self) -> &mut Matrix {
        &mut self.embeddings
    }

    fn logits(&self, emb: &[&[f64]]) -> Vec<f64> {
        let fwd = self.forward(emb);
        let mut logits = self.weights.matvec(&fwd.pooled);
        axpy(&mut logits, 1.0, &self.bias);
        logits
    }

    fn backward(&self, emb: &[&[f64]], dlogits: &[f64], dense: Option<&mut [Vec<f64>]>) -> Vec<Vec<f64>> {
        let dim = self.embeddings.cols;
        let fwd = self.forward(emb);
        let grad_pooled = self.weights.matvec_t(dlogits);
        let mean_q = dot(&grad_pooled, &fwd.pooled);

        // dL/ds_i = a_i (gp·e_i − gp·pooled)
        let grad_scores: Vec<f64> = emb
            .iter()
            .zip(&fwd.attention)
            .map(|(e, &a)| a * (dot(&grad_pooled, e) - mean_q))
            .collect();
        // dL/d(M e_i) = ds_i · v ⊙ (1 − tanh²)
        let grad_pre: Vec<Vec<f64>> = fwd
            .hidden
            .iter()
            .zip(&grad_scores)
            .map(|(h, &ds)| {
                h.iter()
                    .zip(&self.query)
                    .map(|(t, v)| ds * v * (1.0 - t * t))
                    .collect()
            })
            .collect();

        if let Some(dense) = dense {
            let [dm, dv, du, db] = dense else {
                panic!("attention model expects four dense gradient buffers");
            };
            for ((e, h), (&ds, gpre)) in emb.iter().zip(&fwd.hidden).zip(grad_scores.iter().zip(&grad_pre)) {
                axpy(dv, ds, h);
                for (r, &g) in gpre.iter().enumerate() {
                    axpy(&mut dm[r * dim..(r + 1) * dim], g, e);
                }
            }
            for (c, &g) in dlogits.iter().enumerate() {
                axpy(&mut du[c * dim..(c + 1) * dim], g, &fwd.pooled);
            }
            axpy(db, 1.0, dlogits);
        }

        fwd.attention
            .iter()
            .zip(&grad_pre)
            .map(|(&a, gpre)| {
                let mut g = self.projection.matvec_t(gpre);
                axpy(&mut g, a, &grad_pooled);
                g
            })
            .collect()
    }

    fn dense(&self) -> Vec<&[f64]> {
        vec![&self.projection.data, &self.query, &self.weights.data, &self.bias]
    }

    fn dense_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.projection.data,
            &mut self.query,
            &mut self.weights.data,
            &mut self.bias,
        ]
    }
}
