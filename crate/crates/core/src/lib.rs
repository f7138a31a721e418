//! Diagnostics for how a text classifier's prediction behavior shifts across
//! few-shot fine-tuning checkpoints: prediction bias, explanation
//! faithfulness (AOPC), per-label LMI feature statistics and their KL drift.

pub mod corpus;
pub mod explain;
pub mod fixture;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod protocol;
pub mod seed;
