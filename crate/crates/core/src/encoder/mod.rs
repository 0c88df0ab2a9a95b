//! Miniature transformer encoder and the relevance score between two
//! encodings.

mod forward;
mod model;
mod tokenizer;

use std::path::PathBuf;

use ndarray::ArrayView1;
use thiserror::Error;

pub(crate) use forward::{backward_first_token, encode_with_cache};
pub use forward::{attention, attention_with_weights, encode, ffn, softmax_rows, Segment};
pub use model::{EncoderConfig, EncoderModel, LayerWeights, Weights};
pub use tokenizer::{Tokenizer, FIRST_ID, FIRST_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Raw relevance logit: the dot product of two first-token encodings.
pub fn relevance_logit(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64, EncoderError> {
    if u.len() != v.len() {
        return Err(EncoderError::ShapeMismatch(format!(
            "vectors of dimension {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.dot(&v))
}

/// Relevance score in (0, 1): the logistic of the dot product.
pub fn sim(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64, EncoderError> {
    relevance_logit(u, v).map(logistic)
}
