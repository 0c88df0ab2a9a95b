use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use super::EncoderError;

const CHECKPOINT_FORMAT: &str = "slotfuse-encoder/1";
const INIT_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 32,
            d_ff: 64,
            heads: 2,
            layers: 2,
            max_len: 128,
            seed: 7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |msg: &str| Err(EncoderError::InvalidConfig(msg.to_string()));
        if self.d_model == 0 || self.d_ff == 0 || self.heads == 0 {
            return bad("d_model, d_ff and heads must be positive");
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by heads");
        }
        if self.layers == 0 {
            return bad("at least one layer is required");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub w_1: Array2<f64>,
    /// 1 x d_ff
    pub b_1: Array2<f64>,
    pub w_2: Array2<f64>,
    /// 1 x d_model
    pub b_2: Array2<f64>,
}

impl LayerWeights {
    fn zeros(d: usize, d_ff: usize) -> Self {
        LayerWeights {
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            w_o: Array2::zeros((d, d)),
            w_1: Array2::zeros((d, d_ff)),
            b_1: Array2::zeros((1, d_ff)),
            w_2: Array2::zeros((d_ff, d)),
            b_2: Array2::zeros((1, d)),
        }
    }
}

/// Every trainable tensor. Also used as the gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub token_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub segment_embeddings: Array2<f64>,
    pub layers: Vec<LayerWeights>,
}

impl Weights {
    pub fn zeros(config: &EncoderConfig, vocab_size: usize) -> Self {
        let d = config.d_model;
        Weights {
            token_embeddings: Array2::zeros((vocab_size, d)),
            position_embeddings: Array2::zeros((config.max_len, d)),
            segment_embeddings: Array2::zeros((2, d)),
            layers: (0..config.layers)
                .map(|_| LayerWeights::zeros(d, config.d_ff))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut w = self.clone();
        w.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
        w
    }

    /// Tensors in their canonical order, with checkpoint names.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("position_embeddings".to_string(), &self.position_embeddings),
            ("segment_embeddings".to_string(), &self.segment_embeddings),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("w_q", &l.w_q),
                ("w_k", &l.w_k),
                ("w_v", &l.w_v),
                ("w_o", &l.w_o),
                ("w_1", &l.w_1),
                ("b_1", &l.b_1),
                ("w_2", &l.w_2),
                ("b_2", &l.b_2),
            ] {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &mut self.token_embeddings),
            ("position_embeddings".to_string(), &mut self.position_embeddings),
            ("segment_embeddings".to_string(), &mut self.segment_embeddings),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in [
                ("w_q", &mut l.w_q),
                ("w_k", &mut l.w_k),
                ("w_v", &mut l.w_v),
                ("w_o", &mut l.w_o),
                ("w_1", &mut l.w_1),
                ("b_1", &mut l.b_1),
                ("w_2", &mut l.w_2),
                ("b_2", &mut l.b_2),
            ] {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn scaled_add(&mut self, scale: f64, other: &Weights) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            Zip::from(dst).and(src).for_each(|a, &b| *a += scale * b);
        }
    }

    /// L2 norm over every parameter.
    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// The miniature transformer encoder together with its tokenizer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub tokenizer: Tokenizer,
    pub weights: Weights,
}

impl EncoderModel {
    /// Seeded initialization: matrices uniform in [-0.05, 0.05], biases zero.
    pub fn init(config: EncoderConfig, tokenizer: Tokenizer) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut weights = Weights::zeros(&config, tokenizer.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, tensor) in weights.tensors_mut() {
            if name.ends_with(".b_1") || name.ends_with(".b_2") {
                continue;
            }
            tensor.mapv_inplace(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE));
        }
        Ok(EncoderModel {
            config,
            tokenizer,
            weights,
        })
    }

    pub fn to_checkpoint_json(&self) -> String {
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            hyperparameters: self.config,
            vocabulary: self.tokenizer.vocab().to_vec(),
            tensors: self
                .weights
                .tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                })
                .collect(),
        };
        let mut text =
            serde_json::to_string(&checkpoint).expect("checkpoint serialization cannot fail");
        text.push('\n');
        text
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, EncoderError> {
        let checkpoint: Checkpoint = serde_json::from_str(text)
            .map_err(|e| EncoderError::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(EncoderError::Checkpoint(format!(
                "unsupported checkpoint format {:?}",
                checkpoint.format
            )));
        }
        let config = checkpoint.hyperparameters;
        config.validate()?;
        let tokenizer =
            Tokenizer::from_vocab(checkpoint.vocabulary).map_err(EncoderError::Checkpoint)?;
        let mut weights = Weights::zeros(&config, tokenizer.len());
        let mut stored = checkpoint.tensors.into_iter();
        for (name, tensor) in weights.tensors_mut() {
            let entry = stored.next().ok_or_else(|| {
                EncoderError::Checkpoint(format!("checkpoint is missing tensor {name}"))
            })?;
            if entry.name != name {
                return Err(EncoderError::Checkpoint(format!(
                    "expected tensor {name}, found {}",
                    entry.name
                )));
            }
            let expected = [tensor.nrows(), tensor.ncols()];
            if entry.shape != expected || entry.data.len() != tensor.len() {
                return Err(EncoderError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {expected:?}",
                    entry.shape
                )));
            }
            if entry.data.iter().any(|x| !x.is_finite()) {
                return Err(EncoderError::Checkpoint(format!(
                    "tensor {name} contains non-finite values"
                )));
            }
            tensor.assign(&Array2::from_shape_vec((expected[0], expected[1]), entry.data).unwrap());
        }
        if let Some(extra) = stored.next() {
            return Err(EncoderError::Checkpoint(format!(
                "unexpected tensor {}",
                extra.name
            )));
        }
        Ok(EncoderModel {
            config,
            tokenizer,
            weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        fs::write(path.as_ref(), self.to_checkpoint_json()).map_err(|e| EncoderError::Io {
            path: path.as_ref().to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| EncoderError::Io {
            path: path.as_ref().to_path_buf(),
            source: e,
        })?;
        Self::from_checkpoint_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    hyperparameters: EncoderConfig,
    vocabulary: Vec<String>,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}
