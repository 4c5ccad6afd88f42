//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "relu" => Some(Activation::Relu),
            "gelu" => Some(Activation::Gelu),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }
}

/// Scoring-model configuration. Defaults follow the reference training
/// setup: d=128, review cutoff 100 words, per-sequence caps of 10 user and
/// 30 item reviews, 5 negative samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtmConfig {
    /// Embedding width.
    pub d: usize,
    /// Attention heads per layer.
    pub heads: usize,
    /// Transformer layers.
    pub layers: usize,
    /// Feed-forward inner width.
    pub d_ff: usize,
    /// Add learned position embeddings to each unit.
    pub use_pos: bool,
    /// Add learned segment embeddings (query / user review / item review).
    pub use_seg: bool,
    /// Cap on user reviews per sequence.
    pub m_max: usize,
    /// Cap on item reviews per sequence.
    pub n_max: usize,
    /// Reviews are cut off to this many words before encoding.
    pub review_len_max: usize,
    /// Negative samples per positive during training.
    pub k_neg: usize,
    pub vocab_size: usize,
    pub activation: Activation,
}

impl Default for RtmConfig {
    fn default() -> Self {
        RtmConfig {
            d: 128,
            heads: 8,
            layers: 1,
            d_ff: 256,
            use_pos: true,
            use_seg: true,
            m_max: 10,
            n_max: 30,
            review_len_max: 100,
            k_neg: 5,
            vocab_size: 0,
            activation: Activation::Relu,
        }
    }
}

impl RtmConfig {
    /// Sequence positions: the query plus every review slot.
    pub fn position_table_len(&self) -> usize {
        self.m_max + self.n_max + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d == 0 || self.heads == 0 || self.layers == 0 || self.d_ff == 0 {
            return fail("d, heads, layers, and d_ff must all be positive".into());
        }
        if self.d % self.heads != 0 {
            return fail(format!(
                "embedding width {} is not divisible by {} heads",
                self.d, self.heads
            ));
        }
        if self.review_len_max == 0 {
            return fail("review_len_max must be at least 1".into());
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be set before building parameters".into());
        }
        Ok(())
    }
}
