use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Precision;
use crate::vocab::SPECIAL_NAMES;

/// Hyperparameters of the encoder-decoder.
///
/// `max_context_len` counts the leading CLS slot, so raw text may hold at
/// most `max_context_len - 1` characters. `max_simile_len` bounds the decoder
/// input (BOS plus generated tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub embed_size: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub ffn_size: usize,
    pub dropout_rate: f64,
    pub max_context_len: usize,
    pub max_simile_len: usize,
    pub use_insertion_bias: bool,
    pub label_smoothing: f64,
    pub precision: Precision,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// Desk-scale default: H = 64, 2 + 2 layers, 4 heads. Weights start at
    /// std 0.1; at 0.02 a model this narrow stalls before reading the context.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: 64,
            embed_size: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 4,
            ffn_size: 256,
            dropout_rate: 0.1,
            max_context_len: 64,
            max_simile_len: 16,
            use_insertion_bias: true,
            label_smoothing: 0.1,
            precision: Precision::F32,
            layer_norm_eps: default_ln_eps(),
            init_std: 0.1,
        }
    }

    /// BERT-base encoder with a 2-layer 768-wide decoder, 128/16 length caps.
    pub fn full() -> Self {
        Self {
            vocab_size: 21_128,
            hidden_size: 768,
            embed_size: 768,
            encoder_layers: 12,
            decoder_layers: 2,
            attention_heads: 12,
            ffn_size: 3072,
            dropout_rate: 0.1,
            max_context_len: 128,
            max_simile_len: 16,
            init_std: default_init_std(),
            ..Self::toy(21_128)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.attention_heads
    }

    /// Longest raw text (in characters) the encoder accepts.
    pub fn max_text_chars(&self) -> usize {
        self.max_context_len - 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.embed_size != self.hidden_size {
            return fail("embed_size must equal hidden_size");
        }
        if self.attention_heads == 0 || !self.hidden_size.is_multiple_of(self.attention_heads) {
            return fail("hidden_size must be divisible by attention_heads");
        }
        if self.hidden_size == 0 || self.ffn_size == 0 {
            return fail("hidden_size and ffn_size must be positive");
        }
        if self.max_context_len < 2 || self.max_simile_len < 2 {
            return fail("max_context_len and max_simile_len must be at least 2");
        }
        if self.vocab_size <= SPECIAL_NAMES.len() {
            return fail("vocab_size must exceed the special-token block");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must be in [0, 1)");
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return fail("layer_norm_eps must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::toy(40).validate().unwrap();
        let p = ModelConfig::full();
        p.validate().unwrap();
        assert_eq!((p.hidden_size, p.attention_heads, p.vocab_size), (768, 12, 21_128));
        assert_eq!((p.max_context_len, p.max_simile_len), (128, 16));
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::toy(40);
        c.attention_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(40);
        c.embed_size = 32;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(40);
        c.max_simile_len = 1;
        assert!(c.validate().is_err());
        assert!(ModelConfig::toy(6).validate().is_err());
    }
}
