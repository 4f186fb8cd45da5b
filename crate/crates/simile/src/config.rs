//! TOML run configuration: model overrides plus training, CBOW and matcher
//! settings. Every section and field is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use simile_core::locate_gen::TrainConfig;
use simile_core::nn::ModelConfig;
use simile_core::retrieval::{CbowConfig, MatchTrainConfig};
use simile_core::Precision;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Toy,
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    /// Base configuration the remaining fields override. `embed_size`
    /// follows `hidden_size` unless given.
    pub preset: Preset,
    pub hidden_size: Option<usize>,
    pub embed_size: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub decoder_layers: Option<usize>,
    pub attention_heads: Option<usize>,
    pub ffn_size: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub max_context_len: Option<usize>,
    pub max_simile_len: Option<usize>,
    pub use_insertion_bias: Option<bool>,
    pub label_smoothing: Option<f64>,
    pub precision: Option<Precision>,
    pub layer_norm_eps: Option<f64>,
    pub init_std: Option<f64>,
}

impl ModelOverrides {
    pub fn resolve(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut c = match self.preset {
            Preset::Toy => ModelConfig::toy(vocab_size),
            Preset::Full => ModelConfig {
                vocab_size,
                ..ModelConfig::full()
            },
        };
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        apply!(
            hidden_size,
            embed_size,
            encoder_layers,
            decoder_layers,
            attention_heads,
            ffn_size,
            dropout_rate,
            max_context_len,
            max_simile_len,
            use_insertion_bias,
            label_smoothing,
            precision,
            layer_norm_eps,
            init_std
        );
        if self.embed_size.is_none() {
            c.embed_size = c.hidden_size;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub cbow: CbowConfig,
    pub matcher: MatchTrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(Error::io(path))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_defaults() {
        let c = RunConfig::parse("[model]\nhidden_size = 32\nattention_heads = 2\n[train]\nmax_steps = 5\n[train.adam]\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(c.train.max_steps, 5);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.train.adam.learning_rate, 0.01);
        let m = c.model.resolve(40).unwrap();
        assert_eq!((m.hidden_size, m.attention_heads, m.vocab_size), (32, 2, 40));
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert!(RunConfig::parse("[model]\nwidth = 3\n").is_err());
        assert!(RunConfig::parse("[model]\nhidden_size = 30\n").unwrap().model.resolve(40).is_err());
    }
}
