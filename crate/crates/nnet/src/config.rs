use serde::{Deserialize, Serialize};

use crate::error::{NnetError, Result};

/// Transformer hyperparameters shared by the encoder-only and the
/// encoder-decoder models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            encoder_layers: 2,
            decoder_layers: 2,
            max_len: 64,
            dropout: 0.1,
            src_vocab: 1,
            tgt_vocab: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(NnetError::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(NnetError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnetError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_heads = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad_heads.validate().is_err());
        let bad_dropout = ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        };
        assert!(bad_dropout.validate().is_err());
        let zero = ModelConfig {
            d_ff: 0,
            ..ModelConfig::default()
        };
        assert!(zero.validate().is_err());
    }
}
