use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    #[serde(default = "default_buckets")]
    pub relpos_num_buckets: usize,
    #[serde(default = "default_max_distance")]
    pub relpos_max_distance: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    pub max_seq_len: usize,
}

fn default_buckets() -> usize {
    32
}

fn default_max_distance() -> usize {
    128
}

impl ModelConfig {
    /// Desk-scale defaults: 64-wide, 4 heads, 2+2 layers, 128 positions.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_enc_layers: 2,
            n_dec_layers: 2,
            relpos_num_buckets: 32,
            relpos_max_distance: 128,
            dropout_rate: 0.1,
            max_seq_len: 128,
        }
    }

    /// The smallest configuration used for gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_enc_layers: 1,
            n_dec_layers: 1,
            relpos_num_buckets: 8,
            relpos_max_distance: 16,
            dropout_rate: 0.0,
            max_seq_len: 32,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("relpos_num_buckets", self.relpos_num_buckets),
            ("relpos_max_distance", self.relpos_max_distance),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.relpos_num_buckets % 2 != 0 || self.relpos_num_buckets < 4 {
            return Err(Error::invalid("relpos_num_buckets must be even and at least 4"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Number of scalar parameters implied by this configuration.
    pub fn num_parameters(&self) -> usize {
        let d = self.d_model;
        let attn = 4 * d * d;
        let ffn = 2 * d * self.d_ff;
        let bias = self.n_heads * self.relpos_num_buckets;
        let enc = self.n_enc_layers * (attn + ffn + 2 * d) + d + bias;
        let dec = self.n_dec_layers * (2 * attn + ffn + 3 * d) + d + bias;
        self.vocab_size * d + enc + dec
    }
}
