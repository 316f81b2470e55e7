//! Model and training hyperparameters.
//!
//! Defaults follow the reference setup: learning rate 0.00005, batch 64,
//! 400 adversarial epochs after 200 pretraining epochs, dropout 0.5, 8 layers,
//! 16 heads, sentence max length 30, 768-wide input features projected to 64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the projected token features and the positional table are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionalCombine {
    /// Element-wise sum at full model width.
    #[default]
    Add,
    /// Side-by-side concatenation, each half `d_model / 2` wide.
    Concat,
}

/// Reduction of critic encoder outputs before the score head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticPooling {
    #[default]
    Mean,
    First,
}

/// What the critic sees for generated answer tokens during a generator update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticFeed {
    /// Hard one-hot forward, Gumbel-softmax gradient backward.
    #[default]
    StraightThrough,
    /// The relaxed distribution itself, forward and backward.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub gumbel_temperature: f64,
    pub positional_combine: PositionalCombine,
    pub critic_pooling: CriticPooling,
    pub critic_feed: CriticFeed,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 20_000,
            embed_dim: 768,
            d_model: 64,
            n_layers: 8,
            n_heads: 16,
            ffn_dim: 256,
            max_len: 30,
            dropout: 0.5,
            gumbel_temperature: 1.0,
            positional_combine: PositionalCombine::Add,
            critic_pooling: CriticPooling::Mean,
            critic_feed: CriticFeed::StraightThrough,
        }
    }
}

impl ModelConfig {
    /// Small model that trains in minutes on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 64,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            ..ModelConfig::default()
        }
    }

    /// Width of the projected token features before positional combination.
    pub fn feature_dim(&self) -> usize {
        match self.positional_combine {
            PositionalCombine::Add => self.d_model,
            PositionalCombine::Concat => self.d_model / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::text::SEP {
            return Err(Error::Config("vocab_size must exceed the reserved tokens".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must leave room for BOS, a token and EOS".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.feature_dim().is_multiple_of(2) || self.feature_dim() == 0 {
            return Err(Error::Config("positional width must be even".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.gumbel_temperature > 0.0 && self.gumbel_temperature.is_finite()) {
            return Err(Error::Config("gumbel_temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub adv_epochs: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub clip_c: f64,
    /// Adversarial-phase learning rate (RMSProp).
    pub lr: f64,
    /// MLE-phase learning rate (Adam).
    pub pretrain_lr: f64,
    pub seed: u64,
    /// Epochs between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Epochs between held-out evaluations; 0 disables them.
    pub eval_every: usize,
    pub test_split: f64,
    pub allow_cold_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 200,
            adv_epochs: 400,
            batch_size: 64,
            critic_steps: 5,
            clip_c: 0.01,
            lr: 0.00005,
            pretrain_lr: 0.00005,
            seed: 0,
            checkpoint_every: 50,
            eval_every: 10,
            test_split: 0.2,
            allow_cold_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.critic_steps == 0 {
            return Err(Error::Config("batch_size and critic_steps must be positive".into()));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::Config("clip_c must be positive".into()));
        }
        if !(self.lr > 0.0 && self.pretrain_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_split) {
            return Err(Error::Config("test_split must be in [0, 1)".into()));
        }
        Ok(())
    }
}
