//! Flat `key = value` configuration. Keys follow the hyper-parameter table
//! names; unknown keys are rejected so typos do not pass silently.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use cwgan_core::text::Vocab;
use cwgan_core::{CriticFeed, CriticPooling, ModelConfig, PositionalCombine, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub host: String,
    pub port: u16,
    pub max_sessions: usize,
    /// Per-request decode cap; clamped to the model's max length.
    pub max_decode_steps: usize,
    pub request_timeout: Duration,
    pub fallback: String,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            max_sessions: 4,
            max_decode_steps: 30,
            request_timeout: Duration::from_secs(30),
            fallback: cwgan_core::chat::DEFAULT_FALLBACK.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub min_frequency: usize,
    pub max_vocab_size: usize,
    pub runtime: RuntimeConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            min_frequency: Vocab::DEFAULT_MIN_FREQUENCY,
            max_vocab_size: Vocab::DEFAULT_MAX_SIZE,
            runtime: RuntimeConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_percent(key: &str, value: &str) -> Result<f64, CliError> {
    match value.strip_suffix('%') {
        Some(p) => Ok(parse::<f64>(key, p.trim())? / 100.0),
        None => parse(key, value),
    }
}

impl Settings {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (m, t, r) = (&mut self.model, &mut self.train, &mut self.runtime);
        let value = value.trim();
        match key.trim() {
            "learning_rate" => t.lr = parse(key, value)?,
            "pretrain_learning_rate" => t.pretrain_lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epoch_numbers" => t.adv_epochs = parse(key, value)?,
            "pretrain_epochs" => t.pretrain_epochs = parse(key, value)?,
            "critic_steps" => t.critic_steps = parse(key, value)?,
            "clip_c" => t.clip_c = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "test_split" => t.test_split = parse_percent(key, value)?,
            "allow_cold_start" => t.allow_cold_start = parse_bool(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "number_of_layers" => m.n_layers = parse(key, value)?,
            "number_of_heads" => m.n_heads = parse(key, value)?,
            "sentence_max_length" => m.max_len = parse(key, value)?,
            "bert_features_size" => m.embed_dim = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "ffn_dim" => m.ffn_dim = parse(key, value)?,
            "gumbel_temperature" => m.gumbel_temperature = parse(key, value)?,
            "positional_combine" => {
                m.positional_combine = match value {
                    "add" => PositionalCombine::Add,
                    "concat" => PositionalCombine::Concat,
                    _ => return Err(CliError::Usage(format!("positional_combine must be add or concat, got {value:?}"))),
                }
            }
            "critic_pooling" => {
                m.critic_pooling = match value {
                    "mean" => CriticPooling::Mean,
                    "first" => CriticPooling::First,
                    _ => return Err(CliError::Usage(format!("critic_pooling must be mean or first, got {value:?}"))),
                }
            }
            "critic_feed" => {
                m.critic_feed = match value {
                    "straight_through" => CriticFeed::StraightThrough,
                    "soft" => CriticFeed::Soft,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "critic_feed must be straight_through or soft, got {value:?}"
                        )))
                    }
                }
            }
            "min_frequency" => self.min_frequency = parse(key, value)?,
            "max_vocab_size" => self.max_vocab_size = parse(key, value)?,
            "host" => r.host = value.to_string(),
            "port" => r.port = parse(key, value)?,
            "max_sessions" => r.max_sessions = parse(key, value)?,
            "max_decode_steps" => r.max_decode_steps = parse(key, value)?,
            "request_timeout_ms" => r.request_timeout = Duration::from_millis(parse(key, value)?),
            "fallback" => r.fallback = value.to_string(),
            other => return Err(CliError::Usage(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Parses file contents. `#` starts a comment; blank lines are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(e, path))?;
        self.apply_text(&text)
    }

    /// `KEY=VALUE` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// The effective settings in the same format the parser reads.
    pub fn dump(&self) -> String {
        let (m, t, r) = (&self.model, &self.train, &self.runtime);
        let combine = match m.positional_combine {
            PositionalCombine::Add => "add",
            PositionalCombine::Concat => "concat",
        };
        let pooling = match m.critic_pooling {
            CriticPooling::Mean => "mean",
            CriticPooling::First => "first",
        };
        let feed = match m.critic_feed {
            CriticFeed::StraightThrough => "straight_through",
            CriticFeed::Soft => "soft",
        };
        let rows: Vec<(&str, String)> = vec![
            ("learning_rate", t.lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epoch_numbers", t.adv_epochs.to_string()),
            ("dropout", m.dropout.to_string()),
            ("number_of_layers", m.n_layers.to_string()),
            ("number_of_heads", m.n_heads.to_string()),
            ("sentence_max_length", m.max_len.to_string()),
            ("bert_features_size", m.embed_dim.to_string()),
            ("test_split", t.test_split.to_string()),
            ("pretrain_learning_rate", t.pretrain_lr.to_string()),
            ("pretrain_epochs", t.pretrain_epochs.to_string()),
            ("critic_steps", t.critic_steps.to_string()),
            ("clip_c", t.clip_c.to_string()),
            ("seed", t.seed.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("allow_cold_start", t.allow_cold_start.to_string()),
            ("d_model", m.d_model.to_string()),
            ("ffn_dim", m.ffn_dim.to_string()),
            ("gumbel_temperature", m.gumbel_temperature.to_string()),
            ("positional_combine", combine.to_string()),
            ("critic_pooling", pooling.to_string()),
            ("critic_feed", feed.to_string()),
            ("min_frequency", self.min_frequency.to_string()),
            ("max_vocab_size", self.max_vocab_size.to_string()),
            ("host", r.host.clone()),
            ("port", r.port.to_string()),
            ("max_sessions", r.max_sessions.to_string()),
            ("max_decode_steps", r.max_decode_steps.to_string()),
            ("request_timeout_ms", r.request_timeout.as_millis().to_string()),
            ("fallback", r.fallback.clone()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
