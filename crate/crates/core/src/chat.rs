//! Single-turn chat on top of a generator: text in, text out.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{weights_checksum, Checkpoint};
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::text::{detokenize, tokenize, TokenSequence, Vocab};

pub const DEFAULT_FALLBACK: &str = "i do not know";

/// One exchange, as written to transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub session_id: String,
    pub user_text: String,
    pub bot_text: String,
    pub token_count: usize,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    /// Generated tokens; zero when the fallback was used.
    pub tokens: usize,
}

/// Read-only inference over a generator. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct ChatEngine {
    generator: GeneratorModel,
    vocab: Vocab,
    pub fallback: String,
    pub max_steps: usize,
}

impl ChatEngine {
    pub fn new(generator: GeneratorModel, vocab: Vocab) -> Result<Self> {
        if generator.config().vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "generator vocabulary {} does not match {} tokens",
                generator.config().vocab_size,
                vocab.len()
            )));
        }
        let max_steps = generator.config().max_len;
        Ok(ChatEngine {
            generator,
            vocab,
            fallback: DEFAULT_FALLBACK.to_string(),
            max_steps,
        })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        Self::new(checkpoint.generator, checkpoint.vocab)
    }

    pub fn generator(&self) -> &GeneratorModel {
        &self.generator
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn weights_checksum(&self) -> String {
        weights_checksum(&self.generator)
    }

    /// Greedy answer to `message`. Messages with no tokens are rejected.
    pub fn reply(&self, message: &str) -> Result<Reply> {
        let tokens = tokenize(message);
        if tokens.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        let question = TokenSequence::framed(&self.vocab.encode(&tokens), self.generator.config().max_len);
        let answer = self.generator.infer(&question, self.max_steps)?;
        let words = self.vocab.decode(answer.tokens());
        if words.is_empty() {
            return Ok(Reply {
                text: self.fallback.clone(),
                tokens: 0,
            });
        }
        Ok(Reply {
            text: detokenize(&words),
            tokens: answer.len(),
        })
    }
}
