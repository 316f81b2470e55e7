use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{BOS, EOS, PAD, SEP, UNK};

const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

/// Dense token ↔ id bijection. Ids 0..5 are the reserved markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const DEFAULT_MIN_FREQUENCY: usize = 3;
    pub const DEFAULT_MAX_SIZE: usize = 20_000;

    /// Builds from tokenized sentences. Tokens seen fewer than
    /// `min_frequency` times are dropped; the rest are ranked by count
    /// (ties broken lexicographically) and capped at `max_size` entries
    /// including the reserved ones.
    pub fn build<'a, I, S>(sentences: I, min_frequency: usize, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in sentences {
            for tok in sentence {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_frequency && !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = max_size.saturating_sub(RESERVED.len());
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(room).map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix present")
    }

    /// Reconstructs from an ordered token list (index = position).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Parse("vocabulary must start with the reserved markers".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Maps ids back to tokens, stopping at EOS and skipping PAD/BOS/SEP.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| !matches!(i, PAD | BOS | SEP))
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
