//! Tokenization, vocabulary, corpus readers and batch assembly.

mod batch;
mod chitchat;
mod cornell;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{encode_pair, make_batches, split_and_batch, split_pairs, Batch, EncodedPair, Split};
pub use chitchat::{parse_chitchat, parse_chitchat_file, ChitChatParse};
pub use cornell::{parse_cornell, parse_cornell_files, CornellParse};
pub use vocab::Vocab;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;

/// Lowercases, splits on whitespace, and emits every non-alphanumeric,
/// non-space character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() && !ch.is_control() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn attaches_left(tok: &str) -> bool {
    matches!(tok, "." | "," | "!" | "?" | ";" | ":" | "'" | ")" | "]" | "%")
}

fn attaches_right(tok: &str) -> bool {
    matches!(tok, "'" | "(" | "[" | "$" | "#")
}

/// Joins tokens with single spaces, gluing punctuation to its neighbour.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for tok in tokens {
        let tok = tok.as_ref();
        if !glue_next && !attaches_left(tok) {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = attaches_right(tok);
    }
    out
}

/// Collapses runs of whitespace and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fixed-capacity token id vector; positions `len..` hold padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<usize>,
    len: usize,
}

impl TokenSequence {
    /// Pads `ids` with PAD up to `capacity`.
    pub fn padded(mut ids: Vec<usize>, capacity: usize) -> Result<Self> {
        if ids.len() > capacity {
            return Err(Error::LengthMismatch {
                expected: capacity,
                got: ids.len(),
            });
        }
        let len = ids.len();
        ids.resize(capacity, PAD);
        Ok(TokenSequence { ids, len })
    }

    /// Wraps raw ids with an explicit length; entries past `len` are ignored
    /// by every consumer.
    pub fn with_len(ids: Vec<usize>, len: usize) -> Result<Self> {
        if len > ids.len() {
            return Err(Error::LengthMismatch {
                expected: ids.len(),
                got: len,
            });
        }
        Ok(TokenSequence { ids, len })
    }

    /// `[BOS, payload…, EOS]` padded; payload truncated to `capacity - 2`.
    pub fn framed(payload: &[usize], capacity: usize) -> Self {
        let keep = payload.len().min(capacity.saturating_sub(2));
        let mut ids = Vec::with_capacity(capacity);
        ids.push(BOS);
        ids.extend_from_slice(&payload[..keep]);
        ids.push(EOS);
        Self::padded(ids, capacity).expect("framed payload fits")
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.ids.len()
    }

    /// The non-padding prefix.
    pub fn tokens(&self) -> &[usize] {
        &self.ids[..self.len]
    }

    /// Tokens between BOS and the first EOS, excluding both.
    pub fn payload(&self) -> &[usize] {
        let toks = self.tokens();
        let start = usize::from(toks.first() == Some(&BOS));
        let end = toks[start..]
            .iter()
            .position(|&t| t == EOS)
            .map_or(toks.len(), |p| start + p);
        &toks[start..end]
    }
}

/// One question/answer exchange as normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialoguePair {
    #[serde(rename = "q")]
    pub question: String,
    #[serde(rename = "a")]
    pub answer: String,
}

impl DialoguePair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        DialoguePair {
            question: question.into(),
            answer: answer.into(),
        }
    }

    /// Both sides produce at least one token.
    pub fn is_usable(&self) -> bool {
        !tokenize(&self.question).is_empty() && !tokenize(&self.answer).is_empty()
    }
}

/// Writes pairs as line-delimited `{"q": …, "a": …}` records.
pub fn write_pairs_jsonl(path: &Path, pairs: &[DialoguePair]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<DialoguePair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: DialoguePair = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Decodes a raw corpus line, falling back to Latin-1 for non-UTF-8 bytes.
pub(crate) fn decode_line(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}
