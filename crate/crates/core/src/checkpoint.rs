//! Binary checkpoint container.
//!
//! ```text
//! "CWGC" | version u32 | header_len u32 | header JSON
//!        | vocab_len u32 | (token_len u32, utf-8)*
//!        | tensor_count u32 | (name_len u32, name, rank u32, dims u32*, f32 values)*
//!        | sha256 of everything above
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, TrainConfig};
use crate::critic::CriticModel;
use crate::error::{CheckpointError, Result};
use crate::generator::GeneratorModel;
use crate::nn::Module;
use crate::tensor::Tensor;
use crate::text::Vocab;
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 4] = b"CWGC";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    state: TrainState,
    has_critic: bool,
}

/// Everything a checkpoint holds, with live models.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocab,
    pub state: TrainState,
    pub generator: GeneratorModel,
    pub critic: Option<CriticModel>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
            state: self.state.clone(),
            has_critic: self.critic.is_some(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_bytes(&mut out, &serde_json::to_vec(&header)?);
        put_u32(&mut out, len_u32(self.vocab.len()));
        for token in self.vocab.tokens() {
            put_bytes(&mut out, token.as_bytes());
        }
        let tensors = self.named_tensors();
        put_u32(&mut out, len_u32(tensors.len()));
        for (name, t) in &tensors {
            put_bytes(&mut out, name.as_bytes());
            put_u32(&mut out, len_u32(t.rank()));
            for &d in t.shape() {
                put_u32(&mut out, len_u32(d));
            }
            for v in t.data().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                CheckpointError::ChecksumMismatch
            } else {
                CheckpointError::BadMagic
            }
            .into());
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        if bytes.len() < 8 + DIGEST_LEN {
            return Err(CheckpointError::ChecksumMismatch.into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version).into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::ChecksumMismatch.into());
        }

        let mut r = Reader { buf: body, pos: 8 };
        let header: Header = serde_json::from_slice(r.bytes()?)
            .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        let vocab_len = r.u32()? as usize;
        let tokens = (0..vocab_len)
            .map(|_| r.string())
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = Vocab::from_tokens(tokens)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(name, (shape, values));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes after tensors".into()).into());
        }

        if header.model.vocab_size != vocab.len() {
            return Err(CheckpointError::Incompatible(format!(
                "model vocabulary {} but {} tokens stored",
                header.model.vocab_size,
                vocab.len()
            ))
            .into());
        }
        let generator = GeneratorModel::new(header.model.clone(), 0)?;
        restore(&generator, "generator", &mut tensors)?;
        let critic = if header.has_critic {
            let critic = CriticModel::new(header.model.clone(), 0)?;
            restore(&critic, "critic", &mut tensors)?;
            Some(critic)
        } else {
            None
        };
        if let Some(name) = tensors.keys().next() {
            return Err(CheckpointError::Incompatible(format!("unexpected tensor {name}")).into());
        }
        Ok(Checkpoint {
            model_config: header.model,
            train_config: header.train,
            vocab,
            state: header.state,
            generator,
            critic,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // write-then-rename so a crash never leaves a half-written checkpoint
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(CheckpointError::Io)?;
        fs::rename(&tmp, path).map_err(CheckpointError::Io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(CheckpointError::Io)?)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.generator.collect_params("generator", &mut out);
        if let Some(critic) = &self.critic {
            critic.collect_params("critic", &mut out);
        }
        out
    }
}

fn restore<M: Module<f32>>(
    model: &M,
    prefix: &str,
    tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>,
) -> Result<()> {
    let mut params = Vec::new();
    model.collect_params(prefix, &mut params);
    for (name, p) in params {
        let (shape, values) = tensors
            .remove(&name)
            .ok_or_else(|| CheckpointError::Incompatible(format!("missing tensor {name}")))?;
        if shape != p.shape() {
            return Err(CheckpointError::Incompatible(format!(
                "{name}: stored shape {shape:?}, model expects {:?}",
                p.shape()
            ))
            .into());
        }
        p.assign(&values)?;
    }
    Ok(())
}

/// SHA-256 over parameter names, shapes and values, hex encoded. Used to show
/// that serving never mutates weights.
pub fn weights_checksum<M: Module<f32>>(model: &M) -> String {
    let mut hasher = Sha256::new();
    for (name, p) in model.params() {
        hasher.update(name.as_bytes());
        for &d in p.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in p.data().iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Short identifier derived from the file checksum.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    let tail = &bytes[bytes.len().saturating_sub(DIGEST_LEN)..];
    hex::encode(&tail[..tail.len().min(6)])
}

fn len_u32(n: usize) -> u32 {
    u32::try_from(n).expect("checkpoint sections are far below 4 GiB")
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, len_u32(bytes.len()));
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("section overruns file at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}
