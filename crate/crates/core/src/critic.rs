//! Wasserstein critic: a transformer encoder over `[BOS, q…, SEP, a…, EOS]`
//! with an unbounded scalar head.

use rand::SeedableRng;

use crate::config::{CriticFeed, CriticPooling, ModelConfig};
use crate::error::{Error, Result};
use crate::generator::GumbelRollout;
use crate::nn::{
    dropout, join, Activation, AttentionMask, EncoderLayer, InputEmbedding, LinearLayer, Module, ParamList, Rng,
};
use crate::tensor::{lit, Scalar, Tensor};
use crate::text::{TokenSequence, BOS, EOS, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerSource {
    Real,
    Generated,
}

/// A batch of assembled pairs, optionally with `[batch × 2·max_len × vocab]`
/// rows that replace id lookups (generator updates go through these).
#[derive(Debug, Clone)]
pub struct PairBatch<T: Scalar = f32> {
    pub tokens: Vec<TokenSequence>,
    pub source: AnswerSource,
    pub rows: Option<Tensor<T>>,
}

/// `[BOS, question payload…, SEP, answer…, EOS]` padded to `2·max_len`.
/// Each side is truncated to `max_len - 2` tokens.
pub fn assemble_pair(question: &[usize], answer: &[usize], max_len: usize) -> TokenSequence {
    let keep = max_len.saturating_sub(2);
    let q = &question[..question.len().min(keep)];
    let a = &answer[..answer.len().min(keep)];
    let mut ids = Vec::with_capacity(2 * max_len);
    ids.push(BOS);
    ids.extend_from_slice(q);
    ids.push(SEP);
    ids.extend_from_slice(a);
    ids.push(EOS);
    TokenSequence::padded(ids, 2 * max_len).expect("pair fits in 2·max_len")
}

fn one_hot_rows<T: Scalar>(ids: &[usize], vocab: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); ids.len() * vocab];
    for (r, &id) in ids.iter().enumerate() {
        data[r * vocab + id] = T::one();
    }
    Tensor::new(data, &[ids.len(), vocab]).expect("sized")
}

impl<T: Scalar> PairBatch<T> {
    /// Pairs each question payload with a reference answer payload.
    pub fn real(questions: &[&[usize]], answers: &[&[usize]], max_len: usize) -> Result<Self> {
        if questions.len() != answers.len() {
            return Err(Error::LengthMismatch {
                expected: questions.len(),
                got: answers.len(),
            });
        }
        Ok(PairBatch {
            tokens: questions
                .iter()
                .zip(answers)
                .map(|(q, a)| assemble_pair(q, a, max_len))
                .collect(),
            source: AnswerSource::Real,
            rows: None,
        })
    }

    /// Pairs each question with its rollout. The answer segment's rows come
    /// from the rollout (straight-through one-hot or raw soft, per `feed`);
    /// every other position is an exact one-hot. Positions at and after the
    /// first generated EOS are replaced by the closing EOS and padding.
    pub fn generated(
        questions: &[&[usize]],
        rollout: &GumbelRollout<T>,
        feed: CriticFeed,
        max_len: usize,
    ) -> Result<Self> {
        let b = questions.len();
        if rollout.hard.len() != b {
            return Err(Error::LengthMismatch {
                expected: b,
                got: rollout.hard.len(),
            });
        }
        let vocab = rollout.soft.shape()[2];
        let width = 2 * max_len;
        let keep = max_len.saturating_sub(2);
        let mut tokens = Vec::with_capacity(b);
        let mut rows = Vec::with_capacity(b);
        for (i, q) in questions.iter().enumerate() {
            let answer = rollout.answer(i);
            let seq = assemble_pair(q, answer, max_len);
            let a_len = answer.len().min(keep);
            let a_start = 2 + q.len().min(keep);
            let ids = seq.ids();
            let mut parts = vec![one_hot_rows::<T>(&ids[..a_start], vocab)];
            if a_len > 0 {
                let soft = rollout.soft.slice(0, i, i + 1)?.slice(1, 0, a_len)?.reshape(&[a_len, vocab])?;
                parts.push(match feed {
                    CriticFeed::StraightThrough => {
                        Tensor::straight_through(&one_hot_rows(&ids[a_start..a_start + a_len], vocab), &soft)?
                    }
                    CriticFeed::Soft => soft,
                });
            }
            parts.push(one_hot_rows(&ids[a_start + a_len..], vocab));
            rows.push(Tensor::concat(&parts, 0)?.reshape(&[1, width, vocab])?);
            tokens.push(seq);
        }
        Ok(PairBatch {
            tokens,
            source: AnswerSource::Generated,
            rows: Some(Tensor::concat(&rows, 0)?),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Same pairs scored through id lookups only.
    pub fn without_rows(&self) -> Self {
        PairBatch {
            tokens: self.tokens.clone(),
            source: self.source,
            rows: None,
        }
    }

    fn validate(&self, vocab: usize) -> Result<usize> {
        let width = self.tokens.first().ok_or(Error::EmptyBatch)?.capacity();
        for seq in &self.tokens {
            if seq.capacity() != width {
                return Err(Error::LengthMismatch {
                    expected: width,
                    got: seq.capacity(),
                });
            }
            let toks = seq.tokens();
            let seps = toks.iter().filter(|&&t| t == SEP).count();
            if seps != 1 {
                return Err(Error::MalformedPair(format!("expected one SEP, found {seps}")));
            }
            if toks.first() != Some(&BOS) {
                return Err(Error::MalformedPair("pair must open with BOS".into()));
            }
            if let Some(&id) = seq.ids().iter().find(|&&id| id >= vocab) {
                return Err(Error::OutOfVocab { id, vocab_size: vocab });
            }
        }
        if let Some(rows) = &self.rows {
            if rows.shape() != [self.len(), width, vocab] {
                return Err(Error::Tensor(crate::error::TensorError::ShapeMismatch {
                    op: "pair_rows",
                    lhs: rows.shape().to_vec(),
                    rhs: vec![self.len(), width, vocab],
                }));
            }
        }
        Ok(width)
    }
}

#[derive(Debug, Clone)]
pub struct CriticModel<T: Scalar = f32> {
    config: ModelConfig,
    pub input: InputEmbedding<T>,
    pub encoder_layers: Vec<EncoderLayer<T>>,
    pub score_head: LinearLayer<T>,
}

impl<T: Scalar> CriticModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let c = &config;
        let input = InputEmbedding::new(
            c.vocab_size,
            c.embed_dim,
            c.feature_dim(),
            2 * c.max_len,
            c.positional_combine,
            &mut rng,
        )?;
        let encoder_layers = (0..c.n_layers)
            .map(|_| EncoderLayer::new(c.d_model, c.n_heads, c.ffn_dim, c.dropout, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let score_head = LinearLayer::new(c.d_model, 1, Activation::Identity, &mut rng);
        Ok(CriticModel {
            config,
            input,
            encoder_layers,
            score_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Scores `[batch]`. Rows, when present, replace id lookups.
    pub fn score_batch(&self, pairs: &PairBatch<T>, mut rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let s = pairs.validate(self.config.vocab_size)?;
        let b = pairs.len();
        let d = self.config.d_model;
        let lens: Vec<usize> = pairs.tokens.iter().map(TokenSequence::len).collect();
        let mut x = match &pairs.rows {
            Some(rows) => self.input.forward_rows(rows)?,
            None => {
                let ids: Vec<usize> = pairs.tokens.iter().flat_map(|t| t.ids().iter().copied()).collect();
                self.input.forward_ids(&ids, b, s)?
            }
        };
        x = dropout(&x, self.config.dropout, rng.as_deref_mut())?;
        let mask = AttentionMask::padding(&lens, s, s);
        for layer in &self.encoder_layers {
            x = layer.forward(&x, &mask, rng.as_deref_mut())?;
        }
        let pooled = match self.config.critic_pooling {
            CriticPooling::Mean => {
                let weights: Vec<T> = lens
                    .iter()
                    .flat_map(|&len| (0..s).map(move |j| if j < len { lit(1.0 / len as f64) } else { T::zero() }))
                    .collect();
                Tensor::new(weights, &[b, 1, s])?.matmul(&x)?
            }
            CriticPooling::First => x.slice(1, 0, 1)?,
        };
        Ok(self.score_head.forward(&pooled.reshape(&[b, d])?)?.reshape(&[b])?)
    }

    /// Scalar score of a single pair (`batch` of one).
    pub fn score(&self, pairs: &PairBatch<T>) -> Result<Tensor<T>> {
        if pairs.len() != 1 {
            return Err(Error::LengthMismatch {
                expected: 1,
                got: pairs.len(),
            });
        }
        Ok(self.score_batch(pairs, None)?.reshape(&[])?)
    }

    /// `mean(score(fake)) − mean(score(real))`, minimized by the critic.
    pub fn critic_loss(&self, real: &PairBatch<T>, fake: &PairBatch<T>, mut rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        if real.is_empty() || fake.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if real.len() != fake.len() {
            return Err(Error::LengthMismatch {
                expected: real.len(),
                got: fake.len(),
            });
        }
        let real_score = self.score_batch(real, rng.as_deref_mut())?.mean();
        let fake_score = self.score_batch(fake, rng)?.mean();
        Ok(fake_score.sub(&real_score)?)
    }

    /// `−mean(score(fake))`. Fake pairs must carry rows, otherwise the
    /// generator would silently receive no gradient.
    pub fn generator_adv_loss(&self, fake: &PairBatch<T>, rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        if fake.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if fake.rows.is_none() {
            return Err(Error::MissingSoftRows);
        }
        Ok(self.score_batch(fake, rng)?.mean().scale(-1.0))
    }

    /// Clamps every parameter to `[−c, c]`.
    pub fn clip_weights(&self, c: f64) {
        let (lo, hi): (T, T) = (lit(-c), lit(c));
        for (_, p) in self.params() {
            p.update_data(|d| d.iter_mut().for_each(|v| *v = v.max(lo).min(hi)));
        }
    }

    /// Largest absolute parameter value and the parameter holding it.
    pub fn max_abs_param(&self) -> (String, f64) {
        let mut best = (String::new(), 0.0);
        for (name, p) in self.params() {
            let m = p.data().iter().fold(0.0f64, |m, v| m.max(v.to_f64().unwrap_or(f64::NAN).abs()));
            if m > best.1 || m.is_nan() {
                best = (name, m);
            }
        }
        best
    }

    /// Errors with `ClipViolation` if any parameter lies outside `[−c, c]`.
    pub fn assert_clipped(&self, c: f64) -> Result<()> {
        let (name, value) = self.max_abs_param();
        if value > c || value.is_nan() {
            return Err(Error::ClipViolation { name, value, bound: c });
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for CriticModel<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.input.collect_params(&join(prefix, "input"), out);
        for (i, layer) in self.encoder_layers.iter().enumerate() {
            layer.collect_params(&join(prefix, &format!("encoder.{i}")), out);
        }
        self.score_head.collect_params(&join(prefix, "head"), out);
    }
}

/// Log-sigmoid GAN losses on raw scores. Kept for comparison against the
/// Wasserstein objective; training never calls these.
pub mod vanilla {
    fn log_sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            -(-x).exp().ln_1p()
        } else {
            x - x.exp().ln_1p()
        }
    }

    fn mean(v: impl Iterator<Item = f64>) -> f64 {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    }

    /// `E[log D(real)] + E[log(1 − D(fake))]` with `D = sigmoid(score)`.
    pub fn value(real: &[f64], fake: &[f64]) -> f64 {
        mean(real.iter().map(|&s| log_sigmoid(s))) + mean(fake.iter().map(|&s| log_sigmoid(-s)))
    }

    /// Discriminator minimizes the negated value.
    pub fn discriminator_loss(real: &[f64], fake: &[f64]) -> f64 {
        -value(real, fake)
    }

    /// Non-saturating generator loss `−E[log D(fake)]`.
    pub fn generator_loss(fake: &[f64]) -> f64 {
        -mean(fake.iter().map(|&s| log_sigmoid(s)))
    }
}
