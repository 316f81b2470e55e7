//! Transformer encoder–decoder that maps a question to an answer.

use rand::Rng as _;
use rand::SeedableRng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    dropout, join, Activation, AttentionMask, MASKED_LOGIT, DecoderLayer, EncoderLayer, InputEmbedding, LinearLayer, Module,
    ParamList, Rng,
};
use crate::tensor::{lit, no_grad, Scalar, Tensor};
use crate::text::{TokenSequence, BOS, EOS, PAD, SEP};

/// Ids that only frame or pad sequences and are never emitted while decoding.
const NEVER_EMITTED: [usize; 3] = [PAD, BOS, SEP];

#[derive(Debug, Clone)]
pub struct GeneratorModel<T: Scalar = f32> {
    config: ModelConfig,
    pub input: InputEmbedding<T>,
    pub encoder_layers: Vec<EncoderLayer<T>>,
    pub decoder_layers: Vec<DecoderLayer<T>>,
    pub output_head: LinearLayer<T>,
}

/// Encoder output plus what the decoder needs to mask it.
#[derive(Debug, Clone)]
pub struct Memory<T: Scalar = f32> {
    pub states: Tensor<T>,
    pub lens: Vec<usize>,
}

/// Result of a Gumbel-softmax rollout of `steps` tokens per question.
#[derive(Debug, Clone)]
pub struct GumbelRollout<T: Scalar = f32> {
    /// Row-major `[batch × steps]` argmax tokens, including anything after EOS.
    pub hard: Vec<Vec<usize>>,
    /// `[batch × steps × vocab]`, attached to the generator graph.
    pub soft: Tensor<T>,
}

impl<T: Scalar> GumbelRollout<T> {
    pub fn steps(&self) -> usize {
        self.soft.shape()[1]
    }

    /// Generated tokens before the first EOS.
    pub fn answer(&self, i: usize) -> &[usize] {
        let row = &self.hard[i];
        &row[..row.iter().position(|&t| t == EOS).unwrap_or(row.len())]
    }
}

impl<T: Scalar> GeneratorModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let c = &config;
        let input = InputEmbedding::new(
            c.vocab_size,
            c.embed_dim,
            c.feature_dim(),
            c.max_len,
            c.positional_combine,
            &mut rng,
        )?;
        let encoder_layers = (0..c.n_layers)
            .map(|_| EncoderLayer::new(c.d_model, c.n_heads, c.ffn_dim, c.dropout, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let decoder_layers = (0..c.n_layers)
            .map(|_| DecoderLayer::new(c.d_model, c.n_heads, c.ffn_dim, c.dropout, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let output_head = LinearLayer::new(c.d_model, c.vocab_size, Activation::Identity, &mut rng);
        Ok(GeneratorModel {
            config,
            input,
            encoder_layers,
            decoder_layers,
            output_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_ids(&self, seqs: &[TokenSequence]) -> Result<()> {
        let vocab_size = self.config.vocab_size;
        for s in seqs {
            if let Some(&id) = s.ids().iter().find(|&&id| id >= vocab_size) {
                return Err(Error::OutOfVocab { id, vocab_size });
            }
        }
        Ok(())
    }

    fn uniform_capacity(seqs: &[TokenSequence]) -> Result<usize> {
        let cap = seqs.first().ok_or(Error::EmptyBatch)?.capacity();
        match seqs.iter().find(|s| s.capacity() != cap) {
            Some(s) => Err(Error::LengthMismatch {
                expected: cap,
                got: s.capacity(),
            }),
            None => Ok(cap),
        }
    }

    /// Runs the encoder over a batch of questions. Dropout is active iff `rng` is given.
    pub fn encode(&self, questions: &[TokenSequence], mut rng: Option<&mut Rng>) -> Result<Memory<T>> {
        let t = Self::uniform_capacity(questions)?;
        if t > self.config.max_len {
            return Err(Error::LengthMismatch {
                expected: self.config.max_len,
                got: t,
            });
        }
        if questions.iter().any(|q| q.tokens().iter().all(|&id| id == PAD)) {
            return Err(Error::EmptyQuestion);
        }
        self.check_ids(questions)?;
        let b = questions.len();
        let ids: Vec<usize> = questions.iter().flat_map(|q| q.ids().iter().copied()).collect();
        let lens: Vec<usize> = questions.iter().map(TokenSequence::len).collect();
        let mask = AttentionMask::padding(&lens, t, t);
        let mut x = self.input.forward_ids(&ids, b, t)?;
        x = dropout(&x, self.config.dropout, rng.as_deref_mut())?;
        for layer in &self.encoder_layers {
            x = layer.forward(&x, &mask, rng.as_deref_mut())?;
        }
        Ok(Memory { states: x, lens })
    }

    /// Decoder over `[batch × len]` input ids, returning `[batch × len × vocab]` logits.
    fn decode_ids(
        &self,
        memory: &Memory<T>,
        ids: &[usize],
        lens: &[usize],
        len: usize,
        mut rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>> {
        let b = lens.len();
        let tk = memory.states.shape()[1];
        let self_mask = AttentionMask::padding(lens, len, len).combine(&AttentionMask::causal(b, len))?;
        let memory_mask = AttentionMask::padding(&memory.lens, len, tk);
        let mut x = self.input.forward_ids(ids, b, len)?;
        x = dropout(&x, self.config.dropout, rng.as_deref_mut())?;
        for layer in &self.decoder_layers {
            x = layer.forward(&x, &memory.states, &self_mask, &memory_mask, rng.as_deref_mut())?;
        }
        Ok(self.output_head.forward(&x)?)
    }

    /// `[batch × vocab]` logits for the last prefix position, with framing
    /// ids pushed to the masked value.
    fn next_token_logits(&self, memory: &Memory<T>, prefixes: &[Vec<usize>], rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let b = prefixes.len();
        let len = prefixes[0].len();
        let v = self.config.vocab_size;
        let ids: Vec<usize> = prefixes.iter().flatten().copied().collect();
        let logits = self.decode_ids(memory, &ids, &vec![len; b], len, rng)?;
        let mut mask = vec![T::zero(); v];
        for id in NEVER_EMITTED {
            mask[id] = lit(MASKED_LOGIT);
        }
        Ok(logits.slice(1, len - 1, len)?.reshape(&[b, v])?.add(&Tensor::new(mask, &[v])?)?)
    }

    /// Teacher-forced logits `[batch × max_len × vocab]`; position `t` scores
    /// the token that follows `answers_in[t]`.
    pub fn teacher_forced_logits(
        &self,
        questions: &[TokenSequence],
        answers_in: &[TokenSequence],
        mut rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>> {
        if questions.len() != answers_in.len() {
            return Err(Error::LengthMismatch {
                expected: questions.len(),
                got: answers_in.len(),
            });
        }
        let t = Self::uniform_capacity(answers_in)?;
        if t != self.config.max_len {
            return Err(Error::LengthMismatch {
                expected: self.config.max_len,
                got: t,
            });
        }
        if let Some(bad) = answers_in.iter().find(|a| a.tokens().first() != Some(&BOS)) {
            return Err(Error::MalformedPair(format!(
                "decoder input must start with BOS, got {:?}",
                bad.tokens().first()
            )));
        }
        self.check_ids(answers_in)?;
        let memory = self.encode(questions, rng.as_deref_mut())?;
        let ids: Vec<usize> = answers_in.iter().flat_map(|a| a.ids().iter().copied()).collect();
        let lens: Vec<usize> = answers_in.iter().map(TokenSequence::len).collect();
        self.decode_ids(&memory, &ids, &lens, t, rng)
    }

    /// Straight-through Gumbel-softmax rollout of `max_len - 1` steps with no
    /// dropout. The hard token is fed back to the decoder; the soft rows keep
    /// the graph so a critic score can reach every generator parameter.
    pub fn gumbel_generate(&self, questions: &[TokenSequence], rng: &mut Rng, tau: f64) -> Result<GumbelRollout<T>> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("gumbel temperature {tau} must be positive")));
        }
        let memory = self.encode(questions, None)?;
        let b = questions.len();
        let v = self.config.vocab_size;
        let steps = self.config.max_len - 1;
        let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; b];
        let mut soft_steps = Vec::with_capacity(steps);
        for _ in 0..steps {
            let last = self.next_token_logits(&memory, &prefixes, None)?;
            let noise: Vec<T> = (0..b * v)
                .map(|_| {
                    // open interval keeps both logs finite
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    lit(-(-u.ln()).ln())
                })
                .collect();
            let soft = last.add(&Tensor::new(noise, &[b, v])?)?.scale(1.0 / tau).softmax();
            for (prefix, tok) in prefixes.iter_mut().zip(soft.argmax_last()) {
                prefix.push(tok);
            }
            soft_steps.push(soft.reshape(&[b, 1, v])?);
        }
        Ok(GumbelRollout {
            hard: prefixes.into_iter().map(|p| p[1..].to_vec()).collect(),
            soft: Tensor::concat(&soft_steps, 1)?,
        })
    }

    /// Greedy decode for a batch; each answer stops at its own EOS or after
    /// `max_steps` tokens. Runs without dropout or graph recording.
    pub fn infer_batch(&self, questions: &[TokenSequence], max_steps: usize) -> Result<Vec<TokenSequence>> {
        let max_steps = max_steps.min(self.config.max_len);
        no_grad(|| {
            let memory = self.encode(questions, None)?;
            let b = questions.len();
            let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; b];
            let mut done = vec![false; b];
            for _ in 0..max_steps {
                let next = self.next_token_logits(&memory, &prefixes, None)?.argmax_last();
                for (i, tok) in next.into_iter().enumerate() {
                    // finished rows keep a PAD so every prefix stays the same length
                    if done[i] || tok == EOS {
                        done[i] = true;
                        prefixes[i].push(PAD);
                    } else {
                        prefixes[i].push(tok);
                    }
                }
                if done.iter().all(|&d| d) {
                    break;
                }
            }
            prefixes
                .into_iter()
                .map(|p| {
                    let answer: Vec<usize> = p[1..].iter().copied().take_while(|&t| t != PAD).collect();
                    TokenSequence::padded(answer, max_steps)
                })
                .collect()
        })
    }

    pub fn infer(&self, question: &TokenSequence, max_steps: usize) -> Result<TokenSequence> {
        Ok(self.infer_batch(std::slice::from_ref(question), max_steps)?.remove(0))
    }
}

/// Mean negative log-likelihood of `targets` over non-pad positions.
pub fn mle_loss<T: Scalar>(logits: &Tensor<T>, targets: &[TokenSequence]) -> Result<Tensor<T>> {
    let (b, t) = match logits.shape() {
        [b, t, _] => (*b, *t),
        other => {
            return Err(Error::LengthMismatch {
                expected: 3,
                got: other.len(),
            })
        }
    };
    if targets.len() != b {
        return Err(Error::LengthMismatch {
            expected: b,
            got: targets.len(),
        });
    }
    if let Some(bad) = targets.iter().find(|s| s.capacity() != t) {
        return Err(Error::LengthMismatch {
            expected: t,
            got: bad.capacity(),
        });
    }
    let count: usize = targets.iter().map(TokenSequence::len).sum();
    if count == 0 {
        return Err(Error::EmptyTarget);
    }
    let ids: Vec<usize> = targets.iter().flat_map(|s| s.ids().iter().copied()).collect();
    let weight: T = lit(1.0 / count as f64);
    let weights: Vec<T> = targets
        .iter()
        .flat_map(|s| (0..t).map(move |i| if i < s.len() { weight } else { T::zero() }))
        .collect();
    let picked = logits.log_softmax().gather_last(&ids)?;
    Ok(picked.mul(&Tensor::new(weights, &[b, t])?)?.sum().scale(-1.0))
}

/// Fraction of non-pad target positions whose argmax logit is the target.
pub fn token_accuracy<T: Scalar>(logits: &Tensor<T>, targets: &[TokenSequence]) -> f64 {
    let t = logits.shape()[1];
    let predicted = logits.argmax_last();
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, s) in targets.iter().enumerate() {
        for (j, &target) in s.tokens().iter().enumerate() {
            total += 1;
            hit += usize::from(predicted[i * t + j] == target);
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

impl<T: Scalar> Module<T> for GeneratorModel<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.input.collect_params(&join(prefix, "input"), out);
        for (i, layer) in self.encoder_layers.iter().enumerate() {
            layer.collect_params(&join(prefix, &format!("encoder.{i}")), out);
        }
        for (i, layer) in self.decoder_layers.iter().enumerate() {
            layer.collect_params(&join(prefix, &format!("decoder.{i}")), out);
        }
        self.output_head.collect_params(&join(prefix, "head"), out);
    }
}
