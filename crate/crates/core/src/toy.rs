//! Synthetic corpora for smoke runs, tests and benchmarks.

use rand::Rng as _;
use rand::SeedableRng;

use crate::checkpoint::Checkpoint;
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::generator::{token_accuracy, GeneratorModel};
use crate::nn::Rng;
use crate::tensor::no_grad;
use crate::text::{Batch, DialoguePair, EncodedPair, Vocab, SEP};
use crate::trainer::{Pretrainer, TrainState};

pub const TOY_VOCAB: usize = 20;
pub const TOY_MAX_LEN: usize = 10;

/// First id available for content tokens.
pub const FIRST_WORD: usize = SEP + 1;

/// Moves a content id `shift` places along the content range, wrapping around.
pub fn shift_token(id: usize, shift: usize, vocab_size: usize) -> usize {
    let words = vocab_size - FIRST_WORD;
    FIRST_WORD + (id - FIRST_WORD + shift) % words
}

/// `n` question/answer id payloads where the answer is the question with
/// every token shifted by `shift` (0 gives an echo task). Question lengths
/// are 2..=max_len-2.
pub fn copy_task_payloads(
    n: usize,
    vocab_size: usize,
    max_len: usize,
    shift: usize,
    seed: u64,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..=max_len - 2);
            let q: Vec<usize> = (0..len).map(|_| rng.gen_range(FIRST_WORD..vocab_size)).collect();
            let a = q.iter().map(|&t| shift_token(t, shift, vocab_size)).collect();
            (q, a)
        })
        .collect()
}

pub fn copy_task_corpus(n: usize, shift: usize, seed: u64) -> Vec<EncodedPair> {
    copy_task_payloads(n, TOY_VOCAB, TOY_MAX_LEN, shift, seed)
        .iter()
        .map(|(q, a)| EncodedPair::from_ids(q, a, TOY_MAX_LEN))
        .collect()
}

/// Vocabulary whose content words are `w5`, `w6`, … so ids decode to text.
pub fn toy_vocab(vocab_size: usize) -> Vocab {
    let mut tokens: Vec<String> = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"].map(String::from).to_vec();
    tokens.extend((FIRST_WORD..vocab_size).map(|i| format!("w{i}")));
    Vocab::from_tokens(tokens).expect("reserved prefix is correct")
}

/// The corpus as text pairs over [`toy_vocab`] words.
pub fn toy_pairs(n: usize, shift: usize, seed: u64) -> Vec<DialoguePair> {
    let word = |id: &usize| format!("w{id}");
    copy_task_payloads(n, TOY_VOCAB, TOY_MAX_LEN, shift, seed)
        .iter()
        .map(|(q, a)| {
            DialoguePair::new(
                q.iter().map(word).collect::<Vec<_>>().join(" "),
                a.iter().map(word).collect::<Vec<_>>().join(" "),
            )
        })
        .collect()
}

/// Teacher-forced next-token accuracy over `corpus`, without dropout.
pub fn teacher_forced_accuracy(generator: &GeneratorModel, corpus: &[EncodedPair]) -> Result<f64> {
    let batch = Batch::from_pairs(corpus);
    no_grad(|| {
        let logits = generator.teacher_forced_logits(&batch.questions, &batch.answers_in, None)?;
        Ok(token_accuracy(&logits, &batch.targets))
    })
}

/// Pretrains until teacher-forced accuracy reaches `target` (checked every
/// `check_every` epochs) or `config.pretrain_epochs` run out. Returns the
/// epochs used and the final accuracy.
pub fn train_until(
    generator: &GeneratorModel,
    corpus: &[EncodedPair],
    config: &TrainConfig,
    target: f64,
    check_every: usize,
) -> Result<(usize, f64)> {
    let mut trainer = Pretrainer::new(config)?;
    let mut state = TrainState::default();
    let mut accuracy = teacher_forced_accuracy(generator, corpus)?;
    for epoch in 1..=config.pretrain_epochs {
        trainer.epoch(generator, corpus, &mut state)?;
        if epoch % check_every.max(1) == 0 || epoch == config.pretrain_epochs {
            accuracy = teacher_forced_accuracy(generator, corpus)?;
            if accuracy >= target {
                return Ok((epoch, accuracy));
            }
        }
    }
    Ok((config.pretrain_epochs, accuracy))
}

/// A pretrained echo model (answer = question) on `n` toy pairs, trained
/// until teacher-forced accuracy is perfect so greedy decoding reproduces
/// every training question exactly. Returns the checkpoint and its pairs.
pub fn echo_checkpoint(n: usize, seed: u64) -> Result<(Checkpoint, Vec<DialoguePair>)> {
    let model = toy_model_config();
    let train = TrainConfig {
        seed,
        ..toy_train_config()
    };
    let generator = GeneratorModel::new(model.clone(), seed)?;
    let corpus = copy_task_corpus(n, 0, seed);
    let (epochs, accuracy) = train_until(&generator, &corpus, &train, 1.0, 5)?;
    if accuracy < 1.0 {
        return Err(Error::Config(format!("echo model reached only {accuracy:.3} after {epochs} epochs")));
    }
    let state = TrainState {
        epoch: epochs,
        pretrained: true,
        ..TrainState::default()
    };
    let checkpoint = Checkpoint {
        model_config: model,
        train_config: train,
        vocab: toy_vocab(TOY_VOCAB),
        state,
        generator,
        critic: None,
    };
    Ok((checkpoint, toy_pairs(n, 0, seed)))
}

/// 2 layers, 2 heads, width 32.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: TOY_VOCAB,
        embed_dim: 32,
        d_model: 32,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 128,
        max_len: TOY_MAX_LEN,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// Larger step size than the full-scale default so the toy task converges
/// within a couple of hundred epochs.
pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        pretrain_epochs: 200,
        adv_epochs: 1,
        batch_size: 32,
        pretrain_lr: 1e-3,
        lr: 5e-5,
        seed: 7,
        ..TrainConfig::default()
    }
}
