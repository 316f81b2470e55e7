use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::config::TrainConfig;
use crate::nn::{AttentionMask, Rng};

use super::{tokenize, DialoguePair, TokenSequence, Vocab, BOS, EOS};

/// Seeded train/test partition. `*_ids` index into the input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DialoguePair>,
    pub test: Vec<DialoguePair>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Shuffles with `seed` and holds out `round(n · test_ratio)` pairs.
pub fn split_pairs(pairs: &[DialoguePair], test_ratio: f64, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut Rng::seed_from_u64(seed));
    let n_test = ((pairs.len() as f64) * test_ratio).round() as usize;
    let (test_ids, train_ids) = order.split_at(n_test.min(pairs.len()));
    Split {
        train: train_ids.iter().map(|&i| pairs[i].clone()).collect(),
        test: test_ids.iter().map(|&i| pairs[i].clone()).collect(),
        train_ids: train_ids.to_vec(),
        test_ids: test_ids.to_vec(),
    }
}

/// A pair in model-ready form, every sequence exactly `max_len` long.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    /// `[BOS, q…, EOS]`
    pub question: TokenSequence,
    /// `[BOS, a…]`, decoder input under teacher forcing.
    pub answer_in: TokenSequence,
    /// `[a…, EOS]`, decoder target.
    pub target: TokenSequence,
}

impl EncodedPair {
    /// Builds the three sequences from id payloads, truncating each to
    /// `max_len - 2` tokens.
    pub fn from_ids(question: &[usize], answer: &[usize], max_len: usize) -> Self {
        let keep = max_len - 2;
        let answer = &answer[..answer.len().min(keep)];
        let mut answer_in = vec![BOS];
        answer_in.extend_from_slice(answer);
        let mut target = answer.to_vec();
        target.push(EOS);
        EncodedPair {
            question: TokenSequence::framed(question, max_len),
            answer_in: TokenSequence::padded(answer_in, max_len).expect("fits"),
            target: TokenSequence::padded(target, max_len).expect("fits"),
        }
    }

    pub fn answer_payload(&self) -> &[usize] {
        &self.answer_in.tokens()[1..]
    }
}

pub fn encode_pair(pair: &DialoguePair, vocab: &Vocab, max_len: usize) -> EncodedPair {
    EncodedPair::from_ids(
        &vocab.encode(&tokenize(&pair.question)),
        &vocab.encode(&tokenize(&pair.answer)),
        max_len,
    )
}

/// Column-aligned sequences for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub questions: Vec<TokenSequence>,
    pub answers_in: Vec<TokenSequence>,
    pub targets: Vec<TokenSequence>,
}

impl Batch {
    pub fn from_pairs(pairs: &[EncodedPair]) -> Self {
        Batch {
            questions: pairs.iter().map(|p| p.question.clone()).collect(),
            answers_in: pairs.iter().map(|p| p.answer_in.clone()).collect(),
            targets: pairs.iter().map(|p| p.target.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.questions.first().map_or(0, TokenSequence::capacity)
    }

    /// Encoder self-attention mask over question padding.
    pub fn question_mask(&self) -> AttentionMask {
        let lens: Vec<usize> = self.questions.iter().map(TokenSequence::len).collect();
        AttentionMask::padding(&lens, self.max_len(), self.max_len())
    }

    /// Decoder self-attention mask: causal and answer padding combined.
    pub fn decoder_mask(&self) -> AttentionMask {
        let lens: Vec<usize> = self.answers_in.iter().map(TokenSequence::len).collect();
        let t = self.max_len();
        AttentionMask::padding(&lens, t, t)
            .combine(&AttentionMask::causal(self.len(), t))
            .expect("same dims")
    }
}

/// Groups encoded pairs into batches, shuffling first when `seed` is given.
pub fn make_batches(pairs: &[EncodedPair], batch_size: usize, seed: Option<u64>) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut Rng::seed_from_u64(seed));
    }
    if pairs.len() < batch_size && !pairs.is_empty() {
        log::warn!("corpus of {} pairs is smaller than one batch of {batch_size}", pairs.len());
    }
    order
        .chunks(batch_size.max(1))
        .map(|idx| {
            let chunk: Vec<EncodedPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
            Batch::from_pairs(&chunk)
        })
        .collect()
}

/// Splits, encodes the training side with `vocab`, and batches it.
/// Returns the training batches and the untouched test pairs.
pub fn split_and_batch(
    pairs: &[DialoguePair],
    vocab: &Vocab,
    config: &TrainConfig,
    max_len: usize,
    seed: u64,
) -> (Vec<Batch>, Vec<DialoguePair>) {
    let split = split_pairs(pairs, config.test_split, seed);
    let encoded: Vec<EncodedPair> = split.train.iter().map(|p| encode_pair(p, vocab, max_len)).collect();
    (make_batches(&encoded, config.batch_size, Some(seed)), split.test)
}
