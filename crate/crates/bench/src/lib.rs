//! Shared inputs for the benchmarks.

use cwgan_core::text::{EncodedPair, TokenSequence};
use cwgan_core::toy::{copy_task_corpus, TOY_MAX_LEN};
use cwgan_core::Tensor;

/// Deterministic, well-scaled values without pulling in an RNG.
pub fn filled(shape: &[usize]) -> Tensor {
    Tensor::new(values(shape), shape).expect("shape matches data")
}

/// As [`filled`], but tracked by autodiff.
pub fn filled_param(shape: &[usize]) -> Tensor {
    Tensor::parameter(values(shape), shape).expect("shape matches data")
}

fn values(shape: &[usize]) -> Vec<f32> {
    let n: usize = shape.iter().product();
    (0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect()
}

pub fn toy_batch(n: usize) -> (Vec<EncodedPair>, Vec<TokenSequence>) {
    let pairs = copy_task_corpus(n, 1, 7);
    let questions = pairs.iter().map(|p| p.question.clone()).collect();
    (pairs, questions)
}

pub const MAX_LEN: usize = TOY_MAX_LEN;
