//! Positional table, causal masking and the Gumbel-softmax head.

use std::collections::BTreeSet;

use cwgan_core::critic::PairBatch;
use cwgan_core::nn::{Module, PositionalEncodingTable, Rng};
use cwgan_core::text::{EncodedPair, TokenSequence};
use cwgan_core::toy::{copy_task_payloads, toy_model_config, FIRST_WORD, TOY_MAX_LEN, TOY_VOCAB};
use cwgan_core::{no_grad, CriticFeed, CriticModel, GeneratorModel, ModelConfig};
use rand::{Rng as _, SeedableRng};

use crate::Outcome;

pub fn positional_closed_form() -> Outcome {
    let (max_len, d_model) = (30, 64);
    let table = PositionalEncodingTable::<f64>::new(max_len, d_model).map_err(|e| e.to_string())?;
    let values = table.table().to_vec();
    let mut worst = 0.0f64;
    let mut out_of_range = 0;
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            for (col, expected) in [(2 * i, angle.sin()), (2 * i + 1, angle.cos())] {
                let got = values[pos * d_model + col];
                worst = worst.max((got - expected).abs());
                if !(-1.0..=1.0).contains(&got) {
                    out_of_range += 1;
                }
            }
        }
    }
    // the f32 table the models use must agree too
    let f32_table = PositionalEncodingTable::<f32>::new(max_len, d_model).map_err(|e| e.to_string())?;
    let worst32 = f32_table
        .table()
        .to_vec()
        .iter()
        .zip(&values)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);
    let detail = format!("30x64: max |err| {worst:.1e} (f64), {worst32:.1e} (f32); {out_of_range} entries outside [-1,1]");
    if worst <= 1e-6 && worst32 <= 1e-6 && out_of_range == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_ids(rng: &mut Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(FIRST_WORD..TOY_VOCAB)).collect()
}

/// Logits at every position up to `t` must not depend on decoder inputs after `t`.
pub fn causal_integrity() -> Outcome {
    let config = ModelConfig {
        dropout: 0.3,
        ..toy_model_config()
    };
    let generator = GeneratorModel::<f32>::new(config, 11).map_err(|e| e.to_string())?;
    let mut rng = Rng::seed_from_u64(2024);
    let v = TOY_VOCAB;
    let t_max = TOY_MAX_LEN;
    let mut checked = 0usize;
    for trial in 0..50 {
        let b = rng.gen_range(1..=4);
        let pairs: Vec<EncodedPair> = (0..b)
            .map(|_| {
                let n = rng.gen_range(1..=t_max - 2);
                let q = random_ids(&mut rng, n);
                let a = random_ids(&mut rng, t_max - 2);
                EncodedPair::from_ids(&q, &a, t_max)
            })
            .collect();
        let questions: Vec<TokenSequence> = pairs.iter().map(|p| p.question.clone()).collect();
        let answers: Vec<TokenSequence> = pairs.iter().map(|p| p.answer_in.clone()).collect();
        let t = rng.gen_range(0..t_max - 2);
        let perturbed: Vec<TokenSequence> = answers
            .iter()
            .map(|s| {
                let mut ids = s.ids().to_vec();
                for id in &mut ids[t + 1..s.len()] {
                    *id = rng.gen_range(FIRST_WORD..v);
                }
                TokenSequence::with_len(ids, s.len()).unwrap()
            })
            .collect();
        let (base, other) = no_grad(|| {
            (
                generator.teacher_forced_logits(&questions, &answers, None).map(|l| l.to_vec()),
                generator.teacher_forced_logits(&questions, &perturbed, None).map(|l| l.to_vec()),
            )
        });
        let (base, other) = (base.map_err(|e| e.to_string())?, other.map_err(|e| e.to_string())?);
        for row in 0..b {
            for pos in 0..=t {
                let at = (row * t_max + pos) * v;
                let (x, y) = (&base[at..at + v], &other[at..at + v]);
                if x.iter().zip(y).any(|(p, q)| p.to_bits() != q.to_bits()) {
                    return Err(format!("trial {trial}: row {row} position {pos} changed after perturbing > {t}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("50 trials, {checked} logit rows bit-identical under later-token perturbation"))
}

fn toy_questions(n: usize, seed: u64) -> Vec<TokenSequence> {
    copy_task_payloads(n, TOY_VOCAB, TOY_MAX_LEN, 1, seed)
        .iter()
        .map(|(q, _)| TokenSequence::framed(q, TOY_MAX_LEN))
        .collect()
}

pub fn gumbel_head() -> Outcome {
    let config = toy_model_config();
    let generator = GeneratorModel::<f32>::new(config.clone(), 5).map_err(|e| e.to_string())?;
    let questions = toy_questions(8, 9);
    let mut rng = Rng::seed_from_u64(77);
    let v = config.vocab_size;

    // rows of the relaxed distribution are normalized
    let rollout = no_grad(|| generator.gumbel_generate(&questions, &mut rng, 1.0)).map_err(|e| e.to_string())?;
    let soft = rollout.soft.to_vec();
    let worst_sum = soft
        .chunks(v)
        .map(|row| (row.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    // near-zero temperature collapses to the hard sample
    let cold = no_grad(|| generator.gumbel_generate(&questions, &mut rng, 1e-4)).map_err(|e| e.to_string())?;
    let cold_soft = cold.soft.to_vec();
    let mut worst_one_hot = 0.0f64;
    for (r, row) in cold_soft.chunks(v).enumerate() {
        let (b, step) = (r / cold.steps(), r % cold.steps());
        let hard = cold.hard[b][step];
        for (j, &x) in row.iter().enumerate() {
            let target = if j == hard { 1.0 } else { 0.0 };
            worst_one_hot = worst_one_hot.max((x as f64 - target).abs());
        }
    }

    // straight-through gradient coverage over 10 trials
    let critic = CriticModel::new(config.clone(), 6).map_err(|e| e.to_string())?;
    let params = generator.params();
    let mut reached: BTreeSet<String> = BTreeSet::new();
    let payloads: Vec<&[usize]> = questions.iter().map(TokenSequence::payload).collect();
    for trial in 0..10 {
        for (_, p) in &params {
            p.zero_grad();
        }
        let rollout = generator.gumbel_generate(&questions, &mut rng, config.gumbel_temperature).map_err(|e| e.to_string())?;
        let fake = PairBatch::generated(&payloads, &rollout, CriticFeed::StraightThrough, config.max_len)
            .map_err(|e| e.to_string())?;
        let loss = critic.generator_adv_loss(&fake, None).map_err(|e| format!("trial {trial}: {e}"))?;
        loss.backward().map_err(|e| e.to_string())?;
        for (name, p) in &params {
            if p.grad().is_some_and(|g| g.iter().any(|&x| x != 0.0)) {
                reached.insert(name.clone());
            }
        }
    }
    let missing: Vec<&str> = params
        .iter()
        .map(|(n, _)| n.as_str())
        .filter(|n| !reached.contains(*n))
        .collect();

    let detail = format!(
        "row sums within {worst_sum:.1e}; tau=1e-4 max one-hot deviation {worst_one_hot:.1e}; \
         gradient reached {}/{} parameter blocks",
        reached.len(),
        params.len()
    );
    if worst_sum <= 1e-5 && worst_one_hot <= 1e-3 && missing.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; unreached: {missing:?}"))
    }
}
