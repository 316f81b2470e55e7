//! Toy-corpus training: convergence, adversarial stability and loss shape.

use std::time::{Duration, Instant};

use cwgan_core::text::{EncodedPair, TokenSequence};
use cwgan_core::toy::{copy_task_corpus, teacher_forced_accuracy, toy_model_config, toy_train_config, train_until};
use cwgan_core::{
    run_schedule, AdversarialTrainer, CriticModel, GeneratorModel, Phase, Schedule, TrainConfig,
};

use crate::{Outcome, Shared};

pub const TOY_PAIRS: usize = 200;
pub const TOY_SHIFT: usize = 1;
pub const TOY_SEED: u64 = 42;

pub fn toy_convergence(shared: &mut Shared) -> Outcome {
    let started = Instant::now();
    let corpus = copy_task_corpus(TOY_PAIRS, TOY_SHIFT, TOY_SEED);
    let generator = GeneratorModel::new(toy_model_config(), TOY_SEED).map_err(|e| e.to_string())?;
    let config = toy_train_config();
    let (epochs, accuracy) = train_until(&generator, &corpus, &config, 0.95, 1).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    shared.toy = Some((generator, corpus));
    let detail = format!(
        "copy task (vocab 20, 200 pairs, shift {TOY_SHIFT}): {:.1}% next-token accuracy after {epochs} epochs in {:.1}s",
        accuracy * 100.0,
        elapsed.as_secs_f64()
    );
    if accuracy >= 0.95 && epochs <= config.pretrain_epochs && elapsed < Duration::from_secs(600) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// A pretrained toy generator: the converged one when available.
fn pretrained(shared: &mut Shared) -> Result<(GeneratorModel, Vec<EncodedPair>), String> {
    if let Some(toy) = &shared.toy {
        return Ok(toy.clone());
    }
    let corpus = copy_task_corpus(TOY_PAIRS, TOY_SHIFT, TOY_SEED);
    let generator = GeneratorModel::new(toy_model_config(), TOY_SEED).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        pretrain_epochs: 30,
        ..toy_train_config()
    };
    train_until(&generator, &corpus, &config, 0.95, 5).map_err(|e| e.to_string())?;
    Ok((generator, corpus))
}

/// 100 generator steps, each after k = 5 critic steps, with the clip bound
/// checked after every update. Leaves the loss history in `shared`.
pub fn adversarial_stability(shared: &mut Shared) -> Outcome {
    let (generator, corpus) = pretrained(shared)?;
    // the adversarial run must not disturb the converged model other checks reuse
    let generator = deep_copy(&generator)?;
    let critic = CriticModel::new(toy_model_config(), TOY_SEED + 1).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        critic_steps: 5,
        clip_c: 0.01,
        ..toy_train_config()
    };
    let mut trainer = AdversarialTrainer::new(&config).map_err(|e| e.to_string())?;
    let batch = config.batch_size;
    let (mut loss_g, mut loss_c) = (Vec::new(), Vec::new());
    let mut worst_weight = 0.0f64;
    for step in 0..100 {
        let at = (step * batch) % corpus.len();
        let window: Vec<EncodedPair> = corpus.iter().cycle().skip(at).take(batch).cloned().collect();
        for k in 0..config.critic_steps {
            let l = trainer
                .critic_step(&generator, &critic, &window)
                .map_err(|e| format!("critic step {step}.{k}: {e}"))?;
            let (name, w) = critic.max_abs_param();
            worst_weight = worst_weight.max(w);
            if !l.is_finite() || w > config.clip_c {
                return Err(format!("critic step {step}.{k}: loss {l}, |{name}| = {w}"));
            }
            loss_c.push(l);
        }
        let questions: Vec<TokenSequence> = window.iter().map(|p| p.question.clone()).collect();
        let l = trainer
            .generator_step(&generator, &critic, &questions)
            .map_err(|e| format!("generator step {step}: {e}"))?;
        let (name, w) = critic.max_abs_param();
        if !l.is_finite() || w > config.clip_c {
            return Err(format!("generator step {step}: loss {l}, |{name}| = {w}"));
        }
        loss_g.push(l);
    }
    let accuracy = teacher_forced_accuracy(&generator, &corpus).map_err(|e| e.to_string())?;
    shared.adversarial_losses = Some(loss_g.clone());

    // the three schedule modes, end to end on a small budget
    let mut modes = Vec::new();
    for schedule in [Schedule::PretrainOnly, Schedule::AdversarialOnly, Schedule::Combined] {
        let gen = GeneratorModel::<f32>::new(toy_model_config(), 3).map_err(|e| e.to_string())?;
        let critic = CriticModel::new(toy_model_config(), 4).map_err(|e| e.to_string())?;
        let config = TrainConfig {
            pretrain_epochs: 2,
            adv_epochs: 1,
            ..config.clone()
        };
        let state = run_schedule(schedule, &gen, &critic, &corpus[..64], &config, &mut |_, _| Ok(()))
            .map_err(|e| format!("{schedule:?}: {e}"))?;
        let pre = state.generator_losses(Phase::Pretrain).len();
        let adv = state.generator_losses(Phase::Adversarial).len();
        let expected = match schedule {
            Schedule::PretrainOnly => pre > 0 && adv == 0,
            Schedule::AdversarialOnly => pre == 0 && adv > 0,
            Schedule::Combined => pre > 0 && adv > 0,
        };
        let finite = state.history.iter().all(|r| {
            r.loss_g.is_none_or(f64::is_finite) && r.loss_c.is_none_or(f64::is_finite)
        });
        if !expected || !finite {
            return Err(format!("{schedule:?}: {pre} pretrain / {adv} adversarial steps, finite {finite}"));
        }
        modes.push(format!("{schedule:?} {pre}+{adv}"));
    }
    Ok(format!(
        "100 generator / 500 critic steps finite, max |critic weight| {worst_weight:.4} <= 0.01, \
         toy accuracy afterwards {:.1}%; schedules ran: {}",
        accuracy * 100.0,
        modes.join(", ")
    ))
}

fn deep_copy(generator: &GeneratorModel) -> Result<GeneratorModel, String> {
    let copy = GeneratorModel::new(generator.config().clone(), 0).map_err(|e| e.to_string())?;
    use cwgan_core::nn::Module;
    for ((_, dst), (_, src)) in copy.params().iter().zip(generator.params()) {
        dst.assign(&src.to_vec()).map_err(|e| e.to_string())?;
    }
    Ok(copy)
}

/// Rise-then-fall: the first and the last generator loss both sit below the
/// running maximum of the adversarial run.
pub fn loss_shape(shared: &mut Shared) -> Outcome {
    if shared.adversarial_losses.is_none() {
        adversarial_stability(shared)?;
    }
    let losses = shared.adversarial_losses.as_ref().ok_or("no adversarial run")?;
    let (first, last) = (losses[0], losses[losses.len() - 1]);
    let (argmax, max) = losses
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc });
    let detail = format!(
        "generator loss: step 0 {first:.5}, max {max:.5} at step {argmax}, final {last:.5} ({} steps)",
        losses.len()
    );
    if first < max && last < max {
        Ok(detail)
    } else {
        Err(detail)
    }
}
