//! MLE pretraining, adversarial fine-tuning and the loss history.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::{CriticFeed, TrainConfig};
use crate::critic::{CriticModel, PairBatch};
use crate::error::{Error, Result};
use crate::generator::{mle_loss, GeneratorModel};
use crate::nn::{Module, Rng};
use crate::optim::OptimizerState;
use crate::tensor::{no_grad, zero_grads, Scalar, Tensor};
use crate::text::{make_batches, Batch, EncodedPair, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Adversarial,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Adversarial => "adversarial",
        }
    }
}

/// One optimizer step. Pretraining rows put the MLE loss in `loss_g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub phase: Phase,
    pub step: u64,
    pub loss_g: Option<f64>,
    pub loss_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub phase: Phase,
    /// Completed epochs in the current phase.
    pub epoch: usize,
    /// Generator (or MLE) updates so far, across phases.
    pub step: u64,
    pub pretrained: bool,
    pub history: Vec<HistoryRecord>,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            phase: Phase::Pretrain,
            epoch: 0,
            step: 0,
            pretrained: false,
            history: Vec::new(),
        }
    }
}

impl TrainState {
    pub fn records(&self, phase: Phase) -> impl Iterator<Item = &HistoryRecord> {
        self.history.iter().filter(move |r| r.phase == phase)
    }

    pub fn generator_losses(&self, phase: Phase) -> Vec<f64> {
        self.records(phase).filter_map(|r| r.loss_g).collect()
    }

    pub fn critic_losses(&self) -> Vec<f64> {
        self.records(Phase::Adversarial).filter_map(|r| r.loss_c).collect()
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("phase,step,loss_g,loss_c\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.history {
            let _ = writeln!(out, "{},{},{},{}", r.phase.as_str(), r.step, cell(r.loss_g), cell(r.loss_c));
        }
        out
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.history_csv())?)
    }
}

/// Passed to the per-epoch callback (checkpointing, evaluation, logging).
#[derive(Debug, Clone, Copy)]
pub struct EpochSummary {
    pub phase: Phase,
    pub epoch: usize,
    pub mean_loss_g: f64,
    pub mean_loss_c: Option<f64>,
}

fn finite(phase: Phase, epoch: usize, batch: usize, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            phase: phase.as_str(),
            epoch,
            batch,
            loss,
        })
    }
}

fn scalar<T: Scalar>(t: &Tensor<T>) -> Result<f64> {
    Ok(t.item()?.to_f64().unwrap_or(f64::NAN))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn payloads(seqs: &[TokenSequence]) -> Vec<&[usize]> {
    seqs.iter().map(TokenSequence::payload).collect()
}

/// Teacher-forced MLE training with Adam.
pub struct Pretrainer<T: Scalar = f32> {
    config: TrainConfig,
    optimizer: OptimizerState<T>,
    rng: Rng,
}

impl<T: Scalar> Pretrainer<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pretrainer {
            config: config.clone(),
            optimizer: OptimizerState::adam(config.pretrain_lr)?,
            rng: Rng::seed_from_u64(config.seed),
        })
    }

    /// One MLE update on `batch`; returns the loss before the update.
    pub fn step(&mut self, generator: &GeneratorModel<T>, batch: &Batch) -> Result<f64> {
        let params = generator.params();
        zero_grads(&params);
        let logits = generator.teacher_forced_logits(&batch.questions, &batch.answers_in, Some(&mut self.rng))?;
        let loss = mle_loss(&logits, &batch.targets)?;
        let value = scalar(&loss)?;
        if value.is_finite() {
            loss.backward()?;
            self.optimizer.step(&params)?;
        }
        Ok(value)
    }

    /// One shuffled pass over `corpus`.
    pub fn epoch(&mut self, generator: &GeneratorModel<T>, corpus: &[EncodedPair], state: &mut TrainState) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::EmptyBatch);
        }
        state.phase = Phase::Pretrain;
        let seed = self.config.seed.wrapping_add(state.epoch as u64);
        let mut losses = Vec::new();
        for (bi, batch) in make_batches(corpus, self.config.batch_size, Some(seed)).iter().enumerate() {
            let loss = finite(Phase::Pretrain, state.epoch, bi, self.step(generator, batch)?)?;
            state.history.push(HistoryRecord {
                phase: Phase::Pretrain,
                step: state.step,
                loss_g: Some(loss),
                loss_c: None,
            });
            state.step += 1;
            losses.push(loss);
        }
        state.epoch += 1;
        Ok(mean(&losses))
    }
}

/// Runs `config.pretrain_epochs` of MLE training, calling `on_epoch` after each.
pub fn pretrain_with<T: Scalar>(
    generator: &GeneratorModel<T>,
    corpus: &[EncodedPair],
    config: &TrainConfig,
    state: &mut TrainState,
    on_epoch: &mut dyn FnMut(&EpochSummary, &TrainState) -> Result<()>,
) -> Result<()> {
    let mut trainer = Pretrainer::new(config)?;
    state.phase = Phase::Pretrain;
    state.epoch = 0;
    for _ in 0..config.pretrain_epochs {
        let loss = trainer.epoch(generator, corpus, state)?;
        log::info!("pretrain epoch {} loss {loss:.4}", state.epoch);
        on_epoch(
            &EpochSummary {
                phase: Phase::Pretrain,
                epoch: state.epoch,
                mean_loss_g: loss,
                mean_loss_c: None,
            },
            state,
        )?;
    }
    if config.pretrain_epochs > 0 {
        state.pretrained = true;
    }
    Ok(())
}

pub fn pretrain<T: Scalar>(generator: &GeneratorModel<T>, corpus: &[EncodedPair], config: &TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::default();
    pretrain_with(generator, corpus, config, &mut state, &mut |_, _| Ok(()))?;
    Ok(state)
}

/// WGAN fine-tuning: `k` clipped RMSProp critic steps per generator step.
pub struct AdversarialTrainer<T: Scalar = f32> {
    config: TrainConfig,
    generator_opt: OptimizerState<T>,
    critic_opt: OptimizerState<T>,
    rng: Rng,
}

impl<T: Scalar> AdversarialTrainer<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdversarialTrainer {
            config: config.clone(),
            generator_opt: OptimizerState::rmsprop(config.lr)?,
            critic_opt: OptimizerState::rmsprop(config.lr)?,
            rng: Rng::seed_from_u64(config.seed ^ 0x5eed_ad5e),
        })
    }

    fn check_phase(&self, state: &TrainState) -> Result<()> {
        if state.pretrained || self.config.allow_cold_start {
            Ok(())
        } else {
            Err(Error::PhaseOrder(
                "load a pretrained generator or enable cold start".into(),
            ))
        }
    }

    fn sample_real(&mut self, corpus: &[EncodedPair], m: usize) -> Vec<EncodedPair> {
        sample(&mut self.rng, corpus.len(), m.min(corpus.len()))
            .into_iter()
            .map(|i| corpus[i].clone())
            .collect()
    }

    /// One critic update on a sampled batch; returns the loss before the update.
    pub fn critic_step(
        &mut self,
        generator: &GeneratorModel<T>,
        critic: &CriticModel<T>,
        real: &[EncodedPair],
    ) -> Result<f64> {
        let max_len = generator.config().max_len;
        let feed = generator.config().critic_feed;
        let tau = generator.config().gumbel_temperature;
        let questions: Vec<TokenSequence> = real.iter().map(|p| p.question.clone()).collect();
        let q_payloads = payloads(&questions);
        let answers: Vec<&[usize]> = real.iter().map(EncodedPair::answer_payload).collect();
        let fake = no_grad(|| -> Result<PairBatch<T>> {
            let rollout = generator.gumbel_generate(&questions, &mut self.rng, tau)?;
            let fake = PairBatch::generated(&q_payloads, &rollout, feed, max_len)?;
            // a straight-through row is an exact one-hot in the forward pass
            Ok(match feed {
                CriticFeed::StraightThrough => fake.without_rows(),
                CriticFeed::Soft => fake,
            })
        })?;
        let real = PairBatch::real(&q_payloads, &answers, max_len)?;
        let params = critic.params();
        zero_grads(&params);
        let loss = critic.critic_loss(&real, &fake, Some(&mut self.rng))?;
        let value = scalar(&loss)?;
        if value.is_finite() {
            loss.backward()?;
            self.critic_opt.step(&params)?;
            critic.clip_weights(self.config.clip_c);
            critic.assert_clipped(self.config.clip_c)?;
        }
        Ok(value)
    }

    /// One generator update through the critic, whose gradients are discarded.
    pub fn generator_step(
        &mut self,
        generator: &GeneratorModel<T>,
        critic: &CriticModel<T>,
        questions: &[TokenSequence],
    ) -> Result<f64> {
        let max_len = generator.config().max_len;
        let params = generator.params();
        zero_grads(&params);
        let rollout = generator.gumbel_generate(questions, &mut self.rng, generator.config().gumbel_temperature)?;
        let fake = PairBatch::generated(&payloads(questions), &rollout, generator.config().critic_feed, max_len)?;
        let loss = critic.generator_adv_loss(&fake, Some(&mut self.rng))?;
        let value = scalar(&loss)?;
        if value.is_finite() {
            loss.backward()?;
            zero_grads(&critic.params());
            // every rollout can end at once, leaving nothing for the critic to score
            let reached: Vec<(String, Tensor<T>)> = params.into_iter().filter(|(_, p)| p.has_grad()).collect();
            if reached.is_empty() {
                log::warn!("generator step {}: no generated tokens reached the critic", self.generator_opt.step_count());
            } else {
                self.generator_opt.step(&reached)?;
            }
        }
        Ok(value)
    }

    /// One pass over `corpus`: for each batch, `k` critic steps then one generator step.
    pub fn epoch(
        &mut self,
        generator: &GeneratorModel<T>,
        critic: &CriticModel<T>,
        corpus: &[EncodedPair],
        state: &mut TrainState,
    ) -> Result<EpochSummary> {
        self.check_phase(state)?;
        if corpus.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if state.phase != Phase::Adversarial {
            state.phase = Phase::Adversarial;
            state.epoch = 0;
        }
        let seed = self.config.seed.wrapping_add(state.epoch as u64);
        let (mut gen_losses, mut critic_losses) = (Vec::new(), Vec::new());
        for (bi, batch) in make_batches(corpus, self.config.batch_size, Some(seed)).iter().enumerate() {
            for _ in 0..self.config.critic_steps {
                let real = self.sample_real(corpus, batch.len());
                let loss_c = finite(Phase::Adversarial, state.epoch, bi, self.critic_step(generator, critic, &real)?)?;
                state.history.push(HistoryRecord {
                    phase: Phase::Adversarial,
                    step: state.step,
                    loss_g: None,
                    loss_c: Some(loss_c),
                });
                critic_losses.push(loss_c);
            }
            let loss_g = finite(
                Phase::Adversarial,
                state.epoch,
                bi,
                self.generator_step(generator, critic, &batch.questions)?,
            )?;
            state.history.push(HistoryRecord {
                phase: Phase::Adversarial,
                step: state.step,
                loss_g: Some(loss_g),
                loss_c: None,
            });
            state.step += 1;
            gen_losses.push(loss_g);
        }
        state.epoch += 1;
        Ok(EpochSummary {
            phase: Phase::Adversarial,
            epoch: state.epoch,
            mean_loss_g: mean(&gen_losses),
            mean_loss_c: Some(mean(&critic_losses)),
        })
    }
}

/// Convenience wrapper that runs a single epoch with fresh optimizer state.
pub fn adversarial_epoch<T: Scalar>(
    generator: &GeneratorModel<T>,
    critic: &CriticModel<T>,
    corpus: &[EncodedPair],
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<EpochSummary> {
    AdversarialTrainer::new(config)?.epoch(generator, critic, corpus, state)
}

/// Which phases a run includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    PretrainOnly,
    AdversarialOnly,
    Combined,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "pretrain-only" => Ok(Schedule::PretrainOnly),
            "adversarial-only" => Ok(Schedule::AdversarialOnly),
            "combined" => Ok(Schedule::Combined),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Runs the requested phases in order. The adversarial-only mode is a
/// deliberate ablation and therefore skips the pretraining gate.
pub fn run_schedule<T: Scalar>(
    schedule: Schedule,
    generator: &GeneratorModel<T>,
    critic: &CriticModel<T>,
    corpus: &[EncodedPair],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochSummary, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    let mut state = TrainState::default();
    if schedule != Schedule::AdversarialOnly {
        pretrain_with(generator, corpus, config, &mut state, on_epoch)?;
    }
    if schedule != Schedule::PretrainOnly {
        let config = TrainConfig {
            allow_cold_start: config.allow_cold_start || schedule == Schedule::AdversarialOnly,
            ..config.clone()
        };
        let mut trainer = AdversarialTrainer::new(&config)?;
        for _ in 0..config.adv_epochs {
            let summary = trainer.epoch(generator, critic, corpus, &mut state)?;
            log::info!(
                "adversarial epoch {} loss_g {:.4} loss_c {:.4}",
                summary.epoch,
                summary.mean_loss_g,
                summary.mean_loss_c.unwrap_or(f64::NAN)
            );
            on_epoch(&summary, &state)?;
        }
    }
    Ok(state)
}
