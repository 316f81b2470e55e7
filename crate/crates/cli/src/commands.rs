use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use cwgan_core::checkpoint::checkpoint_id;
use cwgan_core::text::{
    encode_pair, parse_chitchat_file, parse_cornell_files, read_pairs_jsonl, split_pairs, tokenize, write_pairs_jsonl,
    DialoguePair, EncodedPair, Vocab,
};
use cwgan_core::trainer::EpochSummary;
use cwgan_core::{
    evaluate_corpus, pretrain_with, run_schedule, AdversarialTrainer, ChatEngine, Checkpoint, CriticModel,
    GeneratorModel, GeneratorResponder, ModelConfig, Schedule, TrainState,
};

use crate::error::{with_path, CliError};
use crate::settings::{RuntimeConfig, Settings};
use crate::{repl, server, Cli, Command, CorpusFormat};

fn require(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}

fn load_settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut settings = Settings::default();
    if let Some(path) = &cli.global.config {
        settings.apply_file(require(path)?)?;
    }
    settings.apply_overrides(&cli.global.overrides)?;
    if let Some(seed) = cli.global.seed {
        settings.train.seed = seed;
    }
    settings.model.validate()?;
    settings.train.validate()?;
    Ok(settings)
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String), CliError> {
    let bytes = fs::read(require(path)?).map_err(|e| CliError::from_io(e, path))?;
    let checkpoint = Checkpoint::from_bytes(&bytes).map_err(|e| with_path(e, path))?;
    Ok((checkpoint, checkpoint_id(&bytes)))
}

fn read_pairs(path: &Path) -> Result<Vec<DialoguePair>, CliError> {
    read_pairs_jsonl(require(path)?).map_err(|e| with_path(e, path))
}

fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    Vocab::load(require(path)?).map_err(|e| with_path(e, path))
}

fn encode_all(pairs: &[DialoguePair], vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedPair>, CliError> {
    let encoded: Vec<EncodedPair> = pairs
        .iter()
        .filter(|p| p.is_usable())
        .map(|p| encode_pair(p, vocab, max_len))
        .collect();
    if encoded.is_empty() {
        return Err(CliError::Usage("training file holds no usable pairs".into()));
    }
    Ok(encoded)
}

fn history_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.with_extension("history.csv"))
}

/// Chat engine configured from the runtime section.
pub fn engine(checkpoint: Checkpoint, runtime: &RuntimeConfig) -> Result<ChatEngine, CliError> {
    let mut engine = ChatEngine::from_checkpoint(checkpoint)?;
    engine.fallback = runtime.fallback.clone();
    engine.max_steps = runtime.max_decode_steps.clamp(1, engine.generator().config().max_len);
    Ok(engine)
}

struct Saver<'a> {
    settings: &'a Settings,
    model: &'a ModelConfig,
    vocab: &'a Vocab,
}

impl Saver<'_> {
    fn save(
        &self,
        path: &Path,
        state: &TrainState,
        generator: &GeneratorModel,
        critic: Option<&CriticModel>,
    ) -> Result<(), CliError> {
        Checkpoint {
            model_config: self.model.clone(),
            train_config: self.settings.train.clone(),
            vocab: self.vocab.clone(),
            state: state.clone(),
            generator: generator.clone(),
            critic: critic.cloned(),
        }
        .save(path)
        .map_err(|e| with_path(e, path))
    }

    /// Per-epoch hook: periodic checkpoints and held-out scoring.
    fn on_epoch(
        &self,
        out: &Path,
        test: &[DialoguePair],
        generator: &GeneratorModel,
        critic: Option<&CriticModel>,
        summary: &EpochSummary,
        state: &TrainState,
    ) -> cwgan_core::Result<()> {
        let t = &self.settings.train;
        if t.checkpoint_every > 0 && summary.epoch.is_multiple_of(t.checkpoint_every) {
            self.save(out, state, generator, critic)
                .map_err(|e| cwgan_core::Error::Config(e.to_string()))?;
        }
        if !test.is_empty() && t.eval_every > 0 && summary.epoch.is_multiple_of(t.eval_every) {
            let report = evaluate_corpus(&GeneratorResponder::new(generator, self.vocab), test, "heldout")?;
            log::info!(
                "{} epoch {}: bleu4 {:.4} rouge_l {:.4} f {:.4} meteor {:.4}",
                summary.phase.as_str(),
                summary.epoch,
                report.bleu4,
                report.rouge_l,
                report.f_measure,
                report.meteor
            );
        }
        Ok(())
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = load_settings(&cli)?;
    let seed = settings.train.seed;
    match cli.command {
        Command::Config => {
            out.write_all(settings.dump().as_bytes()).map_err(stdout_err)?;
        }
        Command::PrepareData {
            format,
            input,
            conversations,
            out_dir,
        } => {
            let pairs = match format {
                CorpusFormat::Cornell => {
                    let conversations = conversations
                        .ok_or_else(|| CliError::Usage("--conversations is required for the cornell format".into()))?;
                    let parse = parse_cornell_files(require(&input)?, require(&conversations)?)
                        .map_err(|e| with_path(e, &input))?;
                    writeln!(
                        out,
                        "cornell: {} lines, {} conversations, {} pairs ({} malformed rows, {} missing references, {} empty)",
                        parse.lines_parsed,
                        parse.conversations,
                        parse.pairs.len(),
                        parse.skipped_malformed,
                        parse.missing_refs,
                        parse.dropped_empty
                    )
                    .map_err(stdout_err)?;
                    parse.pairs
                }
                CorpusFormat::Chitchat => {
                    let parse = parse_chitchat_file(require(&input)?).map_err(|e| with_path(e, &input))?;
                    writeln!(
                        out,
                        "chitchat: {} conversations, {} messages, {} pairs",
                        parse.conversations,
                        parse.utterances,
                        parse.pairs.len()
                    )
                    .map_err(stdout_err)?;
                    parse.pairs
                }
            };
            let split = split_pairs(&pairs, settings.train.test_split, seed);
            fs::create_dir_all(&out_dir).map_err(|e| CliError::from_io(e, &out_dir))?;
            for (name, set) in [("train.jsonl", &split.train), ("test.jsonl", &split.test)] {
                let path = out_dir.join(name);
                write_pairs_jsonl(&path, set).map_err(|e| with_path(e, &path))?;
            }
            writeln!(out, "{} train / {} test pairs in {}", split.train.len(), split.test.len(), out_dir.display())
                .map_err(stdout_err)?;
        }
        Command::BuildVocab { train, out: path } => {
            let pairs = read_pairs(&train)?;
            let sentences: Vec<Vec<String>> = pairs
                .iter()
                .flat_map(|p| [tokenize(&p.question), tokenize(&p.answer)])
                .collect();
            let vocab = Vocab::build(sentences.iter().map(Vec::as_slice), settings.min_frequency, settings.max_vocab_size);
            vocab.save(&path).map_err(|e| with_path(e, &path))?;
            writeln!(out, "{} tokens written to {}", vocab.len(), path.display()).map_err(stdout_err)?;
        }
        Command::Pretrain {
            train,
            vocab,
            out: path,
            test,
            history,
        } => {
            let vocab = load_vocab(&vocab)?;
            let model = ModelConfig {
                vocab_size: vocab.len(),
                ..settings.model.clone()
            };
            let corpus = encode_all(&read_pairs(&train)?, &vocab, model.max_len)?;
            let test = match &test {
                Some(p) => read_pairs(p)?,
                None => Vec::new(),
            };
            let generator = GeneratorModel::new(model.clone(), seed)?;
            let saver = Saver {
                settings: &settings,
                model: &model,
                vocab: &vocab,
            };
            let mut state = TrainState::default();
            pretrain_with(&generator, &corpus, &settings.train, &mut state, &mut |s, st| {
                saver.on_epoch(&path, &test, &generator, None, s, st)
            })?;
            saver.save(&path, &state, &generator, None)?;
            let csv = history_path(&history, &path);
            state.write_history_csv(&csv).map_err(|e| with_path(e, &csv))?;
            writeln!(out, "pretrained {} epochs; checkpoint {}", state.epoch, path.display()).map_err(stdout_err)?;
        }
        Command::TrainAdv {
            train,
            checkpoint,
            vocab,
            out: path,
            schedule,
            allow_cold_start,
            history,
        } => {
            let mut settings = settings.clone();
            settings.train.allow_cold_start |= allow_cold_start;
            let schedule = schedule
                .map(|s| s.parse::<Schedule>().map_err(|e| CliError::Usage(e.to_string())))
                .transpose()?;
            let (model, vocab, generator, critic, mut state) = match (&checkpoint, schedule) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage("--schedule trains from fresh weights; drop --checkpoint".into()))
                }
                (Some(ck), None) => {
                    let (ck, _) = load_checkpoint(ck)?;
                    let critic = match ck.critic {
                        Some(c) => c,
                        None => CriticModel::new(ck.model_config.clone(), seed.wrapping_add(1))?,
                    };
                    (ck.model_config, ck.vocab, ck.generator, critic, ck.state)
                }
                (None, _) => {
                    if schedule.is_none() && !settings.train.allow_cold_start {
                        return Err(CliError::Incompatible(
                            "adversarial training needs a pretrained checkpoint (--checkpoint); \
                             pass --allow-cold-start to train from random weights"
                                .into(),
                        ));
                    }
                    let vocab_path = vocab
                        .as_ref()
                        .ok_or_else(|| CliError::Usage("--vocab is required without --checkpoint".into()))?;
                    let vocab = load_vocab(vocab_path)?;
                    let model = ModelConfig {
                        vocab_size: vocab.len(),
                        ..settings.model.clone()
                    };
                    let generator = GeneratorModel::new(model.clone(), seed)?;
                    let critic = CriticModel::new(model.clone(), seed.wrapping_add(1))?;
                    (model, vocab, generator, critic, TrainState::default())
                }
            };
            if vocab.len() != model.vocab_size {
                return Err(CliError::Incompatible("checkpoint vocabulary does not match its model".into()));
            }
            let corpus = encode_all(&read_pairs(&train)?, &vocab, model.max_len)?;
            let saver = Saver {
                settings: &settings,
                model: &model,
                vocab: &vocab,
            };
            let mut hook = |s: &EpochSummary, st: &TrainState| saver.on_epoch(&path, &[], &generator, Some(&critic), s, st);
            match schedule {
                Some(schedule) => {
                    state = run_schedule(schedule, &generator, &critic, &corpus, &settings.train, &mut hook)?;
                }
                None => {
                    let mut trainer = AdversarialTrainer::new(&settings.train)?;
                    for _ in 0..settings.train.adv_epochs {
                        let summary = trainer.epoch(&generator, &critic, &corpus, &mut state)?;
                        log::info!(
                            "adversarial epoch {} loss_g {:.4} loss_c {:.4}",
                            summary.epoch,
                            summary.mean_loss_g,
                            summary.mean_loss_c.unwrap_or(f64::NAN)
                        );
                        hook(&summary, &state)?;
                    }
                }
            }
            saver.save(&path, &state, &generator, Some(&critic))?;
            let csv = history_path(&history, &path);
            state.write_history_csv(&csv).map_err(|e| with_path(e, &csv))?;
            writeln!(out, "trained to step {}; checkpoint {}", state.step, path.display()).map_err(stdout_err)?;
        }
        Command::Eval {
            checkpoint,
            test,
            out: path,
            corpus,
        } => {
            let (ck, _) = load_checkpoint(&checkpoint)?;
            let test = read_pairs(&test)?;
            let mut responder = GeneratorResponder::new(&ck.generator, &ck.vocab);
            responder.max_steps = settings.runtime.max_decode_steps.clamp(1, ck.model_config.max_len);
            let report = evaluate_corpus(&responder, &test, &corpus)?;
            report.write(&path).map_err(|e| with_path(e, &path))?;
            writeln!(
                out,
                "{corpus}: n={} bleu4={:.4} rouge_l={:.4} f={:.4} meteor={:.4} -> {}",
                report.n,
                report.bleu4,
                report.rouge_l,
                report.f_measure,
                report.meteor,
                path.display()
            )
            .map_err(stdout_err)?;
        }
        Command::Chat {
            checkpoint,
            transcript,
            session,
        } => {
            let (ck, _) = load_checkpoint(&checkpoint)?;
            let engine = engine(ck, &settings.runtime)?;
            let mut transcript = match &transcript {
                Some(p) => Some(
                    fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(p)
                        .map_err(|e| CliError::from_io(e, p))?,
                ),
                None => None,
            };
            let stdin = io::stdin();
            repl::run(
                &engine,
                &mut stdin.lock(),
                out,
                transcript.as_mut().map(|f| f as &mut dyn Write),
                &session,
            )?;
        }
        Command::Serve { checkpoint, host, port } => {
            let mut runtime = settings.runtime.clone();
            if let Some(h) = host {
                runtime.host = h;
            }
            if let Some(p) = port {
                runtime.port = p;
            }
            require(&checkpoint)?;
            server::serve_blocking(checkpoint, runtime)?;
        }
    }
    Ok(())
}

fn stdout_err(e: io::Error) -> CliError {
    CliError::Io {
        context: "stdout".into(),
        source: e,
    }
}
