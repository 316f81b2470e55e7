//! Corpus parsers, the train/test split and checkpoint persistence.

use std::collections::BTreeSet;
use std::path::PathBuf;

use cwgan_core::text::{parse_chitchat_file, parse_cornell_files, split_pairs, DialoguePair, TokenSequence};
use cwgan_core::toy::{copy_task_payloads, toy_model_config, toy_train_config, toy_vocab, TOY_MAX_LEN, TOY_VOCAB};
use cwgan_core::{no_grad, Checkpoint, CriticModel, TrainState};

use crate::{Outcome, Shared};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn parser_fixtures() -> Outcome {
    let mut failures = Vec::new();

    let cornell = parse_cornell_files(&fixture("movie_lines.txt"), &fixture("movie_conversations.txt"))
        .map_err(|e| e.to_string())?;
    let expected_cornell = vec![
        DialoguePair::new("Can we make this quick?", "Well, I thought we'd start with pronunciation."),
        DialoguePair::new(
            "Well, I thought we'd start with pronunciation.",
            "Not the hacking and gagging and spitting part.",
        ),
        DialoguePair::new(
            "Not the hacking and gagging and spitting part.",
            "Okay... then how 'bout we try out some French cuisine.",
        ),
        DialoguePair::new("You're asking me out.", "That's so cute."),
    ];
    if cornell.pairs != expected_cornell {
        failures.push(format!("cornell pairs {:?}", cornell.pairs));
    }
    if (cornell.skipped_malformed, cornell.missing_refs) != (1, 1) {
        failures.push(format!(
            "cornell: {} malformed / {} missing refs, expected 1 / 1",
            cornell.skipped_malformed, cornell.missing_refs
        ));
    }

    let chitchat = parse_chitchat_file(&fixture("chitchat.json")).map_err(|e| e.to_string())?;
    let expected_chitchat = vec![
        DialoguePair::new("hey how are you?", "good thanks"),
        DialoguePair::new("good thanks", "nice"),
        DialoguePair::new("what is your name", "bob"),
        DialoguePair::new("bob", "i mean your full name"),
        DialoguePair::new("i mean your full name", "robert"),
    ];
    if chitchat.pairs != expected_chitchat {
        failures.push(format!("chit-chat pairs {:?}", chitchat.pairs));
    }

    // 80/20 split
    let pairs: Vec<DialoguePair> = (0..100).map(|i| DialoguePair::new(format!("q{i}"), format!("a{i}"))).collect();
    let a = split_pairs(&pairs, 0.2, 7);
    let b = split_pairs(&pairs, 0.2, 7);
    let c = split_pairs(&pairs, 0.2, 8);
    let train: BTreeSet<usize> = a.train_ids.iter().copied().collect();
    let test: BTreeSet<usize> = a.test_ids.iter().copied().collect();
    if (a.train.len(), a.test.len()) != (80, 20) {
        failures.push(format!("split sizes {} / {}", a.train.len(), a.test.len()));
    }
    if a != b {
        failures.push("same seed gave different splits".into());
    }
    if a.test_ids == c.test_ids {
        failures.push("different seeds gave the same split".into());
    }
    if !train.is_disjoint(&test) || train.len() + test.len() != 100 {
        failures.push("split leaks or drops pairs".into());
    }

    let detail = format!(
        "cornell {} pairs, chit-chat {} pairs as expected; 100 -> {}/{} split, seed-deterministic, disjoint",
        cornell.pairs.len(),
        chitchat.pairs.len(),
        a.train.len(),
        a.test.len()
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

pub fn checkpoint_round_trip(shared: &mut Shared) -> Outcome {
    let (generator, _) = match &shared.toy {
        Some(toy) => toy.clone(),
        None => return Err("needs the converged toy model".into()),
    };
    let checkpoint = Checkpoint {
        model_config: generator.config().clone(),
        train_config: toy_train_config(),
        vocab: toy_vocab(TOY_VOCAB),
        state: TrainState {
            pretrained: true,
            ..TrainState::default()
        },
        generator: generator.clone(),
        critic: Some(CriticModel::new(toy_model_config(), 99).map_err(|e| e.to_string())?),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (first, second) = (dir.path().join("a.cwgc"), dir.path().join("b.cwgc"));
    checkpoint.save(&first).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&first).map_err(|e| e.to_string())?;
    loaded.save(&second).map_err(|e| e.to_string())?;
    let (a, b) = (
        std::fs::read(&first).map_err(|e| e.to_string())?,
        std::fs::read(&second).map_err(|e| e.to_string())?,
    );
    if a != b {
        return Err(format!("re-saved checkpoint differs ({} vs {} bytes)", a.len(), b.len()));
    }

    let questions: Vec<TokenSequence> = copy_task_payloads(20, TOY_VOCAB, TOY_MAX_LEN, 1, 2024)
        .iter()
        .map(|(q, _)| TokenSequence::framed(q, TOY_MAX_LEN))
        .collect();
    let mut differing = 0;
    for q in &questions {
        let live = no_grad(|| generator.infer(q, TOY_MAX_LEN)).map_err(|e| e.to_string())?;
        let restored = no_grad(|| loaded.generator.infer(q, TOY_MAX_LEN)).map_err(|e| e.to_string())?;
        if live != restored {
            differing += 1;
        }
    }
    let detail = format!("{} bytes, save-load-save identical; {differing}/20 decodes differ after reload", a.len());
    if differing == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
