//! Chit-Chat corpus reader.
//!
//! The distribution file is a JSON object keyed by conversation id. Each
//! conversation carries a `messages` array whose elements are either message
//! objects (`{"text": …, "sender": …}`) or arrays of them (one array per
//! turn). Consecutive messages from the same sender are merged into a single
//! utterance before pairing.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

use super::{normalize_whitespace, DialoguePair};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChitChatParse {
    pub pairs: Vec<DialoguePair>,
    pub conversations: usize,
    /// Raw messages seen, before merging.
    pub utterances: usize,
    pub skipped_empty: usize,
}

#[derive(Debug)]
struct Turn {
    sender: Option<String>,
    text: String,
}

fn message_of(value: &Value) -> Option<(Option<String>, String)> {
    match value {
        Value::String(s) => Some((None, s.clone())),
        Value::Object(map) => {
            let text = map.get("text").and_then(Value::as_str)?.to_string();
            let sender = map
                .get("sender")
                .and_then(|s| s.as_str().map(str::to_string).or_else(|| Some(s.to_string())));
            Some((sender, text))
        }
        _ => None,
    }
}

fn push_turn(turns: &mut Vec<Turn>, sender: Option<String>, text: String) {
    let text = normalize_whitespace(&text);
    if text.is_empty() {
        return;
    }
    match turns.last_mut() {
        Some(last) if sender.is_some() && last.sender == sender => {
            last.text.push(' ');
            last.text.push_str(&text);
        }
        _ => turns.push(Turn { sender, text }),
    }
}

fn conversation_turns(convo: &Value, utterances: &mut usize) -> Vec<Turn> {
    let messages = match convo {
        Value::Object(map) => map.get("messages").and_then(Value::as_array),
        Value::Array(items) => Some(items),
        _ => None,
    };
    let mut turns = Vec::new();
    for entry in messages.into_iter().flatten() {
        match entry {
            Value::Array(group) => {
                let msgs: Vec<_> = group.iter().filter_map(message_of).collect();
                *utterances += msgs.len();
                if msgs.iter().all(|(s, _)| s.is_none()) {
                    // a sender-less group is one turn
                    let text = msgs.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join(" ");
                    let text = normalize_whitespace(&text);
                    if !text.is_empty() {
                        turns.push(Turn { sender: None, text });
                    }
                } else {
                    for (sender, text) in msgs {
                        push_turn(&mut turns, sender, text);
                    }
                }
            }
            other => {
                if let Some((sender, text)) = message_of(other) {
                    *utterances += 1;
                    push_turn(&mut turns, sender, text);
                }
            }
        }
    }
    turns
}

pub fn parse_chitchat(json: &str) -> Result<ChitChatParse> {
    let root: Value = serde_json::from_str(json).map_err(|e| Error::Parse(format!("chit-chat json: {e}")))?;
    let convos: Vec<&Value> = match &root {
        Value::Object(map) => map.values().collect(),
        Value::Array(items) => items.iter().collect(),
        _ => return Err(Error::Parse("chit-chat root must be an object or array".into())),
    };
    let mut out = ChitChatParse::default();
    for convo in convos {
        let turns = conversation_turns(convo, &mut out.utterances);
        if turns.is_empty() {
            out.skipped_empty += 1;
            continue;
        }
        out.conversations += 1;
        for w in turns.windows(2) {
            let pair = DialoguePair::new(w[0].text.clone(), w[1].text.clone());
            if pair.is_usable() {
                out.pairs.push(pair);
            }
        }
    }
    Ok(out)
}

pub fn parse_chitchat_file(path: &Path) -> Result<ChitChatParse> {
    parse_chitchat(&fs::read_to_string(path)?)
}
