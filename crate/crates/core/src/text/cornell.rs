//! Cornell Movie-Dialogs reader.
//!
//! `movie_lines.txt` rows: `lineID +++$+++ charID +++$+++ movieID +++$+++ name +++$+++ text`
//! `movie_conversations.txt` rows: `charID +++$+++ charID +++$+++ movieID +++$+++ ['L1', 'L2', …]`

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::Result;

use super::{decode_line, normalize_whitespace, DialoguePair};

const DELIMITER: &str = " +++$+++ ";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CornellParse {
    pub pairs: Vec<DialoguePair>,
    /// Well-formed rows read from the lines file.
    pub lines_parsed: usize,
    pub conversations: usize,
    pub skipped_malformed: usize,
    pub missing_refs: usize,
    /// Pairs discarded because one side was empty after normalization.
    pub dropped_empty: usize,
}

fn read_raw_lines(reader: impl BufRead) -> Result<Vec<String>> {
    let mut reader = reader;
    let mut out = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        out.push(decode_line(&buf));
    }
    Ok(out)
}

fn parse_line_ids(field: &str) -> Option<Vec<String>> {
    let inner = field.trim().strip_prefix('[')?.strip_suffix(']')?;
    let ids: Vec<String> = inner
        .split(',')
        .map(|s| s.trim().trim_matches(|c| c == '\'' || c == '"').to_string())
        .filter(|s| !s.is_empty())
        .collect();
    (!ids.is_empty()).then_some(ids)
}

/// Pairs consecutive utterances of each conversation. A missing line
/// reference breaks the chain so no pair spans the gap.
pub fn parse_cornell(lines: impl BufRead, conversations: impl BufRead) -> Result<CornellParse> {
    let mut out = CornellParse::default();
    let mut utterances: HashMap<String, String> = HashMap::new();

    for row in read_raw_lines(lines)? {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.splitn(5, DELIMITER).collect();
        let text = match fields.as_slice() {
            [id, _, _, _, text] if !id.trim().is_empty() => text,
            // rows whose text field is empty can lose the trailing delimiter space
            [id, _, _, name] if !id.trim().is_empty() && name.ends_with(" +++$+++") => &"",
            _ => {
                out.skipped_malformed += 1;
                continue;
            }
        };
        out.lines_parsed += 1;
        utterances.insert(fields[0].trim().to_string(), normalize_whitespace(text));
    }

    for row in read_raw_lines(conversations)? {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(DELIMITER).collect();
        let Some(ids) = (fields.len() == 4).then(|| parse_line_ids(fields[3])).flatten() else {
            out.skipped_malformed += 1;
            continue;
        };
        out.conversations += 1;
        let mut previous: Option<&String> = None;
        for id in &ids {
            let Some(text) = utterances.get(id) else {
                out.missing_refs += 1;
                previous = None;
                continue;
            };
            if let Some(prev) = previous {
                let pair = DialoguePair::new(prev.clone(), text.clone());
                if pair.is_usable() {
                    out.pairs.push(pair);
                } else {
                    out.dropped_empty += 1;
                }
            }
            previous = Some(text);
        }
    }
    if out.skipped_malformed > 0 || out.missing_refs > 0 {
        log::warn!(
            "cornell: skipped {} malformed rows, {} missing line references",
            out.skipped_malformed,
            out.missing_refs
        );
    }
    Ok(out)
}

pub fn parse_cornell_files(lines_path: &Path, conversations_path: &Path) -> Result<CornellParse> {
    parse_cornell(
        BufReader::new(File::open(lines_path)?),
        BufReader::new(File::open(conversations_path)?),
    )
}
