use std::io::{BufRead, Write};
use std::time::Instant;

use cwgan_core::{ChatEngine, ChatTurn};

use crate::error::CliError;

pub const PROMPT: &str = "> ";
pub const QUIT: &str = "/quit";

fn io_err(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        context: context.to_string(),
        source,
    }
}

/// Reads questions line by line until `/quit` or end of input, printing one
/// reply per question. Blank lines re-prompt without touching the model.
/// Returns the number of answered turns.
pub fn run(
    engine: &ChatEngine,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    mut transcript: Option<&mut dyn Write>,
    session_id: &str,
) -> Result<usize, CliError> {
    let mut turns = 0;
    let mut line = String::new();
    loop {
        write!(output, "{PROMPT}").and_then(|_| output.flush()).map_err(io_err("output"))?;
        line.clear();
        if input.read_line(&mut line).map_err(io_err("input"))? == 0 {
            writeln!(output).map_err(io_err("output"))?;
            break;
        }
        let text = line.trim();
        if text == QUIT {
            break;
        }
        if text.is_empty() {
            continue;
        }
        let started = Instant::now();
        let reply = match engine.reply(text) {
            Ok(r) => r,
            // e.g. a line of control characters
            Err(cwgan_core::Error::EmptyQuestion) => continue,
            Err(e) => return Err(e.into()),
        };
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        writeln!(output, "{}", reply.text).map_err(io_err("output"))?;
        if let Some(t) = transcript.as_mut() {
            let turn = ChatTurn {
                session_id: session_id.to_string(),
                user_text: text.to_string(),
                bot_text: reply.text,
                token_count: reply.tokens,
                latency_ms,
            };
            let json = serde_json::to_string(&turn).expect("turn serializes");
            writeln!(t, "{json}").and_then(|_| t.flush()).map_err(io_err("transcript"))?;
        }
        turns += 1;
    }
    Ok(turns)
}
