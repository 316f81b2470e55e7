//! The HTTP service over a real socket, serving an echo checkpoint.

use cwgan_cli::server::{state_for, ServerHandle};
use cwgan_cli::RuntimeConfig;
use cwgan_core::toy::echo_checkpoint;

use crate::{common, Outcome};

fn check(failures: &mut Vec<String>, what: &str, got: u16, want: u16) {
    if got != want {
        failures.push(format!("{what}: {got}, expected {want}"));
    }
}

pub fn service_contract() -> Outcome {
    let (checkpoint, pairs) = echo_checkpoint(60, 3).map_err(|e| e.to_string())?;
    let runtime = RuntimeConfig {
        max_sessions: 4,
        ..RuntimeConfig::default()
    };
    let server = ServerHandle::spawn(state_for(checkpoint, runtime).map_err(|e| e.to_string())?, "127.0.0.1:0")
        .map_err(|e| e.to_string())?;
    let addr = server.addr;
    let checksum_before = server.state.engine().weights_checksum();
    let mut failures = Vec::new();

    let health = common::get(addr, "/health");
    check(&mut failures, "/health", health.status, 200);
    if health.json()["status"] != "ok" {
        failures.push(format!("/health body {}", health.body));
    }

    // error codes
    for body in ["{not json", r#"{"message": "w5"}"#, r#"{"session_id": "a", "message": " "}"#] {
        check(&mut failures, &format!("POST /chat {body}"), common::post(addr, "/chat", body).status, 400);
    }
    let limit = server.state.max_message_chars();
    let long = "w".repeat(limit + 1);
    check(&mut failures, "over-long message", common::chat(addr, "a", &long).status, 413);
    server.state.set_reloading(true);
    check(&mut failures, "chat while reloading", common::chat(addr, "a", "w5").status, 503);
    server.state.set_reloading(false);

    // serial answers, then the same questions concurrently
    let questions: Vec<&str> = pairs[..16].iter().map(|p| p.question.as_str()).collect();
    let serial: Vec<String> = questions
        .iter()
        .map(|q| common::chat(addr, "serial", q).json()["answer"].as_str().unwrap_or_default().to_string())
        .collect();
    let echo_misses = serial.iter().zip(&pairs).filter(|(a, p)| **a != p.answer).count();
    let concurrent: Vec<(u16, String)> = std::thread::scope(|scope| {
        let handles: Vec<_> = questions
            .iter()
            .enumerate()
            .map(|(i, q)| {
                scope.spawn(move || {
                    let r = common::chat(addr, &format!("c{i}"), q);
                    (r.status, r.json()["answer"].as_str().unwrap_or_default().to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("client thread")).collect()
    });
    let concurrent_mismatch = concurrent
        .iter()
        .zip(&serial)
        .filter(|((status, answer), s)| *status != 200 || answer != *s)
        .count();
    if echo_misses > 0 {
        failures.push(format!("{echo_misses}/16 serial answers differ from the echo references"));
    }
    if concurrent_mismatch > 0 {
        failures.push(format!("{concurrent_mismatch}/16 concurrent answers differ from serial"));
    }

    // weights stay untouched by serving
    let mut non_ok = 0;
    for i in 0..1000 {
        let q = questions[i % questions.len()];
        if common::chat(addr, "load", q).status != 200 {
            non_ok += 1;
        }
    }
    let checksum_after = server.state.engine().weights_checksum();
    if non_ok > 0 {
        failures.push(format!("{non_ok}/1000 requests failed"));
    }
    if checksum_before != checksum_after {
        failures.push(format!("weights checksum changed: {checksum_before} -> {checksum_after}"));
    }

    let detail = format!(
        "health ok; 400/413/503 as specified; 16 concurrent == serial == echo references; \
         checksum {} unchanged after 1000 requests",
        &checksum_after[..12.min(checksum_after.len())]
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(failures.join("; "))
    }
}
