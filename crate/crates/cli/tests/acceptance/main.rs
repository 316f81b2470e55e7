//! Acceptance criteria for the chatbot stack, one PASS/FAIL line each.

#[path = "../common/mod.rs"]
mod common;

mod autodiff;
mod data;
mod metrics;
mod model;
mod service;
mod training;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cwgan_core::text::EncodedPair;
use cwgan_core::GeneratorModel;

/// `Ok` carries the measured evidence, `Err` the reason for failure.
pub type Outcome = Result<String, String>;

/// State carried between criteria so the toy model is trained once.
#[derive(Default)]
pub struct Shared {
    pub toy: Option<(GeneratorModel, Vec<EncodedPair>)>,
    pub adversarial_losses: Option<Vec<f64>>,
}

type Criterion = (&'static str, fn(&mut Shared) -> Outcome);

const CRITERIA: [Criterion; 11] = [
    ("autodiff gradient check", |_| autodiff::gradient_check()),
    ("positional encoding closed form", |_| model::positional_closed_form()),
    ("causal integrity", |_| model::causal_integrity()),
    ("gumbel head", |_| model::gumbel_head()),
    ("toy convergence", training::toy_convergence),
    ("adversarial stability", training::adversarial_stability),
    ("generator loss shape", training::loss_shape),
    ("metric oracles", |_| metrics::metric_oracles()),
    ("parser fixtures and split", |_| data::parser_fixtures()),
    ("checkpoint round trip", data::checkpoint_round_trip),
    ("service contract", |_| service::service_contract()),
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, check) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut shared))).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(reason) => {
                println!("FAIL  {name} ({secs:.1}s): {reason}");
                failed.push(name);
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
