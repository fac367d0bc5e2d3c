//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails or overruns its time budget.

/// Returns `Err(msg)` from the enclosing criterion when `cond` is false.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

mod curation;
mod determinism;
mod grpo;
mod judge;
mod metrics;
mod perturb;
mod redundancy;
mod reward;

use std::process::ExitCode;
use std::time::{Duration, Instant};

type Check = Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "reward composition", budget: Some(Duration::from_secs(1)), run: reward::run },
    Criterion { id: 2, name: "metric oracles", budget: Some(Duration::from_secs(5)), run: metrics::run },
    Criterion { id: 3, name: "grpo verification", budget: Some(Duration::from_secs(60)), run: grpo::run },
    Criterion { id: 4, name: "redundancy filter", budget: Some(Duration::from_secs(10)), run: redundancy::run },
    Criterion { id: 5, name: "execution match", budget: Some(Duration::from_secs(10)), run: sql::run },
    Criterion { id: 6, name: "curation partition", budget: None, run: curation::run },
    Criterion { id: 7, name: "perturbation harness", budget: None, run: perturb::run },
    Criterion { id: 8, name: "judge client", budget: None, run: judge::run },
    Criterion { id: 9, name: "end-to-end determinism", budget: None, run: determinism::run },
];

fn main() -> ExitCode {
    // `cargo test -- <filter>` passes the filter through; honor a bare AC id.
    let only: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.trim_start_matches("AC").parse().ok())
        .collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS AC{} {} ({elapsed:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL AC{} {} ({elapsed:.2?}): {why}", c.id, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
