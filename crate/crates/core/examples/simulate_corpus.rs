//! Runs every builtin scenario and prints its verdict block.
use certgrid::simnet::{builtin_scenarios, run_scenario_text};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    for (name, text) in builtin_scenarios() {
        let t = std::time::Instant::now();
        let outcome = run_scenario_text(text, seed).expect("builtin scenarios parse");
        println!("== {name} ({:.2?})\n{}", t.elapsed(), outcome.verdicts_text());
    }
}
