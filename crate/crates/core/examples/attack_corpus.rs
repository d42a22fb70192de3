//! Runs the adversarial scenarios and prints what each attack achieved and
//! which objectives held, certified runs first, then the proxy baselines.
use certgrid::simnet::{builtin_scenario, run_scenario_text, OBJECTIVES};

const CERTIFIED: &[&str] = &[
    "TAMPER_IN_TRANSIT",
    "FORGED_BROKER_SIG",
    "PILOT_TOKEN_THEFT",
    "REPLAY_AFTER_DONE",
    "EXPIRED_WINDOWS",
];
const BASELINE: &[&str] = &["PROXY_BASELINE_DIRECT", "PROXY_BASELINE_INDIRECT"];

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    for name in CERTIFIED.iter().chain(BASELINE) {
        let o = run_scenario_text(builtin_scenario(name).expect("builtin"), seed).expect("parses");
        println!("== {name} ({})", o.model);
        for a in &o.attacks {
            println!(
                "  attack {} at {}: {}",
                a.kind.as_str(),
                a.at,
                if a.launched { "launched" } else { "nothing to use" }
            );
        }
        for a in &o.abuses {
            println!("  abuse: {a}");
        }
        let row: Vec<String> = OBJECTIVES.iter().map(|n| format!("{n}:{}", o.verdict(*n))).collect();
        println!("  {}", row.join(" "));
        println!("  jobs {:?}", o.job_states);
    }
}
