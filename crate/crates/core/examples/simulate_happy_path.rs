//! Runs one scenario, given as a builtin name or a file path, and prints
//! the event log, the wire trace and the verdicts.
use certgrid::simnet::{builtin_scenario, run_scenario_text};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let which = args.next().unwrap_or_else(|| "happy_path".into());
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let text = match builtin_scenario(&which) {
        Some(t) => t.to_string(),
        None => std::fs::read_to_string(&which)?,
    };
    let o = run_scenario_text(&text, seed)?;
    println!("{}", o.log.to_tsv());
    println!("{}", o.events_tsv());
    print!("{}", o.verdicts_text());
    Ok(())
}
