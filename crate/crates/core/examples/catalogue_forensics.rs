//! Traces a malicious artifact back to its origin after the input it came
//! from was deleted, first by hand and then through the simulator.
use certgrid::actors::{checksum, FileCatalogue};
use certgrid::simnet::{builtin_scenario, run_scenario_text};

fn main() {
    let mut cat = FileCatalogue::new(7 * 86_400);
    let t0 = 1_312_392_035;
    cat.write("/grid/alice/in.dat", "alice", b"alpha\n", t0);
    cat.delete("/grid/alice/in.dat", "alice", t0 + 1000).expect("present");
    let sum = checksum(b"alpha\n");
    for at in [t0 + 2000, t0 + 8 * 86_400] {
        match cat.recover("/grid/alice/in.dat", &sum, at) {
            Ok(bytes) => println!("at +{}: recovered {:?}", at - t0, String::from_utf8_lossy(&bytes)),
            Err(e) => println!("at +{}: {e}", at - t0),
        }
    }

    let o = run_scenario_text(builtin_scenario("catalogue_forensics").expect("builtin"), 1).expect("parses");
    for f in &o.forensics {
        match &f.result {
            Ok(v) => println!("{}: {}/{} ({})", f.job, v.origin, v.accountable, v.reason),
            Err(e) => println!("{}: {e}", f.job),
        }
    }
}
