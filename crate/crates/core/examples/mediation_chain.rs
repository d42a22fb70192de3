//! A request relayed from one broker to another, split in two and
//! countersigned for a pilot, with the concessions after each step.
use certgrid::crypto::DEFAULT_RSA_BITS;
use certgrid::crypto::{issue_certificate, seeded_identity, verify_envelope, Credential, Identity, Role, TrustStore};
use certgrid::delegation::{concessions_of, phi, psi, rho, split_job, Derivative};
use certgrid::jdl::parse_jdl;
use certgrid::time::Window;

fn certified(ca: &Identity, cn: &str, role: Role) -> Credential {
    let id = seeded_identity(2, &format!("CN={cn}"), role, DEFAULT_RSA_BITS).unwrap();
    let cert = issue_certificate(ca, &id, 1_000_000_000, 2_000_000_000).unwrap();
    Credential::new(id, cert)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ca = seeded_identity(2, "CN=Example CA", Role::Ca, DEFAULT_RSA_BITS)?;
    let trust = TrustStore::new([issue_certificate(&ca, &ca, 1_000_000_000, 2_000_000_000)?]);
    let alice = certified(&ca, "alice", Role::User);
    let front = certified(&ca, "frontVO", Role::Broker);
    let back = certified(&ca, "backVO", Role::Broker);

    let mut jdl = parse_jdl(
        "Executable = {\"cat\"};\nInputFile = {\"/grid/alice/a\",\"/grid/alice/b\"};\n\
         Output = {\"stdout\"};\nUser = {\"alice\"};\nBroker = {\"frontVO\"};\n",
    )?;
    jdl.seal(false);
    let day = Window::new(1_312_392_035, 1_312_478_435).expect("non-empty");
    let hour = Window::new(1_312_392_035, 1_312_395_635).expect("non-empty");
    let now = 1_312_393_000;

    let s1 = phi(&alice, jdl, "frontVO", day)?;
    let relayed = rho(&front, &s1, &[], "backVO", day, &trust)?;
    println!("relayed to {:?}", relayed.signed_value("Broker"));

    // The wrong broker cannot pick up a request addressed to someone else.
    println!(
        "frontVO countersigning: {:?}",
        psi(&front, &relayed, &[], "p0", hour, &trust).err()
    );

    let parts = split_job(&relayed, &[vec!["/grid/alice/a".into()], vec!["/grid/alice/b".into()]])?;
    for (i, part) in parts.into_iter().enumerate() {
        let pilot = format!("pilot-{i}");
        let d = [part, Derivative::AssignAgent { agent: pilot.clone() }];
        let s = psi(&back, &relayed, &d, &pilot, hour, &trust)?;
        println!(
            "\nsub-job {i}: depth {} {}",
            s.depth(),
            if verify_envelope(&s, &trust, now).is_valid() {
                "VALID"
            } else {
                "INVALID"
            }
        );
        for c in concessions_of(&s).iter() {
            println!("  {}", c.to_line());
        }
    }
    Ok(())
}
