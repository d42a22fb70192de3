//! Signs a job description as a user, prints the wire form and verifies it
//! inside its window, after it closes and after a one-byte edit.
use certgrid::crypto::{bundle_to_text, issue_certificate, parse_bundle, seeded_identity, verify_envelope};
use certgrid::crypto::{Credential, Role, TrustStore, DEFAULT_RSA_BITS};
use certgrid::delegation::phi;
use certgrid::jdl::parse_jdl;
use certgrid::time::Window;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ca = seeded_identity(1, "CN=Example CA", Role::Ca, DEFAULT_RSA_BITS)?;
    let root = issue_certificate(&ca, &ca, 1_000_000_000, 2_000_000_000)?;
    let alice = seeded_identity(1, "CN=alice", Role::User, DEFAULT_RSA_BITS)?;
    let cert = issue_certificate(&ca, &alice, 1_000_000_000, 2_000_000_000)?;
    let alice = Credential::new(alice, cert);
    let trust = TrustStore::new([root]);

    let mut jdl = parse_jdl(
        "Executable = {\"analyse\"};\nArguments = {\"--fast\"};\nInputFile = {\"/grid/alice/run1.dat\"};\n\
         Output = {\"stdout\"};\nUser = {\"alice\"};\nBroker = {\"myVO\"};\n",
    )?;
    jdl.seal(false);
    let window = Window::new(1_312_392_035, 1_313_601_635).expect("non-empty");
    let signed = phi(&alice, jdl, "myVO", window)?;

    let text = bundle_to_text(&signed);
    println!("{text}");
    let back = parse_bundle(&text)?;
    println!("inside the window:\n{}", verify_envelope(&back, &trust, 1_312_400_000));
    println!("after it closes:\n{}", verify_envelope(&back, &trust, window.not_after));

    let edited = parse_bundle(&text.replacen("--fast", "--slow", 1))?;
    println!(
        "with one argument changed:\n{}",
        verify_envelope(&edited, &trust, 1_312_400_000)
    );
    Ok(())
}
