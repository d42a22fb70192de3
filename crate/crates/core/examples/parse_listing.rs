//! Parses the two-layer reference listing, walks its layers and lists the
//! concessions it names. Its signatures are elided, so it cannot verify.
use certgrid::crypto::{issue_certificate, parse_bundle, seeded_identity, verify_envelope, Role, TrustStore};
use certgrid::delegation::concessions_of;

const LISTING: &str = include_str!("../tests/fixtures/listing.sjdl");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let e = parse_bundle(LISTING)?;
    println!("depth {}", e.depth());
    for (i, layer) in e.layers().iter().enumerate() {
        println!("layer {} window {}", i + 1, layer.window());
        for (k, v) in layer.jdl().entries() {
            println!("  {k} = {}", v.join(", "));
        }
    }
    println!("user {:?}, pilot {:?}", e.user(), e.signed_value("PilotIdentifier"));
    for c in concessions_of(&e).iter() {
        println!("{}", c.to_line());
    }

    let ca = seeded_identity(1, "CN=Example CA", Role::Ca, 2048)?;
    let trust = TrustStore::new([issue_certificate(&ca, &ca, 1_000_000_000, 2_000_000_000)?]);
    println!("{}", verify_envelope(&e, &trust, 1_312_400_000));
    Ok(())
}
