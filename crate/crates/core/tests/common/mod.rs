#![allow(dead_code)]

use certgrid::crypto::{issue_certificate, seeded_identity, Credential, Identity, Role, TrustStore, DEFAULT_RSA_BITS};

pub const LISTING: &str = include_str!("../fixtures/listing.sjdl");
pub const LISTING_NB: i64 = 1_312_392_035;
pub const LISTING_NA: i64 = 1_313_601_635;

const SEED: u64 = 0x7e57;
const VALID_FROM: i64 = 1_000_000_000;
const VALID_TO: i64 = 2_000_000_000;

pub fn ca() -> Identity {
    seeded_identity(SEED, "CN=Test CA", Role::Ca, DEFAULT_RSA_BITS).unwrap()
}

pub fn trust() -> TrustStore {
    let ca = ca();
    TrustStore::new([issue_certificate(&ca, &ca, VALID_FROM, VALID_TO).unwrap()])
}

/// A credential for `cn` certified by the test CA.
pub fn credential(cn: &str, role: Role) -> Credential {
    let id = seeded_identity(SEED, &format!("CN={cn}"), role, DEFAULT_RSA_BITS).unwrap();
    let cert = issue_certificate(&ca(), &id, VALID_FROM, VALID_TO).unwrap();
    Credential::new(id, cert)
}
