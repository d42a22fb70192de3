//! Reproducible key material for simulations and fixtures.
//!
//! Keys are derived from `(seed, subject, bits)` and memoised per process,
//! so repeated runs with the same seed share the cost of RSA generation.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::identity::{Identity, Role};
use super::keys::PrivateKey;
use super::CryptoError;

fn cache() -> &'static Mutex<HashMap<[u8; 32], Vec<u8>>> {
    static CACHE: OnceLock<Mutex<HashMap<[u8; 32], Vec<u8>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

pub fn seeded_identity(seed: u64, subject: &str, role: Role, bits: usize) -> Result<Identity, CryptoError> {
    let mut h = Sha256::new();
    h.update(b"certgrid-key-v1\0");
    h.update(seed.to_be_bytes());
    h.update((bits as u64).to_be_bytes());
    h.update(subject.as_bytes());
    let derived: [u8; 32] = h.finalize().into();

    let cached = cache().lock().expect("key cache").get(&derived).cloned();
    let key = match cached {
        Some(der) => PrivateKey::from_pkcs8_der(&der)?,
        None => {
            let mut rng = ChaCha20Rng::from_seed(derived);
            let key = PrivateKey::generate_rsa(&mut rng, bits)?;
            cache().lock().expect("key cache").insert(derived, key.to_pkcs8_der());
            key
        }
    };
    Identity::from_key(subject, role, key)
}
