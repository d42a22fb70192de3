use std::fmt;
use std::str::FromStr;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::cert::Certificate;
use super::keys::{PrivateKey, PublicKey, DEFAULT_RSA_BITS};
use super::CryptoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    User,
    Broker,
    Site,
    Ca,
    Pilot,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::User => "USER",
            Role::Broker => "BROKER",
            Role::Site => "SITE",
            Role::Ca => "CA",
            Role::Pilot => "PILOT",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "USER" => Role::User,
            "BROKER" => Role::Broker,
            "SITE" => Role::Site,
            "CA" => Role::Ca,
            "PILOT" => Role::Pilot,
            _ => return Err(CryptoError::Pem(format!("unknown role `{s}`"))),
        })
    }
}

/// A key holder: distinguished name, role and private key.
#[derive(Debug, Clone)]
pub struct Identity {
    subject: String,
    role: Role,
    key: PrivateKey,
}

/// An identity together with the certificate vouching for its key.
#[derive(Debug, Clone)]
pub struct Credential {
    pub identity: Identity,
    pub certificate: Certificate,
}

pub(crate) fn validate_subject(subject: &str) -> Result<(), CryptoError> {
    if subject.is_empty() {
        return Err(CryptoError::EmptySubject);
    }
    if subject.chars().any(char::is_control) {
        return Err(CryptoError::InvalidSubject(subject.to_string()));
    }
    Ok(())
}

/// The `CN=` component of a distinguished name, or the whole name when it
/// has none. `CN=myVO` maps to `myVO`.
pub fn common_name(subject: &str) -> &str {
    subject
        .split([',', '/'])
        .map(str::trim)
        .find_map(|part| part.strip_prefix("CN="))
        .unwrap_or(subject)
}

/// Generates an identity with a fresh 3072-bit RSA key.
pub fn generate_identity(subject: &str, role: Role) -> Result<Identity, CryptoError> {
    let mut rng = ChaCha20Rng::from_entropy();
    Identity::generate_with_rng(subject, role, DEFAULT_RSA_BITS, &mut rng)
}

impl Identity {
    pub fn generate_with_rng<R: RngCore + CryptoRng>(
        subject: &str,
        role: Role,
        bits: usize,
        rng: &mut R,
    ) -> Result<Self, CryptoError> {
        validate_subject(subject)?;
        let key = PrivateKey::generate_rsa(rng, bits)?;
        Ok(Identity {
            subject: subject.to_string(),
            role,
            key,
        })
    }

    pub fn from_key(subject: &str, role: Role, key: PrivateKey) -> Result<Self, CryptoError> {
        validate_subject(subject)?;
        Ok(Identity {
            subject: subject.to_string(),
            role,
            key,
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn common_name(&self) -> &str {
        common_name(&self.subject)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn private_key(&self) -> &PrivateKey {
        &self.key
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.key.sign(message)
    }
}

impl Credential {
    pub fn new(identity: Identity, certificate: Certificate) -> Self {
        Credential { identity, certificate }
    }

    pub fn subject(&self) -> &str {
        self.identity.subject()
    }

    pub fn common_name(&self) -> &str {
        self.identity.common_name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cn_extraction() {
        assert_eq!(common_name("CN=myVO"), "myVO");
        assert_eq!(common_name("/O=Grid/CN=testuser"), "testuser");
        assert_eq!(common_name("O=Grid, CN=alice"), "alice");
        assert_eq!(common_name("plain"), "plain");
    }

    #[test]
    fn empty_subject_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(matches!(
            Identity::generate_with_rng("", Role::User, 1024, &mut rng),
            Err(CryptoError::EmptySubject)
        ));
        assert!(matches!(
            Identity::generate_with_rng("CN=a\nb", Role::User, 1024, &mut rng),
            Err(CryptoError::InvalidSubject(_))
        ));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = Identity::generate_with_rng("CN=a", Role::User, 1024, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let b = Identity::generate_with_rng("CN=a", Role::User, 1024, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.public_key(), b.public_key());
        let sig = a.sign(b"m");
        assert!(b.public_key().verify(b"m", &sig));
        assert!(!b.public_key().verify(b"n", &sig));
    }
}
