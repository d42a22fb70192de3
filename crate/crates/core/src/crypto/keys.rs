//! Signature keys. RSA with SHA-384 is the only algorithm today; keys are
//! generated by the `rsa` crate (so a seeded RNG gives reproducible keys)
//! and used through OpenSSL.

use std::fmt;

use openssl::hash::MessageDigest;
use openssl::pkey::{PKey, Private, Public};
use openssl::sign::{Signer, Verifier};
use rand::{CryptoRng, RngCore};
use rsa::pkcs8::EncodePrivateKey;

use super::CryptoError;

pub const DEFAULT_RSA_BITS: usize = 3072;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignatureAlgorithm {
    RsaSha384,
}

impl SignatureAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            SignatureAlgorithm::RsaSha384 => "SHA384withRSA",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        (name == "SHA384withRSA").then_some(SignatureAlgorithm::RsaSha384)
    }

    fn digest(&self) -> MessageDigest {
        match self {
            SignatureAlgorithm::RsaSha384 => MessageDigest::sha384(),
        }
    }
}

#[derive(Clone)]
pub struct PrivateKey {
    algorithm: SignatureAlgorithm,
    key: PKey<Private>,
}

#[derive(Clone)]
pub struct PublicKey {
    algorithm: SignatureAlgorithm,
    key: PKey<Public>,
    der: Vec<u8>,
}

impl PrivateKey {
    pub fn generate_rsa<R: RngCore + CryptoRng>(rng: &mut R, bits: usize) -> Result<Self, CryptoError> {
        let key = rsa::RsaPrivateKey::new(rng, bits).map_err(|e| CryptoError::Key(e.to_string()))?;
        let der = key.to_pkcs8_der().map_err(|e| CryptoError::Key(e.to_string()))?;
        Self::from_pkcs8_der(der.as_bytes())
    }

    pub fn from_pkcs8_der(der: &[u8]) -> Result<Self, CryptoError> {
        let key = PKey::private_key_from_pkcs8(der).map_err(|e| CryptoError::Key(e.to_string()))?;
        if key.rsa().is_err() {
            return Err(CryptoError::Key("not an RSA key".into()));
        }
        Ok(PrivateKey {
            algorithm: SignatureAlgorithm::RsaSha384,
            key,
        })
    }

    pub fn to_pkcs8_der(&self) -> Vec<u8> {
        self.key.private_key_to_pkcs8().expect("encoding an in-memory RSA key")
    }

    pub fn algorithm(&self) -> SignatureAlgorithm {
        self.algorithm
    }

    pub fn bits(&self) -> u32 {
        self.key.bits()
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        let mut signer = Signer::new(self.algorithm.digest(), &self.key).expect("signer setup");
        signer.update(message).expect("signer update");
        signer.sign_to_vec().expect("RSA signing")
    }

    pub fn public_key(&self) -> PublicKey {
        let der = self.key.public_key_to_der().expect("public key encoding");
        PublicKey::from_der(&der).expect("round trip of own public key")
    }
}

impl PublicKey {
    /// Parses a DER SubjectPublicKeyInfo.
    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        let key = PKey::public_key_from_der(der).map_err(|e| CryptoError::Key(e.to_string()))?;
        if key.rsa().is_err() {
            return Err(CryptoError::Key("not an RSA key".into()));
        }
        Ok(PublicKey {
            algorithm: SignatureAlgorithm::RsaSha384,
            key,
            der: der.to_vec(),
        })
    }

    pub fn to_der(&self) -> &[u8] {
        &self.der
    }

    pub fn algorithm(&self) -> SignatureAlgorithm {
        self.algorithm
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(mut v) = Verifier::new(self.algorithm.digest(), &self.key) else {
            return false;
        };
        v.update(message).is_ok() && v.verify(signature).unwrap_or(false)
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.algorithm == other.algorithm && self.der == other.der
    }
}

impl Eq for PublicKey {}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}, {} bits)", self.algorithm.name(), self.key.bits())
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey({}, {} bits)", self.algorithm.name(), self.key.bits())
    }
}
