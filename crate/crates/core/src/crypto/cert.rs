//! A two-level certificate model: a self-signed root CA issues leaf
//! certificates binding a subject and role to a public key for a validity
//! window.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use super::identity::{common_name, validate_subject, Identity, Role};
use super::keys::PublicKey;
use super::CryptoError;
use crate::time::{Epoch, TimeStatus, Window};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub(crate) subject: String,
    pub(crate) role: Role,
    pub(crate) public_key: PublicKey,
    pub(crate) validity: Window,
    pub(crate) issuer: String,
    pub(crate) signature: Vec<u8>,
}

pub(crate) fn tbs_bytes(subject: &str, role: Role, key: &PublicKey, validity: &Window, issuer: &str) -> Vec<u8> {
    format!(
        "certgrid-certificate-v1\nsubject={subject}\nrole={role}\nalgorithm={}\nkey={}\nnot_before={}\nnot_after={}\nissuer={issuer}\n",
        key.algorithm().name(),
        B64.encode(key.to_der()),
        validity.not_before,
        validity.not_after,
    )
    .into_bytes()
}

/// Issues a certificate for `subject` signed by `ca`. Passing the CA as its
/// own subject produces a self-signed root.
pub fn issue_certificate(
    ca: &Identity,
    subject: &Identity,
    not_before: Epoch,
    not_after: Epoch,
) -> Result<Certificate, CryptoError> {
    if ca.role() != Role::Ca {
        return Err(CryptoError::NotACa);
    }
    let validity = Window::new(not_before, not_after).ok_or(CryptoError::EmptyValidity)?;
    let public_key = subject.public_key();
    let tbs = tbs_bytes(subject.subject(), subject.role(), &public_key, &validity, ca.subject());
    Ok(Certificate {
        subject: subject.subject().to_string(),
        role: subject.role(),
        public_key,
        validity,
        issuer: ca.subject().to_string(),
        signature: ca.sign(&tbs),
    })
}

impl Certificate {
    /// Assembles a certificate from decoded parts without checking the
    /// signature.
    pub fn from_parts(
        subject: String,
        role: Role,
        public_key: PublicKey,
        validity: Window,
        issuer: String,
        signature: Vec<u8>,
    ) -> Result<Self, CryptoError> {
        validate_subject(&subject)?;
        validate_subject(&issuer)?;
        Ok(Certificate {
            subject,
            role,
            public_key,
            validity,
            issuer,
            signature,
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

    pub fn public_key(&self) -> &PublicKey {
        &self.public_key
    }

    pub fn validity(&self) -> Window {
        self.validity
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject == self.issuer
    }

    pub(crate) fn tbs(&self) -> Vec<u8> {
        tbs_bytes(&self.subject, self.role, &self.public_key, &self.validity, &self.issuer)
    }

    pub fn verify_signed_by(&self, issuer_key: &PublicKey) -> bool {
        issuer_key.verify(&self.tbs(), &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainError {
    UntrustedIssuer(String),
    BadIssuerSignature,
    Expired,
    NotYetValid,
    RootInvalid(String),
}

impl fmt::Display for ChainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainError::UntrustedIssuer(i) => write!(f, "issuer `{i}` is not a trust root"),
            ChainError::BadIssuerSignature => f.write_str("issuer signature does not verify"),
            ChainError::Expired => f.write_str("certificate expired"),
            ChainError::NotYetValid => f.write_str("certificate not yet valid"),
            ChainError::RootInvalid(why) => write!(f, "trust root invalid: {why}"),
        }
    }
}

/// The set of CA certificates a verifier accepts as anchors.
#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    roots: Vec<Certificate>,
}

impl TrustStore {
    pub fn new(roots: impl IntoIterator<Item = Certificate>) -> Self {
        TrustStore {
            roots: roots.into_iter().collect(),
        }
    }

    pub fn add(&mut self, root: Certificate) {
        self.roots.push(root);
    }

    pub fn roots(&self) -> &[Certificate] {
        &self.roots
    }

    pub fn remove(&mut self, subject: &str) {
        self.roots.retain(|r| r.subject != subject);
    }

    /// Checks `leaf` against the root named by its issuer at time `now`.
    pub fn verify_chain(&self, leaf: &Certificate, now: Epoch) -> Result<(), ChainError> {
        let root = self
            .roots
            .iter()
            .find(|r| r.subject == leaf.issuer)
            .ok_or_else(|| ChainError::UntrustedIssuer(leaf.issuer.clone()))?;
        if root.role != Role::Ca || !root.is_self_signed() {
            return Err(ChainError::RootInvalid("not a self-signed CA".into()));
        }
        if !root.verify_signed_by(&root.public_key) {
            return Err(ChainError::RootInvalid("self-signature does not verify".into()));
        }
        if root.validity.status(now) != TimeStatus::Valid {
            return Err(ChainError::RootInvalid("outside validity".into()));
        }
        if !leaf.verify_signed_by(&root.public_key) {
            return Err(ChainError::BadIssuerSignature);
        }
        match leaf.validity.status(now) {
            TimeStatus::Valid => Ok(()),
            TimeStatus::Expired => Err(ChainError::Expired),
            TimeStatus::NotYetValid => Err(ChainError::NotYetValid),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::testkeys;

    #[test]
    fn issue_and_chain() {
        let ca = testkeys::ca();
        let user = testkeys::identity("CN=testuser", Role::User);
        let root = issue_certificate(&ca, &ca, -100, 2_000_000_000).unwrap();
        let cert = issue_certificate(&ca, &user, 0, 1_000_000_000).unwrap();
        let trust = TrustStore::new([root]);
        assert_eq!(trust.verify_chain(&cert, 500), Ok(()));
        assert_eq!(trust.verify_chain(&cert, 1_000_000_000), Err(ChainError::Expired));
        assert_eq!(trust.verify_chain(&cert, -1), Err(ChainError::NotYetValid));
    }

    #[test]
    fn non_ca_cannot_issue() {
        let user = testkeys::identity("CN=testuser", Role::User);
        assert!(matches!(
            issue_certificate(&user, &user, 0, 10),
            Err(CryptoError::NotACa)
        ));
    }

    #[test]
    fn empty_validity_rejected() {
        let ca = testkeys::ca();
        let broker = testkeys::identity("CN=myVO", Role::Broker);
        assert!(matches!(
            issue_certificate(&ca, &broker, 5, 5),
            Err(CryptoError::EmptyValidity)
        ));
    }

    #[test]
    fn removing_root_breaks_chain() {
        let ca = testkeys::ca();
        let user = testkeys::identity("CN=testuser", Role::User);
        let root = issue_certificate(&ca, &ca, 0, 2_000_000_000).unwrap();
        let cert = issue_certificate(&ca, &user, 0, 1_000_000_000).unwrap();
        let mut trust = TrustStore::new([root]);
        trust.remove(ca.subject());
        assert!(matches!(
            trust.verify_chain(&cert, 10),
            Err(ChainError::UntrustedIssuer(_))
        ));
    }

    #[test]
    fn forged_issuer_signature_detected() {
        let ca = testkeys::ca();
        let rogue = testkeys::identity("CN=Rogue CA", Role::Ca);
        let user = testkeys::identity("CN=testuser", Role::User);
        let root = issue_certificate(&ca, &ca, 0, 2_000_000_000).unwrap();
        let mut cert = issue_certificate(&rogue, &user, 0, 1_000_000_000).unwrap();
        cert.issuer = ca.subject().to_string();
        let trust = TrustStore::new([root]);
        assert_eq!(trust.verify_chain(&cert, 10), Err(ChainError::BadIssuerSignature));
    }
}
