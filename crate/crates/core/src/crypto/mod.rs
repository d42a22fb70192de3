//! Identities, certificates and signed job envelopes.

mod cert;
mod envelope;
mod identity;
mod keys;
mod pem;
mod seeded;
mod verify;
mod wire;

pub use cert::{issue_certificate, Certificate, ChainError, TrustStore};
pub use envelope::{sign_envelope, Payload, Signature, SignedEnvelope};
pub use identity::{common_name, generate_identity, Credential, Identity, Role};
pub use keys::{PrivateKey, PublicKey, SignatureAlgorithm, DEFAULT_RSA_BITS};
pub use pem::parse_certificates;
pub use seeded::seeded_identity;
pub use verify::{
    verify_envelope, verify_text, BindingStatus, Failure, LayerReport, SignatureStatus, VerificationReport,
};
pub use wire::{bundle_to_text, parse_bundle, parse_envelope, serialize_envelope, MAX_DEPTH};

use thiserror::Error;

use crate::jdl::JdlError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("subject must not be empty")]
    EmptySubject,
    #[error("invalid subject `{0}`")]
    InvalidSubject(String),
    #[error("issuer is not a certificate authority")]
    NotACa,
    #[error("certificate validity window is empty")]
    EmptyValidity,
    #[error("envelope window is empty or inverted")]
    InvalidWindow,
    #[error("payload has no HashOrd entry")]
    MissingHashOrd,
    #[error("outer HashOrd does not cover the nested envelope")]
    NestedNotCovered,
    #[error(transparent)]
    Jdl(JdlError),
    #[error("malformed envelope at byte {pos}: {reason}")]
    MalformedEnvelope { pos: usize, reason: String },
    #[error("key error: {0}")]
    Key(String),
    #[error("bad armoured text: {0}")]
    Pem(String),
}

impl From<JdlError> for CryptoError {
    fn from(e: JdlError) -> Self {
        match e {
            JdlError::MissingHashOrd => CryptoError::MissingHashOrd,
            other => CryptoError::Jdl(other),
        }
    }
}

#[cfg(test)]
pub(crate) mod testkeys {
    use super::*;

    pub fn identity(subject: &str, role: Role) -> Identity {
        seeded_identity(0, subject, role, DEFAULT_RSA_BITS).unwrap()
    }

    pub fn ca() -> Identity {
        identity("CN=Grid CA", Role::Ca)
    }

    pub fn trust() -> TrustStore {
        let ca = ca();
        TrustStore::new([issue_certificate(&ca, &ca, 0, 2_000_000_000).unwrap()])
    }

    pub fn credential(subject: &str, role: Role) -> Credential {
        let id = identity(subject, role);
        let cert = issue_certificate(&ca(), &id, 0, 2_000_000_000).unwrap();
        Credential::new(id, cert)
    }

    pub const LISTING: &str = r#"<SJDL><NOTBEFORE>1312392035</NOTBEFORE><NOTAFTER>1313601635</NOTAFTER><NESTEDJDL>
  <SJDL><NOTBEFORE>1312392035</NOTBEFORE><NOTAFTER>1313601635</NOTAFTER><NESTEDJDL>
    Executable = {"cat"};
    Arguments = {"myInputFile"};
    InputFile = {"/catalogue/data/myInputFile"};
    Output = {"stdout","stderr"};
    User = {"testuser"};
    Broker = {"myVO"};
    HashOrd = "Executable-Arguments-InputFile-Output-User-Broker";
  </NESTEDJDL><SIGNATURE>FTi2ATSgQ[...]CoA0TG==</SIGNATURE></SJDL>
  PilotIdentifier = {"FpK0bE9P[...]Jq1zNx"};
  HashOrd = "SJDL-PilotIdentifier";
</NESTEDJDL><SIGNATURE>EMQlV0Wzg[...]r47ivk=</SIGNATURE></SJDL>
"#;
}
