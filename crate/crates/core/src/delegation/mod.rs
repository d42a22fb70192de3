//! Delegation: concessions extracted from signed envelopes, the mediation
//! mappings that produce them, and the proxy-credential baseline they are
//! compared against.

mod concession;
mod mediation;
mod proxy;

pub use concession::{concessions_of, extract_concessions, project, Concession, ConcessionSet, Privilege};
pub use mediation::{phi, psi, rho, split_job, Derivative};
pub use proxy::{gamma_pc, proxy_authorizes, MyProxy, MyProxyError, ProxyCredential, DERIVED_LIFETIME};

use thiserror::Error;

use crate::crypto::{CryptoError, Failure};
use crate::jdl::JdlError;

fn list(failures: &[Failure]) -> String {
    failures.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DelegationError {
    #[error("job names user `{found}` but is signed by `{expected}`")]
    UserMismatch { expected: String, found: String },
    #[error("job does not name a signed Broker")]
    BrokerMissing,
    #[error("broker mismatch: expected `{expected}`, found `{found}`")]
    BrokerMismatch { expected: String, found: String },
    #[error("PilotIdentifier may only be added when assigning a pilot")]
    AgentFieldForbidden,
    #[error("agent mismatch: expected `{expected}`, found `{found}`")]
    AgentMismatch { expected: String, found: String },
    #[error("inner envelope does not verify: {}", list(.0))]
    InnerInvalid(Vec<Failure>),
    #[error("envelope does not verify: {}", list(.0))]
    NotValid(Vec<Failure>),
    #[error("derivative would alter signed key `{0}`")]
    NonAppendDerivative(String),
    #[error("derivative {0} is not allowed here")]
    DerivativeNotAllowed(&'static str),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("window is not inside every signed window")]
    WindowOutsideUserWindow,
    #[error("request already carries a pilot assignment")]
    AlreadyMediated,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl From<JdlError> for DelegationError {
    fn from(e: JdlError) -> Self {
        DelegationError::Crypto(e.into())
    }
}
