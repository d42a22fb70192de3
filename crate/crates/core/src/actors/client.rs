//! The submitting user's side of the protocol.

use thiserror::Error;

use crate::crypto::Credential;
use crate::delegation::{phi, DelegationError};
use crate::jdl::Jdl;
use crate::time::{Epoch, Window};

use super::central::{CentralServices, SubmissionError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Delegation(#[from] DelegationError),
    #[error(transparent)]
    Submission(#[from] SubmissionError),
}

/// Signs `jdl` for `cs` and submits it, returning the queued job id.
pub fn client_submit(
    user: &Credential,
    jdl: Jdl,
    window: Window,
    cs: &mut CentralServices,
    now: Epoch,
) -> Result<String, ClientError> {
    let name = cs.name().to_string();
    let sjdl = phi(user, jdl, &name, window)?;
    Ok(cs.accept_submission(sjdl, now)?)
}
