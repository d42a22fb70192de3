//! Mediation requests and their countersignatures.
//!
//! [`phi`] turns a job description into a user-signed request addressed to
//! a broker. [`psi`] lets that broker bind the request to a pilot, and
//! [`rho`] lets it hand the request on to another broker first. Both only
//! append: the envelope they receive is carried verbatim.

use std::fmt;

use crate::crypto::{common_name, sign_envelope, verify_envelope, Credential, Payload, SignedEnvelope, TrustStore};
use crate::jdl::{keys, Jdl, HASH_ORD, NESTED_KEY};
use crate::time::Window;

use super::DelegationError;

/// Keys a broker may not add through [`Derivative::AppendField`]; each has a
/// dedicated derivative or is owned by the user.
const RESERVED: &[&str] = &[
    keys::EXECUTABLE,
    keys::ARGUMENTS,
    keys::INPUT_FILE,
    keys::OUTPUT,
    keys::USER,
    keys::BROKER,
    keys::PILOT_IDENTIFIER,
    keys::SUB_JOB_INDEX,
    keys::SUB_JOB_INPUT_FILE,
    HASH_ORD,
    NESTED_KEY,
];

/// A transformation a broker applies while mediating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Derivative {
    /// Restricts the job to a subset of its input files.
    Split { index: u32, inputs: Vec<String> },
    /// Adds a key that no inner layer carries.
    AppendField { key: String, values: Vec<String> },
    /// Names the pilot; must agree with the agent passed to [`psi`].
    AssignAgent { agent: String },
    /// Names the next broker; only valid in [`rho`].
    RetargetBroker { next: String },
}

impl Derivative {
    pub fn kind(&self) -> &'static str {
        match self {
            Derivative::Split { .. } => "SPLIT",
            Derivative::AppendField { .. } => "APPEND_FIELD",
            Derivative::AssignAgent { .. } => "ASSIGN_AGENT",
            Derivative::RetargetBroker { .. } => "RETARGET_BROKER",
        }
    }
}

impl fmt::Display for Derivative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Derivative::Split { index, inputs } => write!(f, "SPLIT #{index} {}", inputs.join(",")),
            Derivative::AppendField { key, values } => write!(f, "APPEND_FIELD {key}={}", values.join(",")),
            Derivative::AssignAgent { agent } => write!(f, "ASSIGN_AGENT {agent}"),
            Derivative::RetargetBroker { next } => write!(f, "RETARGET_BROKER {next}"),
        }
    }
}

/// Signs `jdl` as `user`, addressed to `broker`.
pub fn phi(user: &Credential, jdl: Jdl, broker: &str, window: Window) -> Result<SignedEnvelope, DelegationError> {
    let me = user.common_name();
    match jdl.first(keys::USER) {
        Some(u) if u == me && jdl.is_protected(keys::USER) => {}
        found => {
            return Err(DelegationError::UserMismatch {
                expected: me.to_string(),
                found: found.unwrap_or("-").to_string(),
            })
        }
    }
    let named = match jdl.first(keys::BROKER) {
        Some(b) if jdl.is_protected(keys::BROKER) => b,
        _ => return Err(DelegationError::BrokerMissing),
    };
    if named != common_name(broker) {
        return Err(DelegationError::BrokerMismatch {
            expected: common_name(broker).to_string(),
            found: named.to_string(),
        });
    }
    if jdl.contains_key(keys::PILOT_IDENTIFIER) {
        return Err(DelegationError::AgentFieldForbidden);
    }
    for key in [keys::SUB_JOB_INDEX, keys::SUB_JOB_INPUT_FILE] {
        if jdl.contains_key(key) {
            return Err(DelegationError::NonAppendDerivative(key.to_string()));
        }
    }
    Ok(sign_envelope(
        user,
        Payload::plain(jdl),
        window.not_before,
        window.not_after,
    )?)
}

/// Common checks before a broker countersigns `e` for `window`.
fn admit(broker: &Credential, e: &SignedEnvelope, window: Window, trust: &TrustStore) -> Result<(), DelegationError> {
    let report = verify_envelope(e, trust, window.not_before);
    if !report.is_valid() {
        return Err(DelegationError::InnerInvalid(report.failures()));
    }
    if e.signed_field(keys::PILOT_IDENTIFIER).is_some() {
        return Err(DelegationError::AlreadyMediated);
    }
    let me = broker.common_name();
    match e.current_broker() {
        Some(b) if b == me => {}
        found => {
            return Err(DelegationError::BrokerMismatch {
                expected: me.to_string(),
                found: found.unwrap_or("-").to_string(),
            })
        }
    }
    if e.layers().iter().any(|l| !window.within(&l.window())) {
        return Err(DelegationError::WindowOutsideUserWindow);
    }
    Ok(())
}

/// Appends the entries of `derivatives` that both [`psi`] and [`rho`]
/// accept, returning the ones left for the caller.
fn append_common<'a>(
    e: &SignedEnvelope,
    derivatives: &'a [Derivative],
    out: &mut Jdl,
) -> Result<Vec<&'a Derivative>, DelegationError> {
    let mut rest = Vec::new();
    let mut split_seen = false;
    for d in derivatives {
        match d {
            Derivative::Split { index, inputs } => {
                if split_seen {
                    return Err(DelegationError::InvalidSplit("more than one split".into()));
                }
                split_seen = true;
                check_split(e, inputs)?;
                out.insert(keys::SUB_JOB_INDEX, vec![index.to_string()])?;
                out.insert(keys::SUB_JOB_INPUT_FILE, inputs.clone())?;
            }
            Derivative::AppendField { key, values } => {
                if key == keys::PILOT_IDENTIFIER {
                    return Err(DelegationError::AgentFieldForbidden);
                }
                let in_inner = e.layers().iter().any(|l| l.jdl().contains_key(key));
                if in_inner || RESERVED.contains(&key.as_str()) || out.contains_key(key) {
                    return Err(DelegationError::NonAppendDerivative(key.clone()));
                }
                out.insert(key.clone(), values.clone())?;
            }
            other => rest.push(other),
        }
    }
    Ok(rest)
}

fn check_split(e: &SignedEnvelope, inputs: &[String]) -> Result<(), DelegationError> {
    if e.signed_field(keys::SUB_JOB_INPUT_FILE).is_some() {
        return Err(DelegationError::InvalidSplit("job is already a sub-job".into()));
    }
    let inner = e.innermost().jdl();
    let parent = if inner.is_protected(keys::INPUT_FILE) {
        inner.get(keys::INPUT_FILE).unwrap_or_default()
    } else {
        &[]
    };
    if inputs.is_empty() {
        return Err(DelegationError::InvalidSplit("empty sub-job".into()));
    }
    if let Some(f) = inputs.iter().find(|f| !parent.contains(f)) {
        return Err(DelegationError::InvalidSplit(format!(
            "`{f}` is not an input of the parent"
        )));
    }
    Ok(())
}

fn countersign(
    broker: &Credential,
    e: &SignedEnvelope,
    mut appended: Jdl,
    window: Window,
) -> Result<SignedEnvelope, DelegationError> {
    appended.seal(true);
    Ok(sign_envelope(
        broker,
        Payload::wrapping(e.clone(), appended),
        window.not_before,
        window.not_after,
    )?)
}

/// Countersigns a mediation request, binding it to `agent`.
pub fn psi(
    broker: &Credential,
    e: &SignedEnvelope,
    derivatives: &[Derivative],
    agent: &str,
    window: Window,
    trust: &TrustStore,
) -> Result<SignedEnvelope, DelegationError> {
    admit(broker, e, window, trust)?;
    if agent.is_empty() {
        return Err(DelegationError::AgentMismatch {
            expected: "-".into(),
            found: String::new(),
        });
    }
    let mut appended = Jdl::new();
    for d in append_common(e, derivatives, &mut appended)? {
        match d {
            Derivative::AssignAgent { agent: a } if a == agent => {}
            Derivative::AssignAgent { agent: a } => {
                return Err(DelegationError::AgentMismatch {
                    expected: agent.to_string(),
                    found: a.clone(),
                })
            }
            other => return Err(DelegationError::DerivativeNotAllowed(other.kind())),
        }
    }
    appended.insert(keys::PILOT_IDENTIFIER, vec![agent.to_string()])?;
    countersign(broker, e, appended, window)
}

/// Relays a mediation request to `next_broker` without assigning a pilot.
pub fn rho(
    broker: &Credential,
    e: &SignedEnvelope,
    derivatives: &[Derivative],
    next_broker: &str,
    window: Window,
    trust: &TrustStore,
) -> Result<SignedEnvelope, DelegationError> {
    admit(broker, e, window, trust)?;
    let next = common_name(next_broker);
    let mut appended = Jdl::new();
    for d in append_common(e, derivatives, &mut appended)? {
        match d {
            Derivative::AssignAgent { .. } => return Err(DelegationError::AgentFieldForbidden),
            Derivative::RetargetBroker { next: n } if common_name(n) == next => {}
            other => return Err(DelegationError::DerivativeNotAllowed(other.kind())),
        }
    }
    appended.insert(keys::BROKER, vec![next.to_string()])?;
    countersign(broker, e, appended, window)
}

/// One [`Derivative::Split`] per part, after checking every part against
/// the parent's signed input list.
pub fn split_job(e: &SignedEnvelope, parts: &[Vec<String>]) -> Result<Vec<Derivative>, DelegationError> {
    parts
        .iter()
        .enumerate()
        .map(|(i, inputs)| {
            check_split(e, inputs)?;
            Ok(Derivative::Split {
                index: i as u32,
                inputs: inputs.clone(),
            })
        })
        .collect()
}
