use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::crypto::{verify_envelope, SignedEnvelope, TrustStore};
use crate::jdl::keys;
use crate::time::Epoch;

use super::DelegationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Privilege {
    Read,
    Write,
    Execute,
    Submit,
}

impl Privilege {
    pub const ALL: [Privilege; 4] = [Privilege::Read, Privilege::Write, Privilege::Execute, Privilege::Submit];

    pub fn as_str(&self) -> &'static str {
        match self {
            Privilege::Read => "READ",
            Privilege::Write => "WRITE",
            Privilege::Execute => "EXECUTE",
            Privilege::Submit => "SUBMIT",
        }
    }
}

impl fmt::Display for Privilege {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Privilege {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Privilege::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown privilege `{s}`"))
    }
}

/// One definite delegated privilege. Without an agent it is still a
/// request; with one it has been mediated to a specific pilot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Concession {
    pub user: String,
    pub privilege: Privilege,
    pub entity: String,
    pub agent: Option<String>,
    pub timestamp: Epoch,
    pub broker: String,
}

impl Concession {
    pub fn is_mediated(&self) -> bool {
        self.agent.is_some()
    }

    /// `PRIV<TAB>ENTITY<TAB>AGENT|-<TAB>USER`
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.privilege,
            self.entity,
            self.agent.as_deref().unwrap_or("-"),
            self.user
        )
    }

    pub fn projection(&self) -> (String, Privilege, String) {
        (self.user.clone(), self.privilege, self.entity.clone())
    }
}

pub type ConcessionSet = BTreeSet<Concession>;

pub fn project(set: &ConcessionSet) -> BTreeSet<(String, Privilege, String)> {
    set.iter().map(Concession::projection).collect()
}

/// Verifies `e` at `now` and lists the privileges it delegates.
pub fn extract_concessions(
    e: &SignedEnvelope,
    trust: &TrustStore,
    now: Epoch,
) -> Result<ConcessionSet, DelegationError> {
    let report = verify_envelope(e, trust, now);
    if !report.is_valid() {
        return Err(DelegationError::NotValid(report.failures()));
    }
    Ok(concessions_of(e))
}

/// Concessions named by an envelope, without verifying it.
///
/// Entities come from the user-signed layer only. A signed sub-job list can
/// narrow the READ set but never widen it.
pub fn concessions_of(e: &SignedEnvelope) -> ConcessionSet {
    let inner = e.innermost().jdl();
    let signed = |key: &str| -> Vec<String> {
        if inner.is_protected(key) {
            inner.get(key).map(<[String]>::to_vec).unwrap_or_default()
        } else {
            Vec::new()
        }
    };
    let user = e.user().unwrap_or_default().to_string();
    let broker = e.current_broker().unwrap_or_default().to_string();
    let agent = e.signed_value(keys::PILOT_IDENTIFIER).map(String::from);
    let timestamp = e.window().not_before;

    let mut inputs = signed(keys::INPUT_FILE);
    if e.depth() > 1 {
        if let Some(sub) = e.signed_field(keys::SUB_JOB_INPUT_FILE) {
            inputs.retain(|f| sub.contains(f));
        }
    }

    let grants = inputs
        .into_iter()
        .map(|f| (Privilege::Read, f))
        .chain(signed(keys::OUTPUT).into_iter().map(|f| (Privilege::Write, f)))
        .chain(signed(keys::EXECUTABLE).into_iter().map(|f| (Privilege::Execute, f)));

    grants
        .filter(|(_, entity)| !entity.is_empty())
        .map(|(privilege, entity)| Concession {
            user: user.clone(),
            privilege,
            entity,
            agent: agent.clone(),
            timestamp,
            broker: broker.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn privilege_names_round_trip() {
        for p in Privilege::ALL {
            assert_eq!(p.as_str().parse::<Privilege>().unwrap(), p);
        }
        assert!("ADMIN".parse::<Privilege>().is_err());
    }

    #[test]
    fn line_format() {
        let c = Concession {
            user: "testuser".into(),
            privilege: Privilege::Read,
            entity: "/catalogue/data/myInputFile".into(),
            agent: None,
            timestamp: 0,
            broker: "myVO".into(),
        };
        assert_eq!(c.to_line(), "READ\t/catalogue/data/myInputFile\t-\ttestuser");
    }
}
