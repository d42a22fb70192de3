//! Classifies where a malicious artifact came from and whether the user
//! who submitted the job can be held to it.

use std::fmt;

use thiserror::Error;

use crate::actors::catalogue::{checksum, FileCatalogue};
use crate::crypto::{parse_bundle, verify_envelope, SignedEnvelope, TrustStore};
use crate::delegation::{concessions_of, Privilege};
use crate::jdl::keys;
use crate::time::Epoch;

use super::ledger::{ledger_verify, Ledger, RecordKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// Files in the grid file system.
    InternalI,
    /// Software packages distributed by the VO.
    InternalII,
    /// The worker node or site installation.
    InternalIII,
    External,
    Unattributable,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::InternalI => "INTERNAL_I",
            Origin::InternalII => "INTERNAL_II",
            Origin::InternalIII => "INTERNAL_III",
            Origin::External => "EXTERNAL",
            Origin::Unattributable => "UNATTRIBUTABLE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Accountable {
    Yes,
    No,
    Indeterminate,
}

impl fmt::Display for Accountable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Accountable::Yes => "YES",
            Accountable::No => "NO",
            Accountable::Indeterminate => "INDETERMINATE",
        })
    }
}

/// An observed malicious artifact and what is known about its setting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incident {
    pub job_id: String,
    /// Hex SHA-384 of the artifact.
    pub artifact: String,
    /// When the investigation takes place.
    pub at: Epoch,
    pub catalogue_trusted: bool,
    pub node_compromised: bool,
    pub package_compromised: bool,
}

impl Incident {
    pub fn new(job_id: impl Into<String>, artifact: impl Into<String>, at: Epoch) -> Self {
        Incident {
            job_id: job_id.into(),
            artifact: artifact.into(),
            at,
            catalogue_trusted: true,
            node_compromised: false,
            package_compromised: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForensicVerdict {
    pub job_id: String,
    pub artifact: String,
    pub origin: Origin,
    pub accountable: Accountable,
    /// Ledger record ids the verdict rests on.
    pub evidence: Vec<u64>,
    pub reason: String,
}

impl fmt::Display for ForensicVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.evidence.iter().map(u64::to_string).collect();
        writeln!(f, "incident    {} {}", self.job_id, self.artifact)?;
        writeln!(f, "origin      {}", self.origin)?;
        writeln!(f, "accountable {}", self.accountable)?;
        writeln!(
            f,
            "evidence    {}",
            if ids.is_empty() { "-".into() } else { ids.join(",") }
        )?;
        writeln!(f, "reason      {}", self.reason)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForensicError {
    #[error("no submission and countersignature recorded for `{0}`")]
    UnknownJob(String),
    #[error("ledger hash chain is broken")]
    LedgerBroken,
}

fn parent_of(job_id: &str) -> &str {
    job_id.rsplit_once('.').map_or(job_id, |(p, _)| p)
}

/// Classifies `incident` from the ledger and catalogue alone.
pub fn forensic_classify(
    incident: &Incident,
    ledger: &Ledger,
    catalogue: &FileCatalogue,
    trust: &TrustStore,
) -> Result<ForensicVerdict, ForensicError> {
    if !ledger_verify(ledger) {
        return Err(ForensicError::LedgerBroken);
    }
    let job = incident.job_id.as_str();
    let submission = ledger
        .find(RecordKind::Submission, job)
        .chain(ledger.find(RecordKind::Submission, parent_of(job)))
        .next()
        .ok_or_else(|| ForensicError::UnknownJob(job.to_string()))?;
    let countersign = ledger
        .find(RecordKind::Countersign, job)
        .last()
        .ok_or_else(|| ForensicError::UnknownJob(job.to_string()))?;
    let mut evidence = vec![submission.id, countersign.id];
    let site_logs: Vec<_> = ledger.find(RecordKind::SiteLog, job).collect();
    evidence.extend(site_logs.iter().map(|r| r.id));

    let verdict = |origin, accountable, evidence: Vec<u64>, reason: &str| ForensicVerdict {
        job_id: job.to_string(),
        artifact: incident.artifact.clone(),
        origin,
        accountable,
        evidence,
        reason: reason.to_string(),
    };

    if !incident.catalogue_trusted {
        return Ok(verdict(
            Origin::Unattributable,
            Accountable::Indeterminate,
            evidence,
            "catalogue not trusted, verdict withheld",
        ));
    }

    let envelope = match parse_bundle(&countersign.body) {
        Ok(e) if signature_holds(&e, trust) => e,
        _ => {
            return Ok(verdict(
                Origin::Unattributable,
                Accountable::No,
                evidence,
                "no verifiable user signature over the job",
            ))
        }
    };

    if incident.node_compromised {
        return Ok(verdict(
            Origin::InternalIII,
            Accountable::Indeterminate,
            evidence,
            "worker node integrity lost",
        ));
    }
    if incident.package_compromised {
        return Ok(verdict(
            Origin::InternalII,
            Accountable::Indeterminate,
            evidence,
            "software package compromised",
        ));
    }

    let user = envelope.user().unwrap_or_default().to_string();
    let submitted_at = submission.time;
    let mut unrecoverable = false;
    let inputs: Vec<String> = concessions_of(&envelope)
        .into_iter()
        .filter(|c| c.privilege == Privilege::Read)
        .map(|c| c.entity)
        .collect();
    for path in &inputs {
        for v in catalogue.history(path).iter().filter(|v| v.live_at(submitted_at)) {
            match catalogue.content_of(path, v, incident.at) {
                Ok(bytes) if checksum(&bytes) == v.checksum => {
                    if v.checksum != incident.artifact {
                        continue;
                    }
                    evidence.extend(
                        ledger
                            .find(RecordKind::CatalogueChange, path)
                            .filter(|r| r.time == v.from)
                            .map(|r| r.id),
                    );
                    return Ok(if v.owner == user {
                        verdict(
                            Origin::InternalI,
                            Accountable::Yes,
                            evidence,
                            &format!("signed input `{path}` owned by `{user}`"),
                        )
                    } else {
                        verdict(
                            Origin::InternalI,
                            Accountable::No,
                            evidence,
                            &format!("signed input `{path}` uploaded by `{}`", v.owner),
                        )
                    });
                }
                _ => unrecoverable = true,
            }
        }
    }

    let arguments = envelope.innermost().jdl().get(keys::ARGUMENTS).unwrap_or_default();
    for log in &site_logs {
        for line in log.body.lines() {
            let Some((sum, url)) = line.strip_prefix("fetch=").and_then(|l| l.split_once(' ')) else {
                continue;
            };
            if sum != incident.artifact {
                continue;
            }
            return Ok(if arguments.iter().any(|a| a == url) {
                verdict(
                    Origin::External,
                    Accountable::Yes,
                    evidence,
                    &format!("retrieved from `{url}` named in the signed arguments"),
                )
            } else {
                verdict(
                    Origin::External,
                    Accountable::Indeterminate,
                    evidence,
                    &format!("retrieved from `{url}`, not named in the request"),
                )
            });
        }
    }

    if unrecoverable {
        return Ok(verdict(
            Origin::Unattributable,
            Accountable::Indeterminate,
            evidence,
            "referenced content no longer recoverable",
        ));
    }
    Ok(verdict(
        Origin::Unattributable,
        Accountable::No,
        evidence,
        "artifact matches nothing the user referenced",
    ))
}

/// Whether every signature and chain in `e` verified when it was made.
/// Expiry since then does not matter to the evidence.
fn signature_holds(e: &SignedEnvelope, trust: &TrustStore) -> bool {
    let report = verify_envelope(e, trust, e.window().not_before);
    report.is_valid() && e.user().is_some()
}
