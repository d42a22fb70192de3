//! Site-side roles: the computing element, the job agent and the execution
//! gate that switches a payload to a per-user local account.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{bundle_to_text, verify_envelope, SignedEnvelope, TrustStore, VerificationReport};
use crate::delegation::{concessions_of, proxy_authorizes, ConcessionSet, Privilege, ProxyCredential};
use crate::jdl::{keys, serialize_jdl};
use crate::time::Epoch;

use super::catalogue::{checksum, CatalogueError, FileCatalogue};
use super::central::{CentralServices, TokenAuthority, TokenStatus, UploadError};

/// Local uid every pilot runs under.
pub const PILOT_UID: u32 = 10_000;
/// First uid handed to a mapped grid subject.
pub const FIRST_USER_UID: u32 = 20_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputingElement {
    pub name: String,
    /// Capability tag jobs are matched against.
    pub tag: String,
    pub broker: String,
    /// False models a compromised worker node.
    pub integrity: bool,
    pub pilots: Vec<String>,
}

impl ComputingElement {
    pub fn new(name: impl Into<String>, tag: impl Into<String>, broker: impl Into<String>) -> Self {
        ComputingElement {
            name: name.into(),
            tag: tag.into(),
            broker: broker.into(),
            integrity: true,
            pilots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalAccount {
    pub username: String,
    pub uid: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GateRefusal {
    #[error("no local account for `{0}`")]
    RefusedUnmappedSubject(String),
    #[error("refused: {0}")]
    RefusedInvalid(String),
}

/// Maps grid subjects to local accounts and refuses payloads that do not
/// carry a live, correctly bound envelope.
#[derive(Debug, Clone, Default)]
pub struct ExecutionGate {
    mapping: BTreeMap<String, LocalAccount>,
}

impl ExecutionGate {
    pub fn new() -> Self {
        ExecutionGate::default()
    }

    /// Adds `subject` to the mapping table and returns its account.
    pub fn map_subject(&mut self, subject: &str) -> LocalAccount {
        let next = FIRST_USER_UID + self.mapping.len() as u32;
        self.mapping
            .entry(subject.to_string())
            .or_insert_with(|| LocalAccount {
                username: format!("grid{:03}", next - FIRST_USER_UID),
                uid: next,
            })
            .clone()
    }

    pub fn account(&self, subject: &str) -> Option<&LocalAccount> {
        self.mapping.get(subject)
    }

    /// The account a countersigned envelope runs under when presented by
    /// pilot `presenter`.
    pub fn authorize(
        &self,
        s2: &SignedEnvelope,
        trust: &TrustStore,
        now: Epoch,
        presenter: &str,
        tokens: &dyn TokenAuthority,
    ) -> Result<LocalAccount, GateRefusal> {
        let report = verify_envelope(s2, trust, now);
        if !report.is_valid() {
            let why = report.failures().iter().map(ToString::to_string).collect::<Vec<_>>();
            return Err(GateRefusal::RefusedInvalid(why.join(", ")));
        }
        if s2.signed_value(keys::PILOT_IDENTIFIER) != Some(presenter) {
            return Err(GateRefusal::RefusedInvalid("envelope names another pilot".into()));
        }
        match tokens.token_status(s2, presenter) {
            TokenStatus::Active { .. } => {}
            other => return Err(GateRefusal::RefusedInvalid(format!("token {other}"))),
        }
        let user = s2.user().unwrap_or_default();
        self.account(user)
            .cloned()
            .ok_or_else(|| GateRefusal::RefusedUnmappedSubject(user.to_string()))
    }

    /// The baseline check: any proxy valid at `now` that may execute maps to
    /// its owner.
    pub fn authorize_proxy(&self, pc: &ProxyCredential, now: Epoch) -> Result<LocalAccount, GateRefusal> {
        if !proxy_authorizes(pc, Privilege::Execute, "", None, now) {
            return Err(GateRefusal::RefusedInvalid("proxy outside its window".into()));
        }
        self.account(&pc.owner)
            .cloned()
            .ok_or_else(|| GateRefusal::RefusedUnmappedSubject(pc.owner.clone()))
    }
}

/// What a payload does once started.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JobProgram {
    pub executable: String,
    pub reads: Vec<String>,
    pub writes: Vec<(String, Vec<u8>)>,
    /// `(url, content)` retrieved from outside the grid.
    pub fetch: Vec<(String, Vec<u8>)>,
}

impl JobProgram {
    /// The well-behaved program for an envelope: run its executable, read
    /// every input and write every declared output.
    pub fn declared(e: &SignedEnvelope, job_id: &str) -> Self {
        let inner = e.innermost().jdl();
        let inputs: Vec<String> = match e.signed_field(keys::SUB_JOB_INPUT_FILE) {
            Some(sub) if e.depth() > 1 => sub.to_vec(),
            _ => inner.get(keys::INPUT_FILE).unwrap_or_default().to_vec(),
        };
        JobProgram {
            executable: inner.first(keys::EXECUTABLE).unwrap_or_default().to_string(),
            reads: inputs,
            writes: inner
                .get(keys::OUTPUT)
                .unwrap_or_default()
                .iter()
                .map(|o| (o.clone(), format!("{job_id}:{o}\n").into_bytes()))
                .collect(),
            fetch: Vec::new(),
        }
    }
}

/// Evidence a site keeps about one payload run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub job_id: String,
    pub site: String,
    pub pilot: String,
    pub user: String,
    pub account: LocalAccount,
    pub pilot_uid: u32,
    pub started_at: Epoch,
    /// Canonical text of the executed JDL, as signed by the user.
    pub jdl: String,
    pub broker: Option<String>,
    /// Hex SHA-384 of the envelope's wire form.
    pub envelope_digest: String,
    /// `(path, checksum)` of every input read.
    pub reads: Vec<(String, String)>,
    pub writes: Vec<String>,
    /// `(url, checksum)` of every external retrieval.
    pub fetched: Vec<(String, String)>,
    pub node_integrity: bool,
}

impl ExecutionRecord {
    /// Line-oriented summary kept in the central ledger.
    pub fn to_log_body(&self) -> String {
        let mut out = format!(
            "site={}\npilot={}\nuser={}\nuid={}\npilot_uid={}\nenvelope={}\n",
            self.site, self.pilot, self.user, self.account.uid, self.pilot_uid, self.envelope_digest
        );
        for (path, sum) in &self.reads {
            out.push_str(&format!("read={sum} {path}\n"));
        }
        for path in &self.writes {
            out.push_str(&format!("write={path}\n"));
        }
        for (url, sum) in &self.fetched {
            out.push_str(&format!("fetch={sum} {url}\n"));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum SiteError {
    #[error("validation failed:\n{0}")]
    ValidationFailed(VerificationReport),
    #[error("{privilege} on `{entity}` is not conceded")]
    ConcessionDenied { privilege: Privilege, entity: String },
    #[error("envelope names another pilot")]
    NotForThisPilot,
    #[error("token refused: {0}")]
    TokenRefused(TokenStatus),
    #[error(transparent)]
    Gate(#[from] GateRefusal),
    #[error(transparent)]
    Catalogue(#[from] CatalogueError),
    #[error(transparent)]
    Upload(#[from] UploadError),
}

impl SiteError {
    pub fn kind(&self) -> &'static str {
        match self {
            SiteError::ValidationFailed(_) => "ValidationFailed",
            SiteError::ConcessionDenied { .. } => "ConcessionDenied",
            SiteError::NotForThisPilot => "NotForThisPilot",
            SiteError::TokenRefused(_) => "TokenRefused",
            SiteError::Gate(GateRefusal::RefusedInvalid(_)) => "RefusedInvalid",
            SiteError::Gate(GateRefusal::RefusedUnmappedSubject(_)) => "RefusedUnmappedSubject",
            SiteError::Catalogue(_) => "CatalogueError",
            SiteError::Upload(_) => "UploadRefused",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteLogEntry {
    pub time: Epoch,
    pub job_id: String,
    pub accepted: bool,
    /// The envelope and its certificates as received.
    pub bundle: String,
}

/// A pilot running on a worker node.
#[derive(Debug, Clone)]
pub struct JobAgent {
    pub pilot: String,
    pub site: String,
    pub uid: u32,
    pub node_integrity: bool,
    pub site_log: Vec<SiteLogEntry>,
    pub history: Vec<ExecutionRecord>,
}

fn require(set: &ConcessionSet, privilege: Privilege, entity: &str) -> Result<(), SiteError> {
    if set.iter().any(|c| c.privilege == privilege && c.entity == entity) {
        Ok(())
    } else {
        Err(SiteError::ConcessionDenied {
            privilege,
            entity: entity.to_string(),
        })
    }
}

impl JobAgent {
    pub fn new(pilot: impl Into<String>, site: &ComputingElement) -> Self {
        JobAgent {
            pilot: pilot.into(),
            site: site.name.clone(),
            uid: PILOT_UID,
            node_integrity: site.integrity,
            site_log: Vec::new(),
            history: Vec::new(),
        }
    }

    /// Verifies a countersigned envelope, hands it to the gate and runs
    /// `program` strictly within the envelope's concessions. Without a gate
    /// the payload runs under the pilot's own uid.
    ///
    /// Every run that gets past the checks is kept in `history`, including
    /// runs that stop part way with `ConcessionDenied`.
    #[allow(clippy::too_many_arguments)]
    pub fn validate_and_run(
        &mut self,
        job_id: &str,
        s2: &SignedEnvelope,
        trust: &TrustStore,
        now: Epoch,
        gate: Option<&ExecutionGate>,
        cs: &mut CentralServices,
        catalogue: &mut FileCatalogue,
        program: &JobProgram,
    ) -> Result<ExecutionRecord, SiteError> {
        let report = verify_envelope(s2, trust, now);
        let mut log = SiteLogEntry {
            time: now,
            job_id: job_id.to_string(),
            accepted: false,
            bundle: bundle_to_text(s2),
        };
        let checked = if !report.is_valid() {
            Err(SiteError::ValidationFailed(report))
        } else if s2.signed_value(keys::PILOT_IDENTIFIER) != Some(self.pilot.as_str()) {
            Err(SiteError::NotForThisPilot)
        } else {
            match cs.token_status(s2, &self.pilot) {
                TokenStatus::Active { .. } => match gate {
                    Some(g) => g.authorize(s2, trust, now, &self.pilot, &*cs).map_err(SiteError::from),
                    None => Ok(LocalAccount {
                        username: "pilot".into(),
                        uid: self.uid,
                    }),
                },
                other => Err(SiteError::TokenRefused(other)),
            }
        };
        log.accepted = checked.is_ok();
        self.site_log.push(log);
        let account = checked?;

        self.history.push(ExecutionRecord {
            job_id: job_id.to_string(),
            site: self.site.clone(),
            pilot: self.pilot.clone(),
            user: s2.user().unwrap_or_default().to_string(),
            account,
            pilot_uid: self.uid,
            started_at: now,
            jdl: serialize_jdl(s2.innermost().jdl()),
            broker: s2.current_broker().map(String::from),
            envelope_digest: hex::encode(s2.digest()),
            reads: Vec::new(),
            writes: Vec::new(),
            fetched: Vec::new(),
            node_integrity: self.node_integrity,
        });
        let record = self.history.last_mut().expect("just pushed");
        let granted = concessions_of(s2);
        require(&granted, Privilege::Execute, &program.executable)?;
        for path in &program.reads {
            require(&granted, Privilege::Read, path)?;
            let content = catalogue.read(path)?;
            record.reads.push((path.clone(), checksum(&content)));
        }
        for (url, content) in &program.fetch {
            record.fetched.push((url.clone(), checksum(content)));
        }
        for (entity, content) in &program.writes {
            require(&granted, Privilege::Write, entity)?;
            cs.accept_upload(&self.pilot, s2, entity, content, now, catalogue)?;
            record
                .writes
                .push(super::central::output_path(&record.user, job_id, entity));
        }
        Ok(record.clone())
    }
}
