//! The VO's central services: submission checks, the task queue, pilot
//! registration, countersigning and the token lifecycle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use base64::engine::general_purpose::STANDARD_NO_PAD as B64;
use base64::Engine as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::audit::{Ledger, RecordKind};
use crate::crypto::{bundle_to_text, verify_envelope, Credential, Failure, SignedEnvelope, TrustStore};
use crate::delegation::{concessions_of, psi, rho, split_job, DelegationError, Privilege};
use crate::jdl::keys;
use crate::time::{Epoch, TimeStatus, Window};

use super::catalogue::{CatalogueChange, FileCatalogue};
use super::queue::{JobState, QueueEntry, TaskQueue};

pub const DEFAULT_RUN_WINDOW: i64 = 3600;
pub const DEFAULT_SUBMISSION_TOLERANCE: i64 = 300;

/// Optional JDL key naming the site tag a job must run on.
pub const REQUIREMENTS_KEY: &str = "Requirements";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotRegistration {
    pub id: String,
    pub site: String,
    pub tag: String,
    pub issued_at: Epoch,
    pub authorized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenStatus {
    Active { job_id: String },
    Revoked { job_id: String },
    WrongPilot { job_id: String },
    Unknown,
}

impl fmt::Display for TokenStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenStatus::Active { job_id } => write!(f, "ACTIVE({job_id})"),
            TokenStatus::Revoked { job_id } => write!(f, "REVOKED({job_id})"),
            TokenStatus::WrongPilot { job_id } => write!(f, "WRONG_PILOT({job_id})"),
            TokenStatus::Unknown => f.write_str("UNKNOWN"),
        }
    }
}

/// Answers whether a countersigned envelope may still be used by the pilot
/// presenting it.
pub trait TokenAuthority {
    fn token_status(&self, envelope: &SignedEnvelope, presenter: &str) -> TokenStatus;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmissionError {
    #[error("signature check failed: {}", list(.0))]
    RejectedBadSignature(Vec<Failure>),
    #[error("submission time stamps rejected: {0}")]
    RejectedWindow(String),
    #[error("this request was already submitted")]
    RejectedDuplicate,
    #[error("request is addressed to `{0}`")]
    RejectedWrongBroker(String),
    #[error("not a mediation request: {0}")]
    RejectedMalformed(String),
}

fn list(f: &[Failure]) -> String {
    f.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequestError {
    #[error("unknown pilot identifier")]
    UnknownPilot,
    #[error("no matching job")]
    NoMatch,
    #[error("job is not assigned to this pilot")]
    ForeignJob,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FinalizeError {
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("job `{0}` is already in a terminal state")]
    AlreadyTerminal(String),
    #[error("job `{0}` is not assigned to this pilot")]
    NotAssigned(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UploadError {
    #[error("token refused: {0}")]
    TokenRefused(TokenStatus),
    #[error("envelope does not verify: {}", list(.0))]
    NotValid(Vec<Failure>),
    #[error("no WRITE concession for `{0}`")]
    ConcessionDenied(String),
}

#[derive(Debug, Clone)]
pub struct Assignment {
    pub job_id: String,
    /// The countersigned envelope with signer certificates attached.
    pub envelope: SignedEnvelope,
}

#[derive(Debug, Clone)]
struct TokenRecord {
    job_id: String,
    pilot: String,
    active: bool,
}

/// Where an upload for `entity` lands in the catalogue.
pub fn output_path(user: &str, job_id: &str, entity: &str) -> String {
    if entity.starts_with('/') {
        entity.to_string()
    } else {
        format!("/grid/{user}/{job_id}/{entity}")
    }
}

pub struct CentralServices {
    credential: Credential,
    trust: TrustStore,
    queue: TaskQueue,
    pilots: BTreeMap<String, PilotRegistration>,
    tokens: BTreeMap<[u8; 48], TokenRecord>,
    seen: BTreeSet<[u8; 48]>,
    rng: ChaCha20Rng,
    ledger: Ledger,
    next_job: u64,
    run_window: i64,
    tolerance: i64,
}

impl CentralServices {
    pub fn new(credential: Credential, trust: TrustStore, seed: u64) -> Self {
        CentralServices {
            credential,
            trust,
            queue: TaskQueue::new(),
            pilots: BTreeMap::new(),
            tokens: BTreeMap::new(),
            seen: BTreeSet::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            ledger: Ledger::new(),
            next_job: 1,
            run_window: DEFAULT_RUN_WINDOW,
            tolerance: DEFAULT_SUBMISSION_TOLERANCE,
        }
    }

    pub fn with_run_window(mut self, seconds: i64) -> Self {
        self.run_window = seconds;
        self
    }

    pub fn with_tolerance(mut self, seconds: i64) -> Self {
        self.tolerance = seconds;
        self
    }

    pub fn name(&self) -> &str {
        self.credential.common_name()
    }

    pub fn credential(&self) -> &Credential {
        &self.credential
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.queue
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    pub fn pilot(&self, id: &str) -> Option<&PilotRegistration> {
        self.pilots.get(id)
    }

    fn new_job_id(&mut self) -> String {
        let id = format!("job-{:04}", self.next_job);
        self.next_job += 1;
        id
    }

    fn enqueue(&mut self, job_id: String, request: SignedEnvelope, now: Epoch) {
        let requirement = request.signed_value(REQUIREMENTS_KEY).map(String::from);
        self.queue.push(QueueEntry {
            job_id,
            request,
            derivatives: Vec::new(),
            requirement,
            state: JobState::Waiting,
            agent: None,
            assignment: None,
            pilot_requested: false,
            enqueued_at: now,
        });
    }

    fn admit(&mut self, e: &SignedEnvelope, now: Epoch) -> Result<(), SubmissionError> {
        if e.signed_field(keys::PILOT_IDENTIFIER).is_some() {
            return Err(SubmissionError::RejectedMalformed("already carries a pilot".into()));
        }
        let report = verify_envelope(e, &self.trust, now);
        let fails = report.failures();
        let non_time: Vec<Failure> = fails
            .iter()
            .filter(|f| !matches!(f, Failure::Expired(_) | Failure::NotYetValid(_)))
            .cloned()
            .collect();
        if !non_time.is_empty() {
            return Err(SubmissionError::RejectedBadSignature(non_time));
        }
        match e.current_broker() {
            Some(b) if b == self.name() => {}
            other => return Err(SubmissionError::RejectedWrongBroker(other.unwrap_or("-").to_string())),
        }
        if self.seen.contains(&e.digest()) {
            return Err(SubmissionError::RejectedDuplicate);
        }
        Ok(())
    }

    /// Checks a user's sJDL and queues it. The signed submission time must
    /// lie within the tolerance of `now` and the window must still be open.
    pub fn accept_submission(&mut self, e: SignedEnvelope, now: Epoch) -> Result<String, SubmissionError> {
        if e.depth() != 1 {
            return Err(SubmissionError::RejectedMalformed(format!("depth {}", e.depth())));
        }
        self.admit(&e, now)?;
        let w = e.window();
        if (w.not_before - now).abs() > self.tolerance {
            return Err(SubmissionError::RejectedWindow(format!(
                "submission time {} is more than {}s from {now}",
                w.not_before, self.tolerance
            )));
        }
        if w.status(now) == TimeStatus::Expired {
            return Err(SubmissionError::RejectedWindow(format!("window {w} has expired")));
        }
        self.seen.insert(e.digest());
        let job_id = self.new_job_id();
        self.ledger
            .append(RecordKind::Submission, now, job_id.clone(), bundle_to_text(&e));
        self.enqueue(job_id.clone(), e, now);
        Ok(job_id)
    }

    /// Accepts a request relayed by another broker and naming this one.
    pub fn accept_relay(&mut self, e: SignedEnvelope, now: Epoch) -> Result<String, SubmissionError> {
        if e.depth() < 2 {
            return Err(SubmissionError::RejectedMalformed("not a relayed request".into()));
        }
        self.admit(&e, now)?;
        let report = verify_envelope(&e, &self.trust, now);
        if !report.is_valid() {
            return Err(SubmissionError::RejectedWindow(list(&report.failures())));
        }
        self.seen.insert(e.digest());
        let job_id = self.new_job_id();
        self.ledger
            .append(RecordKind::Submission, now, job_id.clone(), bundle_to_text(&e));
        self.enqueue(job_id.clone(), e, now);
        Ok(job_id)
    }

    /// Hands a waiting job on to `next`, removing it from this queue.
    pub fn relay(&mut self, job_id: &str, next: &str, now: Epoch) -> Result<SignedEnvelope, DelegationError> {
        let entry = self
            .queue
            .get(job_id)
            .filter(|e| e.state == JobState::Waiting)
            .ok_or(DelegationError::AlreadyMediated)?;
        let until = entry
            .request
            .layers()
            .iter()
            .map(|l| l.window().not_after)
            .min()
            .unwrap_or(now);
        let window = Window::new(now, until).ok_or(DelegationError::WindowOutsideUserWindow)?;
        let relayed = rho(&self.credential, &entry.request, &[], next, window, &self.trust)?;
        let e = self.queue.get_mut(job_id).expect("present");
        e.state = JobState::Invalidated;
        self.ledger
            .append(RecordKind::Countersign, now, job_id, bundle_to_text(&relayed));
        Ok(relayed)
    }

    /// Replaces a waiting job by sub-jobs over disjoint slices of its input
    /// files. Returns the sub-job ids.
    pub fn split(&mut self, job_id: &str, parts: usize) -> Result<Vec<String>, DelegationError> {
        let entry = self
            .queue
            .get(job_id)
            .filter(|e| e.state == JobState::Waiting)
            .ok_or_else(|| DelegationError::InvalidSplit(format!("`{job_id}` is not waiting")))?
            .clone();
        let inputs = entry
            .request
            .innermost()
            .jdl()
            .get(keys::INPUT_FILE)
            .unwrap_or_default()
            .to_vec();
        let parts = parts.clamp(1, inputs.len().max(1));
        let mut slices = vec![Vec::new(); parts];
        for (i, f) in inputs.into_iter().enumerate() {
            slices[i % parts].push(f);
        }
        let derivatives = split_job(&entry.request, &slices)?;
        self.queue.get_mut(job_id).expect("present").state = JobState::Invalidated;
        let mut ids = Vec::new();
        for (i, d) in derivatives.into_iter().enumerate() {
            let id = format!("{job_id}.{i}");
            let mut sub = entry.clone();
            sub.job_id = id.clone();
            sub.derivatives = vec![d];
            self.queue.push(sub);
            ids.push(id);
        }
        Ok(ids)
    }

    /// Registers one pilot per waiting job a site with `tag` can run.
    pub fn request_pilots(&mut self, site: &str, tag: &str, now: Epoch) -> Vec<PilotRegistration> {
        let wanted: Vec<String> = self
            .queue
            .iter()
            .filter(|e| e.state == JobState::Waiting && !e.pilot_requested && TaskQueue::matches(e, tag))
            .map(|e| e.job_id.clone())
            .collect();
        let mut out = Vec::new();
        for job in wanted {
            self.queue.get_mut(&job).expect("listed").pilot_requested = true;
            let mut raw = [0u8; 16];
            self.rng.fill_bytes(&mut raw);
            let reg = PilotRegistration {
                id: B64.encode(raw),
                site: site.to_string(),
                tag: tag.to_string(),
                issued_at: now,
                authorized: true,
            };
            self.pilots.insert(reg.id.clone(), reg.clone());
            out.push(reg);
        }
        out
    }

    /// Countersigns the next matching job for `pilot`. Jobs whose windows
    /// no longer allow a run are invalidated on the way.
    pub fn request_job(&mut self, pilot: &str, now: Epoch) -> Result<Assignment, RequestError> {
        let tag = match self.pilots.get(pilot) {
            Some(p) if p.authorized => p.tag.clone(),
            _ => return Err(RequestError::UnknownPilot),
        };
        while let Some(entry) = self.queue.next_waiting(&tag) {
            let job_id = entry.job_id.clone();
            let until = entry
                .request
                .layers()
                .iter()
                .map(|l| l.window().not_after)
                .min()
                .unwrap_or(now)
                .min(now + self.run_window);
            let signed = Window::new(now, until)
                .ok_or(DelegationError::WindowOutsideUserWindow)
                .and_then(|w| {
                    psi(
                        &self.credential,
                        &entry.request,
                        &entry.derivatives,
                        pilot,
                        w,
                        &self.trust,
                    )
                });
            match signed {
                Ok(s2) => {
                    let e = self.queue.get_mut(&job_id).expect("present");
                    e.state = JobState::Assigned;
                    e.agent = Some(pilot.to_string());
                    e.assignment = Some(s2.clone());
                    self.tokens.insert(
                        s2.digest(),
                        TokenRecord {
                            job_id: job_id.clone(),
                            pilot: pilot.to_string(),
                            active: true,
                        },
                    );
                    self.ledger
                        .append(RecordKind::Countersign, now, job_id.clone(), bundle_to_text(&s2));
                    return Ok(Assignment { job_id, envelope: s2 });
                }
                Err(err) => {
                    self.queue.get_mut(&job_id).expect("present").state = JobState::Invalidated;
                    self.ledger.append(
                        RecordKind::Finalize,
                        now,
                        job_id,
                        format!("outcome={} reason={err}", JobState::Invalidated),
                    );
                }
            }
        }
        Err(RequestError::NoMatch)
    }

    /// The countersigned envelope of a job already assigned to `pilot`.
    pub fn fetch_assigned(&self, pilot: &str, job_id: &str) -> Result<Assignment, RequestError> {
        if !self.pilots.contains_key(pilot) {
            return Err(RequestError::UnknownPilot);
        }
        match self.queue.get(job_id) {
            Some(e) if e.agent.as_deref() == Some(pilot) && e.state == JobState::Assigned => Ok(Assignment {
                job_id: job_id.to_string(),
                envelope: e.assignment.clone().expect("assigned entries carry one"),
            }),
            _ => Err(RequestError::ForeignJob),
        }
    }

    /// Records the outcome of an assigned job and retires its token.
    pub fn finalize(&mut self, job_id: &str, pilot: &str, outcome: JobState, now: Epoch) -> Result<(), FinalizeError> {
        let entry = self
            .queue
            .get_mut(job_id)
            .ok_or_else(|| FinalizeError::UnknownJob(job_id.to_string()))?;
        if entry.state.is_terminal() {
            return Err(FinalizeError::AlreadyTerminal(job_id.to_string()));
        }
        if entry.state != JobState::Assigned || entry.agent.as_deref() != Some(pilot) {
            return Err(FinalizeError::NotAssigned(job_id.to_string()));
        }
        entry.state = if outcome.is_terminal() {
            outcome
        } else {
            JobState::Error
        };
        let state = entry.state;
        if let Some(s2) = &entry.assignment {
            if let Some(t) = self.tokens.get_mut(&s2.digest()) {
                t.active = false;
            }
        }
        self.ledger.append(
            RecordKind::Finalize,
            now,
            job_id,
            format!("outcome={state} pilot={pilot}"),
        );
        Ok(())
    }

    /// Stores an output file in the submitting user's name, if the
    /// presented envelope is a live token of `pilot` and grants WRITE on
    /// `entity`.
    pub fn accept_upload(
        &mut self,
        pilot: &str,
        envelope: &SignedEnvelope,
        entity: &str,
        content: &[u8],
        now: Epoch,
        catalogue: &mut FileCatalogue,
    ) -> Result<CatalogueChange, UploadError> {
        let job_id = match self.token_status(envelope, pilot) {
            TokenStatus::Active { job_id } => job_id,
            other => return Err(UploadError::TokenRefused(other)),
        };
        let report = verify_envelope(envelope, &self.trust, now);
        if !report.is_valid() {
            return Err(UploadError::NotValid(report.failures()));
        }
        let granted = concessions_of(envelope)
            .into_iter()
            .any(|c| c.privilege == Privilege::Write && c.entity == entity);
        if !granted {
            return Err(UploadError::ConcessionDenied(entity.to_string()));
        }
        let user = envelope.user().unwrap_or_default().to_string();
        let path = output_path(&user, &job_id, entity);
        let change = catalogue.write(&path, &user, content, now);
        self.ledger
            .append(RecordKind::CatalogueChange, now, path, change.to_string());
        Ok(change)
    }
}

impl TokenAuthority for CentralServices {
    fn token_status(&self, envelope: &SignedEnvelope, presenter: &str) -> TokenStatus {
        match self.tokens.get(&envelope.digest()) {
            None => TokenStatus::Unknown,
            Some(t) if !t.active => TokenStatus::Revoked {
                job_id: t.job_id.clone(),
            },
            Some(t) if t.pilot != presenter => TokenStatus::WrongPilot {
                job_id: t.job_id.clone(),
            },
            Some(t) => TokenStatus::Active {
                job_id: t.job_id.clone(),
            },
        }
    }
}
