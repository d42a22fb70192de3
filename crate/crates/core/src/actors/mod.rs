//! Protocol roles as deterministic state machines.

pub mod baseline;
pub mod catalogue;
pub mod central;
pub mod client;
pub mod log;
pub mod queue;
pub mod site;

pub use baseline::{BaselineBroker, BaselineError, HeldCredential, Propagation};
pub use catalogue::{
    checksum, CatalogueChange, CatalogueEntry, CatalogueError, FileCatalogue, ShadowRecord, DEFAULT_STALE_HORIZON,
};
pub use central::{
    output_path, Assignment, CentralServices, FinalizeError, PilotRegistration, RequestError, SubmissionError,
    TokenAuthority, TokenStatus, UploadError,
};
pub use client::{client_submit, ClientError};
pub use log::{EventLog, LogRecord};
pub use queue::{JobState, QueueEntry, TaskQueue};
pub use site::{
    ComputingElement, ExecutionGate, ExecutionRecord, GateRefusal, JobAgent, JobProgram, LocalAccount, SiteError,
    SiteLogEntry,
};
