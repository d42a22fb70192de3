//! Deterministic event-driven simulation of the job lifecycle, with an
//! adversary that sits on every link.

mod message;
mod oracle;
mod outcome;
mod scenario;
mod world;

use thiserror::Error;

pub use message::{FrameError, Message};
pub use oracle::{Abuse, Verdict, OBJECTIVES};
pub use outcome::{AttackResult, ForensicCheck, ScenarioEvent, ScenarioOutcome};
pub use scenario::{
    AdversaryAction, AdversaryRule, ArtifactSpec, AttackKind, AttackSpec, BrokerSpec, CatalogueOp, FileSpec,
    ForgeSigner, IncidentSpec, JobSpec, Model, Scenario, SiteSpec, TamperOffset, TimeRef, Trigger, DEFAULT_START,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    /// `line` is 1-based. Problems that span lines, such as a site naming
    /// an undeclared broker, report line 0.
    #[error("malformed scenario (line {line}): {reason}")]
    MalformedScenario { line: usize, reason: String },
}

/// Runs `scenario` to quiescence. Identical inputs give identical outcomes.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> ScenarioOutcome {
    world::World::new(scenario, seed).run()
}

/// Parses and runs scenario text.
pub fn run_scenario_text(text: &str, seed: u64) -> Result<ScenarioOutcome, SimError> {
    Ok(run_scenario(&Scenario::parse(text)?, seed))
}

const BUILTIN: &[(&str, &str)] = &[
    ("HAPPY_PATH", include_str!("../../scenarios/happy_path.scn")),
    (
        "TAMPER_IN_TRANSIT",
        include_str!("../../scenarios/tamper_in_transit.scn"),
    ),
    (
        "FORGED_BROKER_SIG",
        include_str!("../../scenarios/forged_broker_sig.scn"),
    ),
    (
        "PILOT_TOKEN_THEFT",
        include_str!("../../scenarios/pilot_token_theft.scn"),
    ),
    (
        "REPLAY_AFTER_DONE",
        include_str!("../../scenarios/replay_after_done.scn"),
    ),
    ("EXPIRED_WINDOWS", include_str!("../../scenarios/expired_windows.scn")),
    ("SPLIT_JOB", include_str!("../../scenarios/split_job.scn")),
    (
        "RELAY_TWO_BROKERS",
        include_str!("../../scenarios/relay_two_brokers.scn"),
    ),
    (
        "PROXY_BASELINE_DIRECT",
        include_str!("../../scenarios/proxy_baseline_direct.scn"),
    ),
    (
        "PROXY_BASELINE_INDIRECT",
        include_str!("../../scenarios/proxy_baseline_indirect.scn"),
    ),
    (
        "CATALOGUE_FORENSICS",
        include_str!("../../scenarios/catalogue_forensics.scn"),
    ),
];

/// The shipped scenario corpus as `(name, text)` pairs.
pub fn builtin_scenarios() -> Vec<(&'static str, &'static str)> {
    BUILTIN.to_vec()
}

/// Looks a builtin up by name, ignoring case and `-`/`_` differences.
pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    let norm = |s: &str| s.to_ascii_uppercase().replace('-', "_");
    BUILTIN.iter().find(|(n, _)| *n == norm(name)).map(|(_, t)| *t)
}
