use std::collections::BTreeMap;
use std::fmt;

use crate::crypto::SignedEnvelope;
use crate::delegation::Derivative;
use crate::time::Epoch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JobState {
    Waiting,
    Assigned,
    Done,
    Error,
    Invalidated,
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Done | JobState::Error | JobState::Invalidated)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobState::Waiting => "WAITING",
            JobState::Assigned => "ASSIGNED",
            JobState::Done => "DONE",
            JobState::Error => "ERROR",
            JobState::Invalidated => "INVALIDATED",
        })
    }
}

#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub job_id: String,
    /// The request as received: the user's sJDL, or a relayed form of it.
    pub request: SignedEnvelope,
    pub derivatives: Vec<Derivative>,
    pub requirement: Option<String>,
    pub state: JobState,
    pub agent: Option<String>,
    pub assignment: Option<SignedEnvelope>,
    pub pilot_requested: bool,
    pub enqueued_at: Epoch,
}

/// Jobs in submission order, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TaskQueue {
    order: Vec<String>,
    entries: BTreeMap<String, QueueEntry>,
}

impl TaskQueue {
    pub fn new() -> Self {
        TaskQueue::default()
    }

    /// Returns false if the id is already taken.
    pub fn push(&mut self, entry: QueueEntry) -> bool {
        if self.entries.contains_key(&entry.job_id) {
            return false;
        }
        self.order.push(entry.job_id.clone());
        self.entries.insert(entry.job_id.clone(), entry);
        true
    }

    pub fn get(&self, job_id: &str) -> Option<&QueueEntry> {
        self.entries.get(job_id)
    }

    pub fn get_mut(&mut self, job_id: &str) -> Option<&mut QueueEntry> {
        self.entries.get_mut(job_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.order.iter().map(|id| &self.entries[id])
    }

    pub fn ids(&self) -> Vec<String> {
        self.order.clone()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Whether a site advertising `tag` can run the entry.
    pub fn matches(entry: &QueueEntry, tag: &str) -> bool {
        entry.requirement.as_deref().is_none_or(|r| r == tag)
    }

    /// First waiting job a site with `tag` can run.
    pub fn next_waiting(&self, tag: &str) -> Option<&QueueEntry> {
        self.iter()
            .find(|e| e.state == JobState::Waiting && TaskQueue::matches(e, tag))
    }
}
