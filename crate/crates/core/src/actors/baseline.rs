//! A broker that propagates proxy credentials instead of signed requests.
//!
//! With direct propagation the broker keeps each user's proxy and hands it
//! to the pilot that takes the job. With indirect propagation the proxy sits
//! in a credential repository and the pilot gets a retrieval key.

use thiserror::Error;

use crate::delegation::{proxy_authorizes, MyProxy, MyProxyError, Privilege, ProxyCredential};
use crate::jdl::Jdl;
use crate::time::Epoch;

use super::central::REQUIREMENTS_KEY;
use super::queue::JobState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeldCredential {
    Direct(ProxyCredential),
    Indirect { key: String },
}

#[derive(Debug, Clone)]
pub struct BaselineJob {
    pub job_id: String,
    pub jdl: Jdl,
    pub owner: String,
    pub credential: HeldCredential,
    pub state: JobState,
    pub pilot_requested: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("proxy does not grant {0}")]
    NotAuthorized(Privilege),
    #[error("pilot credential rejected")]
    NotAPilot,
    #[error("no matching job")]
    NoMatch,
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error(transparent)]
    MyProxy(#[from] MyProxyError),
}

pub struct BaselineBroker {
    name: String,
    model: Propagation,
    jobs: Vec<BaselineJob>,
    repository: MyProxy,
}

impl BaselineBroker {
    pub fn new(name: impl Into<String>, model: Propagation, seed: u64) -> Self {
        BaselineBroker {
            name: name.into(),
            model,
            jobs: Vec::new(),
            repository: MyProxy::new(seed),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn model(&self) -> Propagation {
        self.model
    }

    pub fn jobs(&self) -> &[BaselineJob] {
        &self.jobs
    }

    pub fn job(&self, job_id: &str) -> Option<&BaselineJob> {
        self.jobs.iter().find(|j| j.job_id == job_id)
    }

    /// Queues `jdl` on the strength of any proxy that may submit. Nothing
    /// ties the description to the proxy's owner.
    pub fn submit(&mut self, jdl: Jdl, pc: &ProxyCredential, now: Epoch) -> Result<String, BaselineError> {
        if !proxy_authorizes(pc, Privilege::Submit, "", None, now) {
            return Err(BaselineError::NotAuthorized(Privilege::Submit));
        }
        let credential = match self.model {
            Propagation::Direct => HeldCredential::Direct(pc.clone()),
            Propagation::Indirect => HeldCredential::Indirect {
                key: self.repository.store(pc.clone(), now)?,
            },
        };
        let job_id = format!("job-{:04}", self.jobs.len() + 1);
        self.jobs.push(BaselineJob {
            job_id: job_id.clone(),
            jdl,
            owner: pc.owner.clone(),
            credential,
            state: JobState::Waiting,
            pilot_requested: false,
        });
        Ok(job_id)
    }

    fn matches(job: &BaselineJob, tag: &str) -> bool {
        job.jdl.first(REQUIREMENTS_KEY).is_none_or(|r| r == tag)
    }

    /// Waiting jobs a site with `tag` has not yet been asked to serve.
    pub fn request_pilots(&mut self, tag: &str) -> Vec<String> {
        let mut out = Vec::new();
        for j in &mut self.jobs {
            if j.state == JobState::Waiting && !j.pilot_requested && Self::matches(j, tag) {
                j.pilot_requested = true;
                out.push(j.job_id.clone());
            }
        }
        out
    }

    /// Hands the next matching job and its owner's credential to any
    /// holder of a pilot proxy.
    pub fn request_job(
        &mut self,
        pilot: &ProxyCredential,
        tag: &str,
        now: Epoch,
    ) -> Result<(String, Jdl, HeldCredential), BaselineError> {
        if !pilot.elevated_role || !pilot.window().contains(now) {
            return Err(BaselineError::NotAPilot);
        }
        let j = self
            .jobs
            .iter_mut()
            .find(|j| j.state == JobState::Waiting && Self::matches(j, tag))
            .ok_or(BaselineError::NoMatch)?;
        j.state = JobState::Assigned;
        Ok((j.job_id.clone(), j.jdl.clone(), j.credential.clone()))
    }

    /// Exchanges a retrieval key for a fresh proxy. Anyone holding the key
    /// succeeds.
    pub fn retrieve(&mut self, key: &str, now: Epoch) -> Result<ProxyCredential, BaselineError> {
        Ok(self.repository.retrieve(key, now)?)
    }

    pub fn finalize(&mut self, job_id: &str, outcome: JobState) -> Result<(), BaselineError> {
        let j = self
            .jobs
            .iter_mut()
            .find(|j| j.job_id == job_id)
            .ok_or_else(|| BaselineError::UnknownJob(job_id.to_string()))?;
        j.state = outcome;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user_pc() -> ProxyCredential {
        ProxyCredential::new("testuser", 1, 0, 10_000, Privilege::ALL).unwrap()
    }

    fn pilot_pc() -> ProxyCredential {
        let mut p = ProxyCredential::new("pilot", 2, 0, 10_000, Privilege::ALL).unwrap();
        p.elevated_role = true;
        p
    }

    fn jdl() -> Jdl {
        Jdl::from_entries([("Executable", ["cat"]), ("User", ["testuser"])]).unwrap()
    }

    #[test]
    fn direct_hands_out_the_user_proxy() {
        let mut b = BaselineBroker::new("myVO", Propagation::Direct, 1);
        b.submit(jdl(), &user_pc(), 10).unwrap();
        let (_, _, cred) = b.request_job(&pilot_pc(), "any", 20).unwrap();
        assert_eq!(cred, HeldCredential::Direct(user_pc()));
        let stolen = match cred {
            HeldCredential::Direct(pc) => pc,
            _ => unreachable!(),
        };
        // The stolen proxy submits a job the user never wrote.
        assert!(b.submit(jdl(), &stolen, 30).is_ok());
    }

    #[test]
    fn indirect_key_is_a_bearer_token() {
        let mut b = BaselineBroker::new("myVO", Propagation::Indirect, 1);
        b.submit(jdl(), &user_pc(), 10).unwrap();
        let (_, _, cred) = b.request_job(&pilot_pc(), "any", 20).unwrap();
        let HeldCredential::Indirect { key } = cred else {
            panic!()
        };
        let got = b.retrieve(&key, 25).unwrap();
        assert_eq!(got.owner, "testuser");
        assert_eq!(b.request_job(&user_pc(), "any", 30), Err(BaselineError::NotAPilot));
    }
}
