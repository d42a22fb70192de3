//! Objective checks computed from ground truth the simulator keeps on the
//! side. Actors never see this data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::actors::{output_path, ExecutionRecord, LocalAccount};
use crate::crypto::{verify_envelope, SignedEnvelope, TrustStore};
use crate::delegation::{concessions_of, Privilege};
use crate::jdl::{keys, serialize_jdl};
use crate::time::Epoch;

use super::scenario::AttackKind;

/// Objectives the oracle knows how to judge.
pub const OBJECTIVES: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Held,
    Violated,
    NotExercised,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Held => "HELD",
            Verdict::Violated => "VIOLATED",
            Verdict::NotExercised => "NOT_EXERCISED",
        })
    }
}

/// Something the adversary achieved that a sound system would have refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abuse {
    pub attack: AttackKind,
    pub what: String,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub record: ExecutionRecord,
    /// The envelope the site acted on. Proxy-model runs have none.
    pub envelope: Option<SignedEnvelope>,
    /// Whether the run traces back to the adversary.
    pub tainted: bool,
    /// Account the site's mapping assigns to the true submitter.
    pub true_account: Option<LocalAccount>,
    /// Whether an accepted site log entry names the run's subject.
    pub site_logged: bool,
}

#[derive(Debug, Clone)]
pub struct WriteEvent {
    pub time: Epoch,
    pub job_id: String,
    pub path: String,
    pub envelope: Option<SignedEnvelope>,
}

pub struct Evidence<'a> {
    pub trust: &'a TrustStore,
    pub brokers: BTreeSet<String>,
    /// (user, canonical JDL) pairs users actually submitted.
    pub genuine: &'a BTreeSet<(String, String)>,
    /// Digests of every envelope a broker countersigned.
    pub countersigned: BTreeSet<[u8; 48]>,
    /// Finalization time per assignment digest.
    pub finalized: BTreeMap<[u8; 48], Epoch>,
    pub executions: &'a [Execution],
    pub writes: &'a [WriteEvent],
    pub abuses: &'a [Abuse],
}

impl Evidence<'_> {
    fn genuine_inner(&self, e: &SignedEnvelope) -> bool {
        let inner = e.innermost();
        let Some(user) = inner.jdl().first(keys::USER) else {
            return false;
        };
        self.genuine.contains(&(user.to_string(), serialize_jdl(inner.jdl())))
    }

    fn authentic(&self, x: &Execution) -> bool {
        x.envelope
            .as_ref()
            .is_some_and(|e| verify_envelope(e, self.trust, x.record.started_at).is_valid() && self.genuine_inner(e))
    }

    fn assigned_by_broker(&self, x: &Execution) -> bool {
        let Some(e) = &x.envelope else { return false };
        e.depth() >= 2
            && self.countersigned.contains(&e.digest())
            && e.signer_certificate()
                .is_some_and(|c| self.brokers.contains(c.common_name()))
            && e.signed_value(keys::PILOT_IDENTIFIER) == Some(x.record.pilot.as_str())
            && self.genuine_inner(e)
    }

    fn write_authorized(&self, w: &WriteEvent) -> bool {
        let Some(e) = &w.envelope else { return false };
        if !verify_envelope(e, self.trust, w.time).is_valid() || !self.genuine_inner(e) {
            return false;
        }
        if self.finalized.get(&e.digest()).is_some_and(|&t| w.time >= t) {
            return false;
        }
        concessions_of(e)
            .iter()
            .any(|c| c.privilege == Privilege::Write && output_path(&c.user, &w.job_id, &c.entity) == w.path)
    }
}

fn judge(violated: bool) -> Verdict {
    if violated {
        Verdict::Violated
    } else {
        Verdict::Held
    }
}

/// One verdict per known objective. Objectives a scenario does not exercise
/// are reported as such and never judged.
pub fn evaluate(ev: &Evidence<'_>, exercised: &BTreeSet<u8>) -> BTreeMap<u8, Verdict> {
    let xs = ev.executions;
    OBJECTIVES
        .into_iter()
        .map(|n| {
            if !exercised.contains(&n) {
                return (n, Verdict::NotExercised);
            }
            let violated = match n {
                1 => xs.iter().any(|x| !ev.authentic(x)),
                2 => xs.iter().any(|x| !ev.assigned_by_broker(x)),
                3 => xs.iter().any(|x| x.tainted),
                4 => ev.writes.iter().any(|w| !ev.write_authorized(w)),
                5 => {
                    let mut owner: BTreeMap<u32, &str> = BTreeMap::new();
                    xs.iter()
                        .any(|x| *owner.entry(x.record.account.uid).or_insert(&x.record.user) != x.record.user)
                }
                6 => xs.iter().any(|x| x.record.account.uid == x.record.pilot_uid),
                7 => !ev.abuses.is_empty(),
                9 => xs
                    .iter()
                    .any(|x| !x.site_logged || x.true_account.as_ref() != Some(&x.record.account)),
                _ => unreachable!("fixed objective list"),
            };
            (n, judge(violated))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::testkeys;
    use crate::crypto::Role;
    use crate::delegation::{phi, psi};
    use crate::jdl::parse_jdl;
    use crate::time::Window;

    fn run() -> (TrustStore, SignedEnvelope, String) {
        let jdl =
            parse_jdl("Executable = {\"cat\"};\nOutput = {\"out\"};\nUser = {\"testuser\"};\nBroker = {\"myVO\"};\n")
                .unwrap();
        let mut jdl = jdl;
        jdl.seal(false);
        let user = testkeys::credential("CN=testuser", Role::User);
        let broker = testkeys::credential("CN=myVO", Role::Broker);
        let canon = serialize_jdl(&jdl);
        let s1 = phi(&user, jdl, "myVO", Window::new(100, 10_000).unwrap()).unwrap();
        let trust = testkeys::trust();
        let s2 = psi(&broker, &s1, &[], "p1", Window::new(100, 5000).unwrap(), &trust).unwrap();
        (trust, s2, canon)
    }

    fn record(uid: u32) -> ExecutionRecord {
        ExecutionRecord {
            job_id: "job-0001".into(),
            site: "s".into(),
            pilot: "p1".into(),
            user: "testuser".into(),
            account: LocalAccount {
                username: "grid000".into(),
                uid,
            },
            pilot_uid: 10_000,
            started_at: 200,
            jdl: String::new(),
            broker: Some("myVO".into()),
            envelope_digest: String::new(),
            reads: Vec::new(),
            writes: Vec::new(),
            fetched: Vec::new(),
            node_integrity: true,
        }
    }

    #[test]
    fn honest_run_holds_and_forgery_is_caught() {
        let (trust, s2, canon) = run();
        let genuine: BTreeSet<_> = [("testuser".to_string(), canon)].into();
        let x = Execution {
            record: record(20_000),
            envelope: Some(s2.clone()),
            tainted: false,
            true_account: Some(record(20_000).account),
            site_logged: true,
        };
        let path = output_path("testuser", "job-0001", "out");
        let w = WriteEvent {
            time: 200,
            job_id: "job-0001".into(),
            path,
            envelope: Some(s2.clone()),
        };
        let xs = [x];
        let ws = [w];
        let ev = Evidence {
            trust: &trust,
            brokers: ["myVO".to_string()].into(),
            genuine: &genuine,
            countersigned: [s2.digest()].into(),
            finalized: BTreeMap::new(),
            executions: &xs,
            writes: &ws,
            abuses: &[],
        };
        let all: BTreeSet<u8> = OBJECTIVES.into_iter().collect();
        let v = evaluate(&ev, &all);
        assert!(v.values().all(|v| *v == Verdict::Held), "{v:?}");

        // Same run, but nobody countersigned it and the user never asked.
        let empty = BTreeSet::new();
        let ev = Evidence {
            genuine: &empty,
            countersigned: BTreeSet::new(),
            finalized: [(s2.digest(), 150)].into(),
            ..ev
        };
        let v = evaluate(&ev, &all);
        for n in [1, 2, 4] {
            assert_eq!(v[&n], Verdict::Violated, "objective {n}");
        }
        assert_eq!(v[&3], Verdict::Held);
    }

    #[test]
    fn account_sharing_and_pilot_uid() {
        let genuine = BTreeSet::new();
        let trust = testkeys::trust();
        let mut a = record(10_000);
        a.user = "alice".into();
        let mut b = record(10_000);
        b.user = "bob".into();
        let mk = |r: ExecutionRecord| Execution {
            true_account: Some(r.account.clone()),
            record: r,
            envelope: None,
            tainted: false,
            site_logged: true,
        };
        let xs = [mk(a), mk(b)];
        let ev = Evidence {
            trust: &trust,
            brokers: BTreeSet::new(),
            genuine: &genuine,
            countersigned: BTreeSet::new(),
            finalized: BTreeMap::new(),
            executions: &xs,
            writes: &[],
            abuses: &[],
        };
        let v = evaluate(&ev, &[5, 6, 7].into());
        assert_eq!(v[&5], Verdict::Violated);
        assert_eq!(v[&6], Verdict::Violated);
        assert_eq!(v[&7], Verdict::Held);
        assert_eq!(v[&1], Verdict::NotExercised);
    }
}
