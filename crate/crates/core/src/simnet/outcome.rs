use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::actors::{EventLog, FileCatalogue};
use crate::audit::{Accountable, ForensicError, ForensicVerdict, Ledger, Origin};
use crate::time::Epoch;

use super::oracle::{Verdict, OBJECTIVES};
use super::scenario::{AttackKind, Model};

/// One message on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioEvent {
    pub seq: u64,
    pub time: Epoch,
    pub source: String,
    pub target: String,
    pub kind: String,
    pub payload: Vec<u8>,
    /// What the adversary did to this message, if anything.
    pub adversary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackResult {
    pub kind: AttackKind,
    pub at: Epoch,
    /// False when the adversary had nothing to work with.
    pub launched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForensicCheck {
    pub job: String,
    pub result: Result<ForensicVerdict, ForensicError>,
    pub expected: Option<(Origin, Accountable)>,
}

impl ForensicCheck {
    pub fn matches(&self) -> bool {
        match (&self.result, self.expected) {
            (_, None) => true,
            (Ok(v), Some((o, a))) => v.origin == o && v.accountable == a,
            (Err(_), Some(_)) => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub name: String,
    pub model: Model,
    pub seed: u64,
    pub verdicts: BTreeMap<u8, Verdict>,
    pub expected_violations: BTreeSet<u8>,
    pub exercised: BTreeSet<u8>,
    pub log: EventLog,
    pub events: Vec<ScenarioEvent>,
    /// Broker ledgers by name, plus the catalogue's own under `catalogue`.
    pub ledgers: BTreeMap<String, Ledger>,
    pub catalogue: FileCatalogue,
    pub trust_pem: String,
    pub job_states: BTreeMap<String, String>,
    pub expect_states: Vec<(String, String)>,
    pub expect_executions: Option<usize>,
    pub executions: usize,
    pub abuses: Vec<String>,
    pub attacks: Vec<AttackResult>,
    pub forensics: Vec<ForensicCheck>,
    /// Messages sent on behalf of each scenario job.
    pub message_counts: BTreeMap<String, usize>,
    pub total_messages: usize,
}

impl ScenarioOutcome {
    /// Every way the run differs from what the scenario declared. Empty
    /// means the scenario passed.
    pub fn unexpected(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (n, v) in &self.verdicts {
            let expected = self.expected_violations.contains(n);
            match (v, expected) {
                (Verdict::Violated, false) => out.push(format!("objective {n} VIOLATED")),
                (v, true) if *v != Verdict::Violated => out.push(format!("objective {n} expected VIOLATED, got {v}")),
                _ => {}
            }
        }
        for (job, want) in &self.expect_states {
            let got = self.job_states.get(job).map_or("?", String::as_str);
            if got != want {
                out.push(format!("job {job} expected {want}, got {got}"));
            }
        }
        if let Some(n) = self.expect_executions {
            if n != self.executions {
                out.push(format!("expected {n} executions, got {}", self.executions));
            }
        }
        for f in self.forensics.iter().filter(|f| !f.matches()) {
            let got = match &f.result {
                Ok(v) => format!("{}/{}", v.origin, v.accountable),
                Err(e) => e.to_string(),
            };
            let (o, a) = f.expected.expect("only checked expectations fail");
            out.push(format!("incident {} expected {o}/{a}, got {got}", f.job));
        }
        out
    }

    pub fn verdict(&self, objective: u8) -> Verdict {
        self.verdicts.get(&objective).copied().unwrap_or(Verdict::NotExercised)
    }

    /// The per-objective verdict block followed by job, attack and
    /// forensic summaries.
    pub fn verdicts_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario\t{}\nmodel\t{}\nseed\t{}", self.name, self.model, self.seed);
        for n in OBJECTIVES {
            let v = self.verdict(n);
            let note = if self.expected_violations.contains(&n) {
                "\texpected"
            } else {
                ""
            };
            let _ = writeln!(s, "objective-{n}\t{v}{note}");
        }
        for (job, state) in &self.job_states {
            let msgs = self.message_counts.get(job).copied().unwrap_or(0);
            let _ = writeln!(s, "job\t{job}\t{state}\tmessages={msgs}");
        }
        let _ = writeln!(s, "executions\t{}", self.executions);
        let _ = writeln!(s, "messages\t{}", self.total_messages);
        for a in &self.attacks {
            let _ = writeln!(
                s,
                "attack\t{}\t{}",
                a.kind.as_str(),
                if a.launched { "launched" } else { "no-material" }
            );
        }
        for a in &self.abuses {
            let _ = writeln!(s, "abuse\t{a}");
        }
        for f in &self.forensics {
            let got = match &f.result {
                Ok(v) => format!("{}\t{}", v.origin, v.accountable),
                Err(e) => format!("ERROR\t{e}"),
            };
            let _ = writeln!(s, "incident\t{}\t{got}", f.job);
        }
        let problems = self.unexpected();
        let _ = writeln!(s, "result\t{}", if problems.is_empty() { "PASS" } else { "FAIL" });
        for p in problems {
            let _ = writeln!(s, "unexpected\t{p}");
        }
        s
    }

    /// Tab-separated wire trace: seq, time, source, target, kind, payload
    /// length and adversary action.
    pub fn events_tsv(&self) -> String {
        let mut s = String::from("seq\ttime\tsource\ttarget\tkind\tbytes\tadversary\n");
        for e in &self.events {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.seq,
                e.time,
                e.source,
                e.target,
                e.kind,
                e.payload.len(),
                e.adversary.as_deref().unwrap_or("-")
            );
        }
        s
    }
}
