//! The event loop that wires actors together and lets the adversary touch
//! every message on the way.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::actors::{
    checksum, output_path, BaselineBroker, CentralServices, ComputingElement, ExecutionGate, ExecutionRecord,
    FileCatalogue, HeldCredential, JobAgent, JobProgram, JobState, LocalAccount, Propagation, SiteLogEntry,
};
use crate::audit::{forensic_classify, Incident, Ledger, RecordKind};
use crate::crypto::seeded_identity;
use crate::crypto::{
    bundle_to_text, issue_certificate, parse_bundle, sign_envelope, Credential, Identity, Payload, Role,
    SignedEnvelope, TrustStore,
};
use crate::delegation::{proxy_authorizes, Privilege, ProxyCredential};
use crate::jdl::{keys, parse_jdl, serialize_jdl, Jdl};
use crate::time::Epoch;

use super::message::Message;
use super::oracle::{evaluate, Abuse, Evidence, Execution, WriteEvent};
use super::outcome::{AttackResult, ForensicCheck, ScenarioEvent, ScenarioOutcome};
use super::scenario::{
    AdversaryAction, ArtifactSpec, AttackKind, CatalogueOp, ForgeSigner, Model, Scenario, TamperOffset, Trigger,
};

fn cached_identity(seed: u64, subject: &str, role: Role, bits: usize) -> Identity {
    seeded_identity(seed, subject, role, bits).expect("well-formed subject")
}

pub(crate) const ATTACKER: &str = "mallory";
const EVIL_EXECUTABLE: &str = "/bin/evil";

#[derive(Debug, Clone)]
struct Wire {
    from: String,
    to: String,
    bytes: Vec<u8>,
    job: Option<String>,
    /// Ground truth: the adversary created or altered this message, or it
    /// carries a request that originated with the adversary.
    tainted: bool,
    attack: Option<usize>,
}

#[derive(Debug, Clone)]
enum Pending {
    Deliver(Wire),
    Submit(usize),
    JobDone {
        pilot: String,
        job_id: String,
        outcome: JobState,
    },
    Attack(usize),
    Catalogue(usize),
    Incident(usize),
    File(usize),
}

#[derive(Debug, Clone, Default)]
struct Provenance {
    job: Option<String>,
    tainted: bool,
    attack: Option<usize>,
}

#[derive(Debug, Default)]
struct Loot {
    pilots: Vec<String>,
    sjdls: Vec<Vec<u8>>,
    assignments: Vec<(String, Vec<u8>)>,
    proxies: Vec<ProxyCredential>,
    keys: Vec<String>,
}

struct Site {
    ce: ComputingElement,
    gate: Option<ExecutionGate>,
    mapping: ExecutionGate,
    pilot_pc: ProxyCredential,
}

pub(crate) struct World<'s> {
    sc: &'s Scenario,
    seed: u64,
    now: Epoch,
    order: u64,
    next_seq: u64,
    agenda: BinaryHeap<Reverse<(Epoch, u64)>>,
    pending: BTreeMap<u64, Pending>,
    outcome_log: crate::actors::EventLog,
    events: Vec<ScenarioEvent>,
    kind_counts: BTreeMap<String, usize>,
    delayed_replays: Vec<(Trigger, Wire, i64, u64)>,

    trust: TrustStore,
    users: BTreeMap<String, Credential>,
    attacker: Credential,
    rogue_brokers: BTreeMap<String, Credential>,
    user_pcs: BTreeMap<String, ProxyCredential>,
    brokers: BTreeMap<String, CentralServices>,
    baseline: BTreeMap<String, BaselineBroker>,
    sites: BTreeMap<String, Site>,
    agents: BTreeMap<String, JobAgent>,
    pilot_counter: u64,
    catalogue: FileCatalogue,
    catalogue_ledger: Ledger,

    genuine: BTreeSet<(String, String)>,
    provenance: BTreeMap<(String, String), Provenance>,
    superseded: BTreeSet<(String, String)>,
    reported_invalid: BTreeSet<(String, String)>,
    rejected: BTreeSet<String>,
    loot: Loot,
    executions: Vec<Execution>,
    writes: Vec<WriteEvent>,
    abuses: Vec<Abuse>,
    attacks: Vec<AttackResult>,
    forensics: Vec<ForensicCheck>,
    message_counts: BTreeMap<String, usize>,
    total_messages: usize,
}

fn actor_cs(b: &str) -> String {
    format!("cs:{b}")
}

fn actor_ja(p: &str) -> String {
    format!("ja:{p}")
}

/// Serialized proxy: `owner serial issued expires PRIV,PRIV renewable|- elevated`.
pub(crate) fn proxy_to_text(pc: &ProxyCredential) -> String {
    let privs: Vec<&str> = pc.privileges.iter().map(|p| p.as_str()).collect();
    format!(
        "{} {} {} {} {} {} {}",
        pc.owner,
        pc.serial,
        pc.t_issued,
        pc.t_expires,
        privs.join(","),
        pc.renewable_until.map_or("-".to_string(), |t| t.to_string()),
        u8::from(pc.elevated_role)
    )
}

pub(crate) fn proxy_from_text(s: &str) -> Option<ProxyCredential> {
    let w: Vec<&str> = s.split(' ').collect();
    let [owner, serial, issued, expires, privs, renew, elevated] = w.as_slice() else {
        return None;
    };
    let privs: Result<Vec<Privilege>, _> = privs.split(',').filter(|p| !p.is_empty()).map(str::parse).collect();
    let mut pc = ProxyCredential::new(
        *owner,
        serial.parse().ok()?,
        issued.parse().ok()?,
        expires.parse().ok()?,
        privs.ok()?,
    )?;
    pc.renewable_until = match *renew {
        "-" => None,
        t => Some(t.parse().ok()?),
    };
    pc.elevated_role = *elevated == "1";
    Some(pc)
}

/// Replaces the first `Executable` value in a serialized envelope.
fn rewrite_executable(bytes: &[u8], to: &str) -> Option<Vec<u8>> {
    let text = std::str::from_utf8(bytes).ok()?;
    let key = "Executable = {\"";
    let start = text.find(key)? + key.len();
    let end = start + text[start..].find('"')?;
    Some(format!("{}{}{}", &text[..start], to, &text[end..]).into_bytes())
}

impl<'s> World<'s> {
    pub(crate) fn new(sc: &'s Scenario, seed: u64) -> Self {
        let bits = sc.key_bits;
        let id = |subject: &str, role| cached_identity(seed, subject, role, bits);
        let valid_from = sc.start - 365 * 86_400;
        let valid_to = sc.start + 3650 * 86_400;
        let ca = id("CN=Grid CA", Role::Ca);
        let root = issue_certificate(&ca, &ca, valid_from, valid_to).expect("CA identity");
        let certify = |i: Identity| {
            let c = issue_certificate(&ca, &i, valid_from, valid_to).expect("CA identity");
            Credential::new(i, c)
        };
        let trust = TrustStore::new([root]);
        let users: BTreeMap<String, Credential> = sc
            .users
            .iter()
            .map(|u| (u.clone(), certify(id(&format!("CN={u}"), Role::User))))
            .collect();
        let attacker = certify(id(&format!("CN={ATTACKER}"), Role::User));

        let mut brokers = BTreeMap::new();
        let mut baseline = BTreeMap::new();
        for (i, b) in sc.brokers.iter().enumerate() {
            let broker_seed = seed.wrapping_mul(31).wrapping_add(i as u64);
            match sc.model {
                Model::Certified => {
                    let cred = certify(id(&format!("CN={}", b.name), Role::Broker));
                    let cs = CentralServices::new(cred, trust.clone(), broker_seed).with_run_window(sc.run_window);
                    brokers.insert(b.name.clone(), cs);
                }
                Model::ProxyDirect | Model::ProxyIndirect => {
                    let p = if sc.model == Model::ProxyDirect {
                        Propagation::Direct
                    } else {
                        Propagation::Indirect
                    };
                    baseline.insert(b.name.clone(), BaselineBroker::new(b.name.clone(), p, broker_seed));
                }
            }
        }

        let user_pcs: BTreeMap<String, ProxyCredential> = sc
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let pc = ProxyCredential::new(
                    u.clone(),
                    i as u64 + 1,
                    sc.start - 3600,
                    sc.start + sc.user_window,
                    Privilege::ALL,
                )
                .expect("positive window");
                (u.clone(), pc)
            })
            .collect();

        let mut sites = BTreeMap::new();
        for (i, s) in sc.sites.iter().enumerate() {
            let mut ce = ComputingElement::new(s.name.clone(), s.tag.clone(), s.broker.clone());
            ce.integrity = s.integrity;
            let mut mapping = ExecutionGate::new();
            for u in &sc.users {
                mapping.map_subject(u);
            }
            let mut pilot_pc = ProxyCredential::new(
                format!("pilot-{}", s.name),
                1000 + i as u64,
                sc.start - 3600,
                sc.start + 2 * sc.user_window,
                Privilege::ALL,
            )
            .expect("positive window");
            pilot_pc.elevated_role = true;
            sites.insert(
                s.name.clone(),
                Site {
                    ce,
                    gate: s.gate.then(|| mapping.clone()),
                    mapping,
                    pilot_pc,
                },
            );
        }

        let mut w = World {
            sc,
            seed,
            now: sc.start,
            order: 0,
            next_seq: 1,
            agenda: BinaryHeap::new(),
            pending: BTreeMap::new(),
            outcome_log: crate::actors::EventLog::new(),
            events: Vec::new(),
            kind_counts: BTreeMap::new(),
            delayed_replays: Vec::new(),
            trust,
            users,
            attacker,
            rogue_brokers: BTreeMap::new(),
            user_pcs,
            brokers,
            baseline,
            sites,
            agents: BTreeMap::new(),
            pilot_counter: 0,
            catalogue: FileCatalogue::new(sc.horizon),
            catalogue_ledger: Ledger::new(),
            genuine: BTreeSet::new(),
            provenance: BTreeMap::new(),
            superseded: BTreeSet::new(),
            reported_invalid: BTreeSet::new(),
            rejected: BTreeSet::new(),
            loot: Loot::default(),
            executions: Vec::new(),
            writes: Vec::new(),
            abuses: Vec::new(),
            attacks: Vec::new(),
            forensics: Vec::new(),
            message_counts: BTreeMap::new(),
            total_messages: 0,
        };
        for (i, f) in sc.files.iter().enumerate() {
            w.schedule(f.at.resolve(sc.start), Pending::File(i));
        }
        for (i, j) in sc.jobs.iter().enumerate() {
            w.schedule(j.at.resolve(sc.start), Pending::Submit(i));
        }
        for (i, op) in sc.catalogue_ops.iter().enumerate() {
            let at = match op {
                CatalogueOp::Delete { at, .. } | CatalogueOp::Overwrite { at, .. } => at,
            };
            w.schedule(at.resolve(sc.start), Pending::Catalogue(i));
        }
        for (i, a) in sc.attacks.iter().enumerate() {
            w.schedule(a.at.resolve(sc.start), Pending::Attack(i));
        }
        for (i, inc) in sc.incidents.iter().enumerate() {
            w.schedule(inc.at.resolve(sc.start), Pending::Incident(i));
        }
        w
    }

    fn schedule(&mut self, at: Epoch, p: Pending) {
        let key = self.order;
        self.order += 1;
        self.agenda.push(Reverse((at, key)));
        self.pending.insert(key, p);
    }

    fn local(&self, actor: &str) -> Epoch {
        self.now + self.sc.skew.get(actor).copied().unwrap_or(0)
    }

    fn log(&mut self, actor: &str, event: &str, detail: impl Into<String>) {
        self.outcome_log.push(self.now, actor, event, detail);
    }

    pub(crate) fn run(mut self) -> ScenarioOutcome {
        while let Some(Reverse((at, key))) = self.agenda.pop() {
            self.now = self.now.max(at);
            let p = self.pending.remove(&key).expect("scheduled");
            match p {
                Pending::Deliver(w) => self.deliver(w),
                Pending::Submit(i) => self.submit(i),
                Pending::JobDone { pilot, job_id, outcome } => self.job_done(&pilot, &job_id, outcome),
                Pending::Attack(i) => self.attack(i),
                Pending::Catalogue(i) => self.catalogue_op(i),
                Pending::Incident(i) => self.incident(i),
                Pending::File(i) => {
                    let f = &self.sc.files[i];
                    let change = self.catalogue.write(&f.path, &f.owner, &f.content, self.now);
                    self.catalogue_ledger.append(
                        RecordKind::CatalogueChange,
                        self.now,
                        f.path.clone(),
                        format!("{change} owner={}", f.owner),
                    );
                    self.log("catalogue", "WRITE", format!("{} owner={}", f.path, f.owner));
                }
            }
        }
        self.finish()
    }

    // ---- messaging ----

    #[allow(clippy::too_many_arguments)]
    fn send(&mut self, from: &str, to: &str, msg: Message, job: Option<String>, tainted: bool, attack: Option<usize>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let count = {
            let c = self.kind_counts.entry(msg.kind.clone()).or_insert(0);
            *c += 1;
            *c
        };
        let mut wire = Wire {
            from: from.to_string(),
            to: to.to_string(),
            bytes: msg.encode(),
            job,
            tainted,
            attack,
        };
        let mut extra = 0;
        let mut dropped = false;
        let mut actions = Vec::new();
        let matches = |t: &Trigger| match t {
            Trigger::Seq(n) => *n == seq,
            Trigger::Kind(k, n) => *k == msg.kind && *n == count,
        };
        for rule in &self.sc.adversary {
            if !matches(&rule.trigger) {
                continue;
            }
            match &rule.action {
                AdversaryAction::Tamper { field, offset, byte } => {
                    let Some(range) = msg.value_range(field) else {
                        actions.push(format!("TAMPER(no field {field})"));
                        continue;
                    };
                    let value = &wire.bytes[range.clone()];
                    let at = match offset {
                        TamperOffset::At(n) => Some(*n),
                        TamperOffset::Find(t) => value.windows(t.len().max(1)).position(|w| w == t.as_bytes()),
                    };
                    match at.filter(|&n| n < value.len()) {
                        Some(n) => {
                            wire.bytes[range.start + n] = *byte;
                            wire.tainted = true;
                            actions.push(format!("TAMPER({n},0x{byte:02x})"));
                        }
                        None => actions.push("TAMPER(out of range)".into()),
                    }
                }
                AdversaryAction::Steal => {
                    self.steal(&msg);
                    actions.push("STEAL_CREDENTIAL".into());
                }
                AdversaryAction::Replay { to, after, delay } => {
                    let copy = Wire {
                        from: "adversary".into(),
                        to: to.clone().unwrap_or_else(|| wire.to.clone()),
                        bytes: wire.bytes.clone(),
                        job: wire.job.clone(),
                        tainted: true,
                        attack: None,
                    };
                    match after {
                        None => self.schedule(self.now + self.sc.latency + delay, Pending::Deliver(copy)),
                        Some(t) => self.delayed_replays.push((t.clone(), copy, *delay, seq)),
                    }
                    actions.push(format!("REPLAY({seq})"));
                }
                AdversaryAction::Drop => {
                    dropped = true;
                    actions.push("DROP".into());
                }
                AdversaryAction::Delay(s) => {
                    extra += s;
                    actions.push(format!("DELAY({s})"));
                }
            }
        }
        self.total_messages += 1;
        if let Some(j) = &wire.job {
            *self.message_counts.entry(j.clone()).or_insert(0) += 1;
        }
        let action = (!actions.is_empty()).then(|| actions.join(","));
        self.log(
            from,
            "SEND",
            format!(
                "seq={seq} {}->{} {} {}B{}",
                wire.from,
                wire.to,
                msg.kind,
                wire.bytes.len(),
                action.as_ref().map_or(String::new(), |a| format!(" [{a}]"))
            ),
        );
        self.events.push(ScenarioEvent {
            seq,
            time: self.now,
            source: wire.from.clone(),
            target: wire.to.clone(),
            kind: msg.kind.clone(),
            payload: wire.bytes.clone(),
            adversary: action,
        });
        if !dropped {
            self.schedule(self.now + self.sc.latency + extra, Pending::Deliver(wire));
        }
        // Armed replays queue behind the message that triggered them.
        let due: Vec<usize> = self
            .delayed_replays
            .iter()
            .enumerate()
            .filter(|(_, (t, ..))| matches(t))
            .map(|(i, _)| i)
            .collect();
        for i in due.into_iter().rev() {
            let (trigger, copy, delay, orig) = self.delayed_replays.remove(i);
            self.log(
                "adversary",
                "REPLAY_ARMED",
                format!("seq={orig} on {trigger} to={} in={}s", copy.to, self.sc.latency + delay),
            );
            self.schedule(self.now + self.sc.latency + delay, Pending::Deliver(copy));
        }
    }

    fn steal(&mut self, msg: &Message) {
        if let Some(p) = msg.text("pilot") {
            if !self.loot.pilots.iter().any(|x| x == p) {
                self.loot.pilots.push(p.to_string());
            }
        }
        if let Some(pc) = msg.text("proxy").and_then(proxy_from_text) {
            self.loot.proxies.push(pc);
        }
        if let Some(k) = msg.text("key") {
            self.loot.keys.push(k.to_string());
        }
        match msg.kind.as_str() {
            "SUBMIT" => {
                if let Some(b) = msg.field("body") {
                    self.loot.sjdls.push(b.to_vec());
                }
            }
            "JOB_ASSIGN" => {
                if let Some(b) = msg.field("body") {
                    let job = msg.text("job").unwrap_or_default().to_string();
                    self.loot.assignments.push((job, b.to_vec()));
                }
            }
            _ => {}
        }
    }

    fn deliver(&mut self, w: Wire) {
        let msg = match Message::decode(&w.bytes) {
            Ok(m) => m,
            Err(e) => {
                self.log(&w.to, "DISCARD", e.to_string());
                return;
            }
        };
        let (role, name) = w.to.split_once(':').unwrap_or((w.to.as_str(), ""));
        let name = name.to_string();
        match (role, self.sc.model) {
            ("cs", Model::Certified) => self.cs_receive(&name, &w, &msg),
            ("cs", _) => self.baseline_receive(&name, &w, &msg),
            ("ce", _) => self.ce_receive(&name, &w, &msg),
            ("ja", Model::Certified) => self.ja_receive(&name, &w, &msg),
            ("ja", _) => self.baseline_ja_receive(&name, &w, &msg),
            _ => self.log(&w.to, "RECV", msg.kind.clone()),
        }
    }

    // ---- clients ----

    fn build_jdl(&self, i: usize) -> Jdl {
        let j = &self.sc.jobs[i];
        let mut jdl = Jdl::new();
        let mut put = |k: &str, v: Vec<String>| {
            if !v.is_empty() {
                jdl.insert(k, v).expect("fixed keys");
            }
        };
        put(keys::EXECUTABLE, vec![j.executable.clone()]);
        put(keys::ARGUMENTS, j.arguments.clone());
        put(keys::INPUT_FILE, j.inputs.clone());
        put(keys::OUTPUT, j.outputs.clone());
        put(
            crate::actors::central::REQUIREMENTS_KEY,
            j.requirement.iter().cloned().collect(),
        );
        put(keys::USER, vec![j.user.clone()]);
        put(keys::BROKER, vec![j.broker.clone()]);
        jdl.seal(false);
        jdl
    }

    fn submit(&mut self, i: usize) {
        let j = &self.sc.jobs[i];
        let client = format!("client:{}", j.user);
        let now = self.local(&client);
        let jdl = self.build_jdl(i);
        self.genuine.insert((j.user.clone(), serialize_jdl(&jdl)));
        let msg = match self.sc.model {
            Model::Certified => {
                let (nb, na) = j.window.unwrap_or((0, self.sc.user_window));
                let window = match crate::time::Window::new(now + nb, now + na) {
                    Some(w) => w,
                    None => {
                        self.log(&client, "CLIENT_ERROR", format!("{} empty window", j.name));
                        self.rejected.insert(j.name.clone());
                        return;
                    }
                };
                let user = &self.users[&j.user];
                match crate::delegation::phi(user, jdl, &j.broker, window) {
                    Ok(s) => Message::new("SUBMIT").with("body", bundle_to_text(&s)),
                    Err(e) => {
                        self.log(&client, "CLIENT_ERROR", format!("{} {e}", j.name));
                        self.rejected.insert(j.name.clone());
                        return;
                    }
                }
            }
            _ => Message::new("SUBMIT")
                .with("jdl", serialize_jdl(&jdl))
                .with("proxy", proxy_to_text(&self.user_pcs[&j.user])),
        };
        let (name, broker) = (j.name.clone(), j.broker.clone());
        self.log(&client, "SUBMIT", name.clone());
        self.send(&client, &actor_cs(&broker), msg, Some(name), false, None);
    }

    // ---- certified central services ----

    fn cs_receive(&mut self, b: &str, w: &Wire, msg: &Message) {
        let me = actor_cs(b);
        let now = self.local(&me);
        match msg.kind.as_str() {
            "SUBMIT" | "RELAY" => {
                let parsed = msg
                    .text("body")
                    .ok_or_else(|| "no body".to_string())
                    .and_then(|t| parse_bundle(t).map_err(|e| e.to_string()));
                let cs = self.brokers.get_mut(b).expect("known broker");
                let result = match parsed {
                    Ok(e) if msg.kind == "SUBMIT" => cs.accept_submission(e, now).map_err(|e| e.to_string()),
                    Ok(e) => cs.accept_relay(e, now).map_err(|e| e.to_string()),
                    Err(e) => Err(format!("malformed: {e}")),
                };
                if let Some(p) = msg.text("pilot") {
                    self.log(&me, "NOTE", format!("submission presented pilot credential {p}"));
                }
                match result {
                    Ok(job_id) => {
                        self.log(&me, "ACCEPT", format!("{} {job_id}", w.job.as_deref().unwrap_or("-")));
                        self.provenance.insert(
                            (b.to_string(), job_id.clone()),
                            Provenance {
                                job: w.job.clone(),
                                tainted: w.tainted,
                                attack: w.attack,
                            },
                        );
                        if let Some(a) = w.attack {
                            self.abuses.push(Abuse {
                                attack: self.sc.attacks[a].kind,
                                what: format!("submission {job_id} accepted"),
                            });
                        }
                        self.after_accept(b, &job_id);
                    }
                    Err(reason) => {
                        self.log(&me, "REJECT", format!("{} {reason}", w.job.as_deref().unwrap_or("-")));
                        if let Some(j) = &w.job {
                            if msg.kind == "SUBMIT" {
                                self.rejected.insert(j.clone());
                            }
                        }
                    }
                }
            }
            "JOB_REQUEST" => {
                let pilot = msg.text("pilot").unwrap_or_default().to_string();
                let cs = self.brokers.get_mut(b).expect("known broker");
                match cs.request_job(&pilot, now) {
                    Ok(a) => {
                        let prov = self
                            .provenance
                            .get(&(b.to_string(), a.job_id.clone()))
                            .cloned()
                            .unwrap_or_default();
                        self.log(&me, "ASSIGN", format!("{} -> {pilot}", a.job_id));
                        let reply = Message::new("JOB_ASSIGN")
                            .with("job", &a.job_id)
                            .with("body", bundle_to_text(&a.envelope));
                        self.send(&me, &w.from, reply, prov.job, prov.tainted, None);
                    }
                    Err(e) => {
                        self.log(&me, "NO_JOB", format!("{pilot} {e}"));
                        self.send(
                            &me,
                            &w.from,
                            Message::new("NO_MATCH").with("reason", e.to_string()),
                            None,
                            false,
                            None,
                        );
                    }
                }
                self.note_invalidated(b);
            }
            "FINALIZE" => {
                let job = msg.text("job").unwrap_or_default().to_string();
                let pilot = msg.text("pilot").unwrap_or_default().to_string();
                let outcome = match msg.text("outcome") {
                    Some("DONE") => JobState::Done,
                    _ => JobState::Error,
                };
                let cs = self.brokers.get_mut(b).expect("known broker");
                match cs.finalize(&job, &pilot, outcome, now) {
                    Ok(()) => self.log(&me, "FINALIZE", format!("{job} {outcome}")),
                    Err(e) => self.log(&me, "FINALIZE_REFUSED", e.to_string()),
                }
            }
            "SITE_LOG" => {
                let job = msg.text("job").unwrap_or_default().to_string();
                let body = msg.text("body").unwrap_or_default().to_string();
                let cs = self.brokers.get_mut(b).expect("known broker");
                cs.ledger_mut().append(RecordKind::SiteLog, now, job, body);
            }
            "FETCH" => {
                let pilot = msg.text("pilot").unwrap_or_default().to_string();
                let job = msg.text("job").unwrap_or_default().to_string();
                let cs = &self.brokers[b];
                match cs.fetch_assigned(&pilot, &job) {
                    Ok(a) => {
                        self.log(&me, "FETCH_OK", format!("{job} for {pilot}"));
                        let foreign = a.envelope.signed_value(keys::PILOT_IDENTIFIER) != Some(pilot.as_str());
                        if let (Some(i), true) = (w.attack, foreign) {
                            self.abuses.push(Abuse {
                                attack: self.sc.attacks[i].kind,
                                what: format!("retrieved {job}"),
                            });
                        }
                    }
                    Err(e) => self.log(&me, "FETCH_REFUSED", format!("{job} for {pilot}: {e}")),
                }
                self.settle_attack(w.attack, "FETCH_REFUSED");
            }
            "MYPROXY_GET" => self.log(&me, "UNSUPPORTED", "no credential repository"),
            other => self.log(&me, "IGNORED", other.to_string()),
        }
    }

    fn note_invalidated(&mut self, b: &str) {
        let cs = &self.brokers[b];
        let newly: Vec<String> = cs
            .queue()
            .iter()
            .filter(|e| e.state == JobState::Invalidated)
            .map(|e| e.job_id.clone())
            .filter(|id| {
                let k = (b.to_string(), id.clone());
                !self.superseded.contains(&k) && !self.reported_invalid.contains(&k)
            })
            .collect();
        for id in newly {
            self.reported_invalid.insert((b.to_string(), id.clone()));
            self.log(&actor_cs(b), "INVALIDATED", id);
        }
    }

    fn after_accept(&mut self, b: &str, job_id: &str) {
        let me = actor_cs(b);
        let now = self.local(&me);
        let prov = self.provenance[&(b.to_string(), job_id.to_string())].clone();
        let spec = prov
            .job
            .as_ref()
            .and_then(|n| self.sc.jobs.iter().find(|j| &j.name == n));
        let relay_to = self
            .sc
            .brokers
            .iter()
            .find(|x| x.name == b)
            .and_then(|x| x.relay_to.clone());
        let cs = self.brokers.get_mut(b).expect("known broker");
        if let Some(next) = relay_to {
            match cs.relay(job_id, &next, now) {
                Ok(e) => {
                    self.superseded.insert((b.to_string(), job_id.to_string()));
                    self.log(&me, "RELAY", format!("{job_id} -> {next}"));
                    let msg = Message::new("RELAY").with("body", bundle_to_text(&e));
                    self.send(&me, &actor_cs(&next), msg, prov.job.clone(), prov.tainted, prov.attack);
                }
                Err(e) => self.log(&me, "RELAY_FAILED", format!("{job_id} {e}")),
            }
            return;
        }
        let parts = spec.map_or(1, |s| s.split);
        if parts > 1 {
            match cs.split(job_id, parts) {
                Ok(ids) => {
                    self.superseded.insert((b.to_string(), job_id.to_string()));
                    self.log(&me, "SPLIT", format!("{job_id} -> {}", ids.join(",")));
                    for id in ids {
                        self.provenance.insert((b.to_string(), id), prov.clone());
                    }
                }
                Err(e) => self.log(&me, "SPLIT_FAILED", format!("{job_id} {e}")),
            }
        }
        self.dispatch_pilots(b);
    }

    fn dispatch_pilots(&mut self, b: &str) {
        let me = actor_cs(b);
        let now = self.local(&me);
        let sites: Vec<(String, String)> = self
            .sites
            .values()
            .filter(|s| s.ce.broker == b)
            .map(|s| (s.ce.name.clone(), s.ce.tag.clone()))
            .collect();
        for (name, tag) in sites {
            let pilots: Vec<String> = match self.sc.model {
                Model::Certified => {
                    let cs = self.brokers.get_mut(b).expect("known broker");
                    cs.request_pilots(&name, &tag, now).into_iter().map(|r| r.id).collect()
                }
                _ => {
                    let bb = self.baseline.get_mut(b).expect("known broker");
                    bb.request_pilots(&tag)
                        .into_iter()
                        .map(|_| {
                            self.pilot_counter += 1;
                            format!("pilot-{name}-{}", self.pilot_counter)
                        })
                        .collect()
                }
            };
            for p in pilots {
                self.send(
                    &me,
                    &format!("ce:{name}"),
                    Message::new("PILOT_REQUEST").with("pilot", &p),
                    None,
                    false,
                    None,
                );
            }
        }
    }

    // ---- sites ----

    fn ce_receive(&mut self, s: &str, w: &Wire, msg: &Message) {
        let me = format!("ce:{s}");
        if msg.kind != "PILOT_REQUEST" {
            self.log(&me, "IGNORED", msg.kind.clone());
            return;
        }
        let pilot = msg.text("pilot").unwrap_or_default().to_string();
        let site = self.sites.get_mut(s).expect("known site");
        site.ce.pilots.push(pilot.clone());
        let agent = JobAgent::new(pilot.clone(), &site.ce);
        let broker = site.ce.broker.clone();
        let pilot_pc = site.pilot_pc.clone();
        self.agents.insert(pilot.clone(), agent);
        self.log(&me, "PILOT_START", pilot.clone());
        let mut req = Message::new("JOB_REQUEST").with("pilot", &pilot);
        if self.sc.model.is_baseline() {
            req = req.with("proxy", proxy_to_text(&pilot_pc));
        }
        let _ = w;
        self.send(&actor_ja(&pilot), &actor_cs(&broker), req, None, false, None);
    }

    fn program_for(&self, job: Option<&str>, e_job_id: &str, declared: JobProgram) -> JobProgram {
        let mut program = declared;
        let _ = e_job_id;
        if let Some(spec) = job.and_then(|n| self.sc.jobs.iter().find(|j| j.name == n)) {
            for url in &spec.fetch {
                let content = self.sc.externals.get(url).cloned().unwrap_or_default();
                program.fetch.push((url.clone(), content));
            }
            for path in &spec.extra_write {
                program.writes.push((path.clone(), b"unexpected\n".to_vec()));
            }
        }
        program
    }

    fn site_of(&self, pilot: &str) -> Option<String> {
        self.agents.get(pilot).map(|a| a.site.clone())
    }

    fn ja_receive(&mut self, p: &str, w: &Wire, msg: &Message) {
        let me = actor_ja(p);
        let now = self.local(&me);
        let Some(site_name) = self.site_of(p) else {
            self.log(&me, "NO_SUCH_PILOT", msg.kind.clone());
            self.settle_attack(w.attack, "NO_SUCH_PILOT");
            return;
        };
        match msg.kind.as_str() {
            "NO_MATCH" => {
                self.log(&me, "PILOT_EXIT", p.to_string());
                return;
            }
            "JOB_ASSIGN" => {}
            other => {
                self.log(&me, "IGNORED", other.to_string());
                return;
            }
        }
        let job_id = msg.text("job").unwrap_or_default().to_string();
        let envelope = match msg.text("body").map(parse_bundle) {
            Some(Ok(e)) => e,
            _ => {
                self.log(&me, "REFUSE", format!("{job_id} Malformed"));
                self.settle_attack(w.attack, "REFUSE");
                return;
            }
        };
        let broker = self.sites[&site_name].ce.broker.clone();
        let program = self.program_for(w.job.as_deref(), &job_id, JobProgram::declared(&envelope, &job_id));
        let runtime = w
            .job
            .as_ref()
            .and_then(|n| self.sc.jobs.iter().find(|j| &j.name == n))
            .map_or(60, |j| j.runtime);
        let started = self.agents[p].history.len();
        let result = {
            let site = &self.sites[&site_name];
            let agent = self.agents.get_mut(p).expect("known pilot");
            let cs = self.brokers.get_mut(&broker).expect("known broker");
            agent.validate_and_run(
                &job_id,
                &envelope,
                &self.trust,
                now,
                site.gate.as_ref(),
                cs,
                &mut self.catalogue,
                &program,
            )
        };
        let agent = &self.agents[p];
        let ran = agent.history.len() > started;
        let site_log: Vec<SiteLogEntry> = agent.site_log.clone();
        if ran {
            let record = agent.history.last().cloned().expect("ran");
            self.record_execution(&broker, &record, Some(envelope.clone()), w, &site_log);
        }
        match result {
            Ok(_) => {
                self.log(
                    &me,
                    "EXECUTE",
                    format!(
                        "{job_id} as uid {}",
                        self.agents[p].history.last().map_or(0, |r| r.account.uid)
                    ),
                );
                self.schedule(
                    self.now + runtime,
                    Pending::JobDone {
                        pilot: p.to_string(),
                        job_id,
                        outcome: JobState::Done,
                    },
                );
            }
            Err(e) => {
                self.log(
                    &me,
                    "REFUSE",
                    format!("{job_id} {}: {}", e.kind(), e.to_string().replace('\n', " ")),
                );
                self.settle_attack(w.attack, "REFUSE");
                if w.from == actor_cs(&broker) || ran {
                    self.schedule(
                        self.now,
                        Pending::JobDone {
                            pilot: p.to_string(),
                            job_id,
                            outcome: JobState::Error,
                        },
                    );
                }
            }
        }
    }

    fn record_execution(
        &mut self,
        broker: &str,
        record: &ExecutionRecord,
        envelope: Option<SignedEnvelope>,
        w: &Wire,
        site_log: &[SiteLogEntry],
    ) {
        let prov = self
            .provenance
            .get(&(broker.to_string(), record.job_id.clone()))
            .cloned()
            .unwrap_or_default();
        let tainted = w.tainted || prov.tainted || envelope.is_none() && w.attack.is_some();
        let true_submitter = if tainted {
            ATTACKER.to_string()
        } else {
            record.user.clone()
        };
        let site_logged = site_log.iter().any(|l| {
            l.accepted
                && l.job_id == record.job_id
                && parse_bundle(&l.bundle)
                    .ok()
                    .and_then(|e| e.user().map(String::from))
                    .as_deref()
                    == Some(record.user.as_str())
        }) || envelope.is_none() && site_log.iter().any(|l| l.accepted && l.job_id == record.job_id);
        for path in &record.writes {
            self.writes.push(WriteEvent {
                time: record.started_at,
                job_id: record.job_id.clone(),
                path: path.clone(),
                envelope: envelope.clone(),
            });
        }
        let mapping = self
            .sites
            .get(&record.site)
            .map(|s| s.mapping.account(&true_submitter).cloned());
        self.executions.push(Execution {
            record: record.clone(),
            envelope,
            tainted,
            true_account: mapping.flatten(),
            site_logged,
        });
        if self.sc.model == Model::Certified {
            let me = actor_ja(&record.pilot);
            let msg = Message::new("SITE_LOG")
                .with("job", &record.job_id)
                .with("body", record.to_log_body());
            self.send(&me, &actor_cs(broker), msg, w.job.clone(), false, None);
        }
    }

    fn job_done(&mut self, pilot: &str, job_id: &str, outcome: JobState) {
        let Some(site) = self.site_of(pilot) else { return };
        let broker = self.sites[&site].ce.broker.clone();
        let me = actor_ja(pilot);
        let job = self
            .provenance
            .get(&(broker.clone(), job_id.to_string()))
            .and_then(|p| p.job.clone());
        let fin = Message::new("FINALIZE")
            .with("job", job_id)
            .with("pilot", pilot)
            .with("outcome", outcome.to_string());
        self.send(&me, &actor_cs(&broker), fin, job, false, None);
        let mut req = Message::new("JOB_REQUEST").with("pilot", pilot);
        if self.sc.model.is_baseline() {
            req = req.with("proxy", proxy_to_text(&self.sites[&site].pilot_pc));
        }
        self.send(&me, &actor_cs(&broker), req, None, false, None);
    }

    // ---- proxy baseline ----

    fn baseline_receive(&mut self, b: &str, w: &Wire, msg: &Message) {
        let me = actor_cs(b);
        let now = self.local(&me);
        match msg.kind.as_str() {
            "SUBMIT" => {
                let jdl = msg.text("jdl").map(parse_jdl);
                let pc = msg.text("proxy").and_then(proxy_from_text);
                let (Some(Ok(jdl)), Some(pc)) = (jdl, pc) else {
                    self.log(&me, "REJECT", "malformed");
                    if let Some(j) = &w.job {
                        self.rejected.insert(j.clone());
                    }
                    return;
                };
                let bb = self.baseline.get_mut(b).expect("known broker");
                match bb.submit(jdl, &pc, now) {
                    Ok(job_id) => {
                        self.log(
                            &me,
                            "ACCEPT",
                            format!("{} {job_id} as {}", w.job.as_deref().unwrap_or("-"), pc.owner),
                        );
                        self.provenance.insert(
                            (b.to_string(), job_id.clone()),
                            Provenance {
                                job: w.job.clone(),
                                tainted: w.tainted,
                                attack: w.attack,
                            },
                        );
                        if let Some(a) = w.attack {
                            self.abuses.push(Abuse {
                                attack: self.sc.attacks[a].kind,
                                what: format!("submission {job_id} accepted as {}", pc.owner),
                            });
                        }
                        self.dispatch_pilots(b);
                    }
                    Err(e) => {
                        self.log(&me, "REJECT", e.to_string());
                        if let Some(j) = &w.job {
                            self.rejected.insert(j.clone());
                        }
                    }
                }
            }
            "JOB_REQUEST" => {
                let pilot = msg.text("pilot").unwrap_or_default().to_string();
                let pc = msg.text("proxy").and_then(proxy_from_text);
                let tag = msg
                    .text("tag")
                    .map(String::from)
                    .or_else(|| self.site_of(&pilot).map(|s| self.sites[&s].ce.tag.clone()))
                    .unwrap_or_default();
                let bb = self.baseline.get_mut(b).expect("known broker");
                let result = match pc {
                    Some(pc) => bb.request_job(&pc, &tag, now),
                    None => Err(crate::actors::BaselineError::NotAPilot),
                };
                match result {
                    Ok((job_id, jdl, cred)) => {
                        let prov = self
                            .provenance
                            .get(&(b.to_string(), job_id.clone()))
                            .cloned()
                            .unwrap_or_default();
                        self.log(&me, "ASSIGN", format!("{job_id} -> {pilot}"));
                        let mut reply = Message::new("JOB_ASSIGN")
                            .with("job", &job_id)
                            .with("jdl", serialize_jdl(&jdl));
                        reply = match &cred {
                            HeldCredential::Direct(pc) => reply.with("proxy", proxy_to_text(pc)),
                            HeldCredential::Indirect { key } => reply.with("key", key),
                        };
                        if let Some(a) = w.attack {
                            self.abuses.push(Abuse {
                                attack: self.sc.attacks[a].kind,
                                what: format!("retrieved {job_id} with its owner's credential"),
                            });
                            match cred {
                                HeldCredential::Direct(pc) => self.loot.proxies.push(pc),
                                HeldCredential::Indirect { key } => self.loot.keys.push(key),
                            }
                            self.log("adversary", "LOOT", format!("credential for {job_id}"));
                            return;
                        }
                        self.send(&me, &w.from, reply, prov.job, prov.tainted, None);
                    }
                    Err(e) => {
                        self.log(&me, "NO_JOB", format!("{pilot} {e}"));
                        if w.attack.is_none() {
                            self.send(
                                &me,
                                &w.from,
                                Message::new("NO_MATCH").with("reason", e.to_string()),
                                None,
                                false,
                                None,
                            );
                        }
                    }
                }
            }
            "FINALIZE" => {
                let job = msg.text("job").unwrap_or_default().to_string();
                let outcome = match msg.text("outcome") {
                    Some("DONE") => JobState::Done,
                    _ => JobState::Error,
                };
                let bb = self.baseline.get_mut(b).expect("known broker");
                match bb.finalize(&job, outcome) {
                    Ok(()) => self.log(&me, "FINALIZE", format!("{job} {outcome}")),
                    Err(e) => self.log(&me, "FINALIZE_REFUSED", e.to_string()),
                }
            }
            "MYPROXY_GET" => {
                let key = msg.text("key").unwrap_or_default().to_string();
                let bb = self.baseline.get_mut(b).expect("known broker");
                match bb.retrieve(&key, now) {
                    Ok(pc) => {
                        self.log(&me, "MYPROXY_ISSUE", format!("{} serial={}", pc.owner, pc.serial));
                        if let Some(a) = w.attack {
                            self.abuses.push(Abuse {
                                attack: self.sc.attacks[a].kind,
                                what: format!("obtained a proxy of {}", pc.owner),
                            });
                            self.loot.proxies.push(pc);
                        }
                    }
                    Err(e) => self.log(&me, "MYPROXY_REFUSED", e.to_string()),
                }
            }
            "FETCH" => self.log(&me, "IGNORED", "FETCH"),
            other => self.log(&me, "IGNORED", other.to_string()),
        }
    }

    fn baseline_ja_receive(&mut self, p: &str, w: &Wire, msg: &Message) {
        let me = actor_ja(p);
        let now = self.local(&me);
        let Some(site_name) = self.site_of(p) else {
            self.log(&me, "NO_SUCH_PILOT", msg.kind.clone());
            return;
        };
        match msg.kind.as_str() {
            "NO_MATCH" => {
                self.log(&me, "PILOT_EXIT", p.to_string());
                return;
            }
            "JOB_ASSIGN" => {}
            other => {
                self.log(&me, "IGNORED", other.to_string());
                return;
            }
        }
        let broker = self.sites[&site_name].ce.broker.clone();
        let job_id = msg.text("job").unwrap_or_default().to_string();
        let Some(Ok(jdl)) = msg.text("jdl").map(parse_jdl) else {
            self.log(&me, "REFUSE", format!("{job_id} Malformed"));
            return;
        };
        let pc = match (msg.text("proxy").and_then(proxy_from_text), msg.text("key")) {
            (Some(pc), _) => Some(pc),
            (None, Some(key)) => {
                let bb = self.baseline.get_mut(&broker).expect("known broker");
                let r = bb.retrieve(key, now);
                self.log(
                    &me,
                    "MYPROXY_RETRIEVE",
                    format!(
                        "{job_id} {}",
                        r.as_ref().map_or_else(|e| e.to_string(), |p| p.owner.clone())
                    ),
                );
                r.ok()
            }
            _ => None,
        };
        let Some(pc) = pc else {
            self.log(&me, "REFUSE", format!("{job_id} no credential"));
            return;
        };
        let site = &self.sites[&site_name];
        let account = match &site.gate {
            Some(g) => match g.authorize_proxy(&pc, now) {
                Ok(a) => a,
                Err(e) => {
                    self.log(&me, "REFUSE", format!("{job_id} {e}"));
                    return;
                }
            },
            None => LocalAccount {
                username: "pilot".into(),
                uid: crate::actors::site::PILOT_UID,
            },
        };
        let spec = w.job.as_ref().and_then(|n| self.sc.jobs.iter().find(|j| &j.name == n));
        let runtime = spec.map_or(60, |j| j.runtime);
        let mut record = ExecutionRecord {
            job_id: job_id.clone(),
            site: site_name.clone(),
            pilot: p.to_string(),
            user: pc.owner.clone(),
            account,
            pilot_uid: crate::actors::site::PILOT_UID,
            started_at: now,
            jdl: serialize_jdl(&jdl),
            broker: Some(broker.clone()),
            envelope_digest: "-".into(),
            reads: Vec::new(),
            writes: Vec::new(),
            fetched: Vec::new(),
            node_integrity: site.ce.integrity,
        };
        let bundle = serialize_jdl(&jdl);
        let agent = self.agents.get_mut(p).expect("known pilot");
        agent.site_log.push(SiteLogEntry {
            time: now,
            job_id: job_id.clone(),
            accepted: true,
            bundle,
        });
        let program = {
            let mut prog = JobProgram {
                executable: jdl.first(keys::EXECUTABLE).unwrap_or_default().to_string(),
                reads: jdl.get(keys::INPUT_FILE).unwrap_or_default().to_vec(),
                writes: jdl
                    .get(keys::OUTPUT)
                    .unwrap_or_default()
                    .iter()
                    .map(|o| (o.clone(), format!("{job_id}:{o}\n").into_bytes()))
                    .collect(),
                fetch: Vec::new(),
            };
            prog = self.program_for(w.job.as_deref(), &job_id, prog);
            prog
        };
        for path in &program.reads {
            if proxy_authorizes(&pc, Privilege::Read, path, None, now) {
                if let Ok(c) = self.catalogue.read(path) {
                    record.reads.push((path.clone(), checksum(&c)));
                }
            }
        }
        for (url, content) in &program.fetch {
            record.fetched.push((url.clone(), checksum(content)));
        }
        for (entity, content) in &program.writes {
            if proxy_authorizes(&pc, Privilege::Write, entity, None, now) {
                let path = output_path(&pc.owner, &job_id, entity);
                self.catalogue.write(&path, &pc.owner, content, now);
                record.writes.push(path);
            }
        }
        let agent = self.agents.get_mut(p).expect("known pilot");
        agent.history.push(record.clone());
        let site_log = agent.site_log.clone();
        self.log(
            &me,
            "EXECUTE",
            format!("{job_id} as uid {} for {}", record.account.uid, pc.owner),
        );
        self.record_execution(&broker, &record, None, w, &site_log);
        self.schedule(
            self.now + runtime,
            Pending::JobDone {
                pilot: p.to_string(),
                job_id,
                outcome: JobState::Done,
            },
        );
    }

    // ---- adversary ----

    fn rogue_broker(&mut self, name: &str) -> Credential {
        if let Some(c) = self.rogue_brokers.get(name) {
            return c.clone();
        }
        let bits = self.sc.key_bits;
        let ca = cached_identity(self.seed, "CN=Rogue CA", Role::Ca, bits);
        let id = cached_identity(self.seed ^ 0x5eed, &format!("CN={name}"), Role::Broker, bits);
        let cert =
            issue_certificate(&ca, &id, self.sc.start - 86_400, self.sc.start + 3650 * 86_400).expect("CA identity");
        let cred = Credential::new(id, cert);
        self.rogue_brokers.insert(name.to_string(), cred.clone());
        cred
    }

    fn settle_attack(&mut self, attack: Option<usize>, note: &str) {
        if let Some(i) = attack {
            self.log(
                "adversary",
                "ATTACK_RESULT",
                format!("{} {note}", self.sc.attacks[i].kind.as_str()),
            );
        }
    }

    fn attack(&mut self, i: usize) {
        let spec = self.sc.attacks[i].clone();
        let kind = spec.kind;
        let me = "adversary";
        let broker = self
            .sc
            .jobs
            .iter()
            .find(|j| j.user == spec.victim)
            .map(|j| j.broker.clone())
            .or_else(|| self.sc.brokers.first().map(|b| b.name.clone()))
            .unwrap_or_default();
        self.log(me, "ATTACK", kind.as_str());
        self.attacks.push(AttackResult {
            kind,
            at: self.now,
            launched: true,
        });
        let no_loot = |w: &mut Self| {
            w.log(me, "ATTACK_NO_LOOT", kind.as_str());
            if let Some(a) = w.attacks.last_mut() {
                a.launched = false;
            }
        };
        let certified = self.sc.model == Model::Certified;
        match kind {
            AttackKind::SubmitWithPilotId if certified => {
                let Some(pilot) = self.loot.pilots.first().cloned() else {
                    return no_loot(self);
                };
                let jdl = self.evil_jdl(&spec.victim, &broker);
                let window = (self.now, self.now + self.sc.user_window);
                let env = sign_envelope(&self.attacker, Payload::plain(jdl), window.0, window.1).expect("valid window");
                let msg = Message::new("SUBMIT")
                    .with("body", bundle_to_text(&env))
                    .with("pilot", pilot);
                self.send(me, &actor_cs(&broker), msg, None, true, Some(i));
            }
            AttackKind::SubmitWithPilotId | AttackKind::ImpersonateProxy if !certified => {
                let victim_pc = self.loot.proxies.iter().find(|p| p.owner == spec.victim).cloned();
                let Some(pc) = victim_pc else { return no_loot(self) };
                let jdl = self.evil_jdl(&spec.victim, &broker);
                let msg = Message::new("SUBMIT")
                    .with("jdl", serialize_jdl(&jdl))
                    .with("proxy", proxy_to_text(&pc));
                self.send(me, &actor_cs(&broker), msg, None, true, Some(i));
            }
            AttackKind::ResubmitStolen => {
                let Some(body) = self.loot.sjdls.first().cloned() else {
                    return no_loot(self);
                };
                let msg = self.resubmission(body);
                self.send(me, &actor_cs(&broker), msg, None, true, Some(i));
            }
            AttackKind::TamperedResubmit => {
                let Some(body) = self.loot.sjdls.first().cloned() else {
                    return no_loot(self);
                };
                let body = rewrite_executable(&body, EVIL_EXECUTABLE).unwrap_or(body);
                let msg = self.resubmission(body);
                self.send(me, &actor_cs(&broker), msg, None, true, Some(i));
            }
            AttackKind::FetchForeignJob if certified => {
                let Some(pilot) = self.loot.pilots.first().cloned() else {
                    return no_loot(self);
                };
                let target = self.foreign_target(&pilot, spec.target.as_deref());
                let Some((b, job)) = target else { return no_loot(self) };
                let msg = Message::new("FETCH").with("pilot", pilot).with("job", job);
                self.send(me, &actor_cs(&b), msg, None, true, Some(i));
            }
            AttackKind::FetchForeignJob => {
                let Some(pc) = self.loot.proxies.iter().find(|p| p.elevated_role).cloned() else {
                    return no_loot(self);
                };
                let tag = self.sites.values().next().map(|s| s.ce.tag.clone()).unwrap_or_default();
                let msg = Message::new("JOB_REQUEST")
                    .with("pilot", "stolen")
                    .with("proxy", proxy_to_text(&pc))
                    .with("tag", tag);
                self.send(me, &actor_cs(&broker), msg, None, true, Some(i));
            }
            AttackKind::ForgeAssignment => {
                let target = spec
                    .to
                    .clone()
                    .and_then(|t| t.strip_prefix("ja:").map(String::from))
                    .or_else(|| self.loot.pilots.first().cloned())
                    .or_else(|| self.agents.keys().next().cloned());
                let Some(pilot) = target else { return no_loot(self) };
                let inner = match self
                    .loot
                    .sjdls
                    .first()
                    .and_then(|b| std::str::from_utf8(b).ok().map(String::from))
                {
                    Some(t) => match parse_bundle(&t) {
                        Ok(e) => e,
                        Err(_) => return no_loot(self),
                    },
                    None => {
                        let jdl = self.evil_jdl(&spec.victim, &broker);
                        sign_envelope(
                            &self.attacker,
                            Payload::plain(jdl),
                            self.now,
                            self.now + self.sc.user_window,
                        )
                        .expect("valid window")
                    }
                };
                let signer = match spec.signer {
                    ForgeSigner::RogueCa => self.rogue_broker(&broker),
                    ForgeSigner::UserKey => self.attacker.clone(),
                };
                let mut appended = Jdl::new();
                appended
                    .insert(keys::PILOT_IDENTIFIER, vec![pilot.clone()])
                    .expect("fixed key");
                appended.seal(true);
                let Ok(s2) = sign_envelope(
                    &signer,
                    Payload::wrapping(inner, appended),
                    self.now,
                    self.now + self.sc.run_window,
                ) else {
                    return no_loot(self);
                };
                let msg = Message::new("JOB_ASSIGN")
                    .with("job", "job-forged")
                    .with("body", bundle_to_text(&s2));
                self.send(me, &actor_ja(&pilot), msg, None, true, Some(i));
            }
            AttackKind::ReplayAssignment => {
                let Some((job, body)) = self.loot.assignments.first().cloned() else {
                    return no_loot(self);
                };
                let to = spec.to.clone().or_else(|| {
                    let text = std::str::from_utf8(&body).ok()?;
                    let e = parse_bundle(text).ok()?;
                    e.signed_value(keys::PILOT_IDENTIFIER).map(actor_ja)
                });
                let Some(to) = to else { return no_loot(self) };
                let msg = Message::new("JOB_ASSIGN").with("job", job).with("body", body);
                self.send(me, &to, msg, None, true, Some(i));
            }
            AttackKind::ImpersonateProxy => {
                let Some((_, body)) = self.loot.assignments.first().cloned() else {
                    return no_loot(self);
                };
                let msg = Message::new("SUBMIT").with("body", body);
                self.send(me, &actor_cs(&broker), msg, None, true, Some(i));
            }
            AttackKind::MyProxyRetrieve => {
                let key = self.loot.keys.first().cloned();
                let Some(key) = key.or_else(|| (!self.loot.pilots.is_empty()).then(|| "guessed".to_string())) else {
                    return no_loot(self);
                };
                let msg = Message::new("MYPROXY_GET").with("key", key);
                self.send(me, &actor_cs(&broker), msg, None, true, Some(i));
            }
            AttackKind::SubmitWithPilotId => unreachable!("covered by the model guards"),
        }
    }

    fn evil_jdl(&self, victim: &str, broker: &str) -> Jdl {
        let mut jdl = Jdl::new();
        jdl.insert(keys::EXECUTABLE, vec![EVIL_EXECUTABLE.into()])
            .expect("fixed key");
        jdl.insert(keys::OUTPUT, vec!["stdout".into()]).expect("fixed key");
        jdl.insert(keys::USER, vec![victim.into()]).expect("fixed key");
        jdl.insert(keys::BROKER, vec![broker.into()]).expect("fixed key");
        jdl.seal(false);
        jdl
    }

    fn resubmission(&self, body: Vec<u8>) -> Message {
        if self.sc.model == Model::Certified {
            return Message::new("SUBMIT").with("body", body);
        }
        // Baseline submissions carry a bare description and a proxy.
        let pc = self.loot.proxies.first().map(proxy_to_text).unwrap_or_default();
        Message::new("SUBMIT").with("jdl", body).with("proxy", pc)
    }

    fn foreign_target(&self, pilot: &str, named: Option<&str>) -> Option<(String, String)> {
        let leaves = self.leaves();
        if let Some(n) = named {
            return leaves.get(n).and_then(|v| v.first().cloned());
        }
        for (b, cs) in &self.brokers {
            if let Some(e) = cs
                .queue()
                .iter()
                .find(|e| e.agent.as_deref().is_some_and(|a| a != pilot))
            {
                return Some((b.clone(), e.job_id.clone()));
            }
        }
        self.brokers
            .iter()
            .find_map(|(b, cs)| cs.queue().iter().next().map(|e| (b.clone(), e.job_id.clone())))
    }

    // ---- catalogue and forensics ----

    fn catalogue_op(&mut self, i: usize) {
        match self.sc.catalogue_ops[i].clone() {
            CatalogueOp::Delete { path, by, .. } => match self.catalogue.delete(&path, &by, self.now) {
                Ok(change) => {
                    self.catalogue_ledger.append(
                        RecordKind::CatalogueChange,
                        self.now,
                        path.clone(),
                        format!("{change} by={by}"),
                    );
                    self.log("catalogue", "DELETE", format!("{path} by={by}"));
                }
                Err(e) => self.log("catalogue", "DELETE_FAILED", e.to_string()),
            },
            CatalogueOp::Overwrite {
                path, owner, content, ..
            } => {
                let change = self.catalogue.write(&path, &owner, &content, self.now);
                self.catalogue_ledger.append(
                    RecordKind::CatalogueChange,
                    self.now,
                    path.clone(),
                    format!("{change} owner={owner}"),
                );
                self.log("catalogue", "OVERWRITE", format!("{path} owner={owner}"));
            }
        }
    }

    /// Queue entries that stand for each scenario job, excluding entries
    /// replaced by a split or handed on by a relay.
    fn leaves(&self) -> BTreeMap<String, Vec<(String, String)>> {
        let mut out: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        for ((b, id), p) in &self.provenance {
            if p.tainted || self.superseded.contains(&(b.clone(), id.clone())) {
                continue;
            }
            if let Some(j) = &p.job {
                out.entry(j.clone()).or_default().push((b.clone(), id.clone()));
            }
        }
        out
    }

    fn incident(&mut self, i: usize) {
        let spec = self.sc.incidents[i].clone();
        let artifact = match &spec.artifact {
            ArtifactSpec::Checksum(s) => s.clone(),
            ArtifactSpec::Content(c) => checksum(c),
        };
        let leaf = self.leaves().get(&spec.job).and_then(|v| v.first().cloned());
        let result = match leaf {
            Some((b, job_id)) if self.sc.model == Model::Certified => {
                let incident = Incident {
                    job_id,
                    artifact,
                    at: self.now,
                    catalogue_trusted: spec.trusted,
                    node_compromised: spec.node_compromised,
                    package_compromised: spec.package_compromised,
                };
                forensic_classify(&incident, self.brokers[&b].ledger(), &self.catalogue, &self.trust)
            }
            _ => Err(crate::audit::ForensicError::UnknownJob(spec.job.clone())),
        };
        let text = match &result {
            Ok(v) => format!("{} {} {}", spec.job, v.origin, v.accountable),
            Err(e) => format!("{} {e}", spec.job),
        };
        self.log("auditor", "VERDICT", text);
        self.forensics.push(ForensicCheck {
            job: spec.job.clone(),
            result,
            expected: spec.expect,
        });
    }

    // ---- wrap up ----

    fn job_states(&self) -> BTreeMap<String, String> {
        let leaves = self.leaves();
        let mut out = BTreeMap::new();
        for j in &self.sc.jobs {
            let states: Vec<JobState> = leaves
                .get(&j.name)
                .map(|v| {
                    v.iter()
                        .filter_map(|(b, id)| match self.sc.model {
                            Model::Certified => self.brokers[b].queue().get(id).map(|e| e.state),
                            _ => self.baseline[b].job(id).map(|e| e.state),
                        })
                        .collect()
                })
                .unwrap_or_default();
            let state = if states.is_empty() {
                if self.rejected.contains(&j.name) {
                    "REJECTED".to_string()
                } else {
                    "NOT_SUBMITTED".to_string()
                }
            } else if states.iter().all(|s| *s == JobState::Done) {
                "DONE".into()
            } else {
                let worst = [
                    JobState::Error,
                    JobState::Invalidated,
                    JobState::Assigned,
                    JobState::Waiting,
                ]
                .into_iter()
                .find(|w| states.contains(w))
                .expect("some state");
                worst.to_string()
            };
            out.insert(j.name.clone(), state);
        }
        out
    }

    fn finish(self) -> ScenarioOutcome {
        let mut countersigned = BTreeSet::new();
        for cs in self.brokers.values() {
            for r in cs
                .ledger()
                .records()
                .iter()
                .filter(|r| r.kind == RecordKind::Countersign)
            {
                if let Ok(e) = parse_bundle(&r.body) {
                    countersigned.insert(e.digest());
                }
            }
        }
        let mut finalized = BTreeMap::new();
        for cs in self.brokers.values() {
            for e in cs.queue().iter() {
                if let (Some(s2), true) = (&e.assignment, e.state.is_terminal()) {
                    let t = cs
                        .ledger()
                        .find(RecordKind::Finalize, &e.job_id)
                        .map(|r| r.time)
                        .next()
                        .unwrap_or(Epoch::MIN);
                    finalized.insert(s2.digest(), t);
                }
            }
        }
        let evidence = Evidence {
            trust: &self.trust,
            brokers: self.sc.brokers.iter().map(|b| b.name.clone()).collect(),
            genuine: &self.genuine,
            countersigned,
            finalized,
            executions: &self.executions,
            writes: &self.writes,
            abuses: &self.abuses,
        };
        let verdicts = evaluate(&evidence, &self.sc.exercises);
        let job_states = self.job_states();
        let mut ledgers: BTreeMap<String, Ledger> = self
            .brokers
            .iter()
            .map(|(n, cs)| (n.clone(), cs.ledger().clone()))
            .collect();
        ledgers.insert("catalogue".into(), self.catalogue_ledger.clone());
        ScenarioOutcome {
            name: self.sc.name.clone(),
            model: self.sc.model,
            seed: self.seed,
            verdicts,
            expected_violations: self.sc.expect_violated.clone(),
            exercised: self.sc.exercises.clone(),
            log: self.outcome_log,
            events: self.events,
            ledgers,
            catalogue: self.catalogue,
            trust_pem: self.trust.roots().iter().map(|c| c.to_pem()).collect(),
            job_states,
            expect_states: self.sc.expect_states.clone(),
            expect_executions: self.sc.expect_executions,
            executions: self.executions.len(),
            abuses: self
                .abuses
                .iter()
                .map(|a| format!("{} {}", a.attack.as_str(), a.what))
                .collect(),
            attacks: self.attacks,
            forensics: self.forensics,
            message_counts: self.message_counts,
            total_messages: self.total_messages,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_text_round_trip() {
        let mut pc = ProxyCredential::new("testuser", 3, 10, 20, [Privilege::Read, Privilege::Submit]).unwrap();
        pc.renewable_until = Some(99);
        assert_eq!(proxy_from_text(&proxy_to_text(&pc)), Some(pc.clone()));
        pc.elevated_role = true;
        pc.renewable_until = None;
        assert_eq!(proxy_from_text(&proxy_to_text(&pc)), Some(pc));
        assert_eq!(proxy_from_text("x 1 2"), None);
    }

    #[test]
    fn executable_rewrite() {
        let t = b"Executable = {\"cat\"};\nUser = {\"u\"};\n";
        assert_eq!(
            rewrite_executable(t, "/bin/evil").unwrap(),
            b"Executable = {\"/bin/evil\"};\nUser = {\"u\"};\n".to_vec()
        );
    }
}
