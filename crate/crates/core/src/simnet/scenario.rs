//! The line-oriented scenario format.
//!
//! One directive per line, `#` starts a comment. Arguments are `key=value`
//! pairs; values may be double-quoted with `\n`, `\t`, `\"` and `\\`
//! escapes. Times written `+N` are offsets from `start`, bare numbers are
//! absolute epoch seconds. See `scenarios/README.md` for the directive list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::audit::{Accountable, Origin};
use crate::time::Epoch;

use super::SimError;

pub const DEFAULT_START: Epoch = 1_312_392_035;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Certified,
    ProxyDirect,
    ProxyIndirect,
}

impl Model {
    pub fn is_baseline(&self) -> bool {
        !matches!(self, Model::Certified)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Certified => "certified",
            Model::ProxyDirect => "proxy-direct",
            Model::ProxyIndirect => "proxy-indirect",
        })
    }
}

/// A point in virtual time, relative to the scenario start or absolute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRef {
    Rel(i64),
    Abs(Epoch),
}

impl TimeRef {
    pub fn resolve(&self, start: Epoch) -> Epoch {
        match *self {
            TimeRef::Rel(d) => start + d,
            TimeRef::Abs(t) => t,
        }
    }
}

impl FromStr for TimeRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad time `{s}`");
        if let Some(d) = s.strip_prefix('+') {
            d.parse().map(TimeRef::Rel).map_err(|_| bad())
        } else if s.starts_with('-') {
            s.parse().map(TimeRef::Rel).map_err(|_| bad())
        } else {
            s.parse().map(TimeRef::Abs).map_err(|_| bad())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerSpec {
    pub name: String,
    pub relay_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpec {
    pub name: String,
    pub tag: String,
    pub broker: String,
    pub integrity: bool,
    pub gate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpec {
    pub name: String,
    pub user: String,
    pub broker: String,
    pub at: TimeRef,
    pub executable: String,
    pub arguments: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub requirement: Option<String>,
    pub runtime: i64,
    pub split: usize,
    /// URLs the running job retrieves from outside the grid.
    pub fetch: Vec<String>,
    /// Writes the job attempts beyond its declared outputs.
    pub extra_write: Vec<String>,
    /// User window as offsets from the submission time.
    pub window: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileSpec {
    pub path: String,
    pub owner: String,
    pub content: Vec<u8>,
    pub at: TimeRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogueOp {
    Delete {
        path: String,
        by: String,
        at: TimeRef,
    },
    Overwrite {
        path: String,
        owner: String,
        content: Vec<u8>,
        at: TimeRef,
    },
}

/// Which message an adversary rule applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    Seq(u64),
    /// The n-th message (1-based) of a kind.
    Kind(String, usize),
}

impl FromStr for Trigger {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(n) = s.strip_prefix("seq=") {
            return n.parse().map(Trigger::Seq).map_err(|_| format!("bad trigger `{s}`"));
        }
        let (kind, n) = s.split_once('#').ok_or_else(|| format!("bad trigger `{s}`"))?;
        let n: usize = n.parse().map_err(|_| format!("bad trigger `{s}`"))?;
        if kind.is_empty() || n == 0 {
            return Err(format!("bad trigger `{s}`"));
        }
        Ok(Trigger::Kind(kind.to_string(), n))
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Seq(n) => write!(f, "seq={n}"),
            Trigger::Kind(k, n) => write!(f, "{k}#{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TamperOffset {
    At(usize),
    /// First occurrence of the text in the field.
    Find(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryAction {
    Tamper {
        field: String,
        offset: TamperOffset,
        byte: u8,
    },
    Steal,
    /// Re-sends a copy `delay` seconds after `after` is sent, or after the
    /// original when `after` is absent.
    Replay {
        to: Option<String>,
        after: Option<Trigger>,
        delay: i64,
    },
    Drop,
    Delay(i64),
}

impl AdversaryAction {
    pub fn name(&self) -> &'static str {
        match self {
            AdversaryAction::Tamper { .. } => "TAMPER",
            AdversaryAction::Steal => "STEAL_CREDENTIAL",
            AdversaryAction::Replay { .. } => "REPLAY",
            AdversaryAction::Drop => "DROP",
            AdversaryAction::Delay(_) => "DELAY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryRule {
    pub trigger: Trigger,
    pub action: AdversaryAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    SubmitWithPilotId,
    ResubmitStolen,
    TamperedResubmit,
    FetchForeignJob,
    ForgeAssignment,
    ReplayAssignment,
    ImpersonateProxy,
    MyProxyRetrieve,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::SubmitWithPilotId,
        AttackKind::ResubmitStolen,
        AttackKind::TamperedResubmit,
        AttackKind::FetchForeignJob,
        AttackKind::ForgeAssignment,
        AttackKind::ReplayAssignment,
        AttackKind::ImpersonateProxy,
        AttackKind::MyProxyRetrieve,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::SubmitWithPilotId => "submit-with-pilot-id",
            AttackKind::ResubmitStolen => "resubmit-stolen",
            AttackKind::TamperedResubmit => "tampered-resubmit",
            AttackKind::FetchForeignJob => "fetch-foreign-job",
            AttackKind::ForgeAssignment => "forge-assignment",
            AttackKind::ReplayAssignment => "replay-assignment",
            AttackKind::ImpersonateProxy => "impersonate-proxy",
            AttackKind::MyProxyRetrieve => "myproxy-retrieve",
        }
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown attack `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgeSigner {
    /// A broker certificate from a CA nobody trusts.
    RogueCa,
    /// The attacker's own, properly certified user key.
    UserKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub at: TimeRef,
    /// User the attacker tries to act as.
    pub victim: String,
    /// Job whose assignment is targeted.
    pub target: Option<String>,
    /// Actor a forged or replayed message goes to.
    pub to: Option<String>,
    pub signer: ForgeSigner,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArtifactSpec {
    Checksum(String),
    Content(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidentSpec {
    pub job: String,
    pub artifact: ArtifactSpec,
    pub at: TimeRef,
    pub trusted: bool,
    pub node_compromised: bool,
    pub package_compromised: bool,
    pub expect: Option<(Origin, Accountable)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub model: Model,
    pub start: Epoch,
    pub latency: i64,
    pub user_window: i64,
    pub run_window: i64,
    pub horizon: i64,
    pub key_bits: usize,
    /// Clock offset per actor address.
    pub skew: BTreeMap<String, i64>,
    pub brokers: Vec<BrokerSpec>,
    pub users: Vec<String>,
    pub sites: Vec<SiteSpec>,
    pub jobs: Vec<JobSpec>,
    pub files: Vec<FileSpec>,
    pub externals: BTreeMap<String, Vec<u8>>,
    pub catalogue_ops: Vec<CatalogueOp>,
    pub adversary: Vec<AdversaryRule>,
    pub attacks: Vec<AttackSpec>,
    pub incidents: Vec<IncidentSpec>,
    pub exercises: BTreeSet<u8>,
    pub expect_violated: BTreeSet<u8>,
    pub expect_states: Vec<(String, String)>,
    pub expect_executions: Option<usize>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "unnamed".into(),
            model: Model::Certified,
            start: DEFAULT_START,
            latency: 1,
            user_window: 1_209_600,
            run_window: 3600,
            horizon: crate::actors::DEFAULT_STALE_HORIZON,
            key_bits: crate::crypto::DEFAULT_RSA_BITS,
            skew: BTreeMap::new(),
            brokers: Vec::new(),
            users: Vec::new(),
            sites: Vec::new(),
            jobs: Vec::new(),
            files: Vec::new(),
            externals: BTreeMap::new(),
            catalogue_ops: Vec::new(),
            adversary: Vec::new(),
            attacks: Vec::new(),
            incidents: Vec::new(),
            exercises: [1, 2, 3, 4, 5, 6, 7, 9].into_iter().collect(),
            expect_violated: BTreeSet::new(),
            expect_states: Vec::new(),
            expect_executions: None,
        }
    }
}

/// Splits a line into words. Quoted sections may contain spaces.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                in_word = true;
                loop {
                    match chars.next() {
                        None => return Err("unterminated quote".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('n') => cur.push('\n'),
                            Some('t') => cur.push('\t'),
                            Some(e @ ('"' | '\\')) => cur.push(e),
                            other => return Err(format!("bad escape `\\{}`", other.unwrap_or(' '))),
                        },
                        Some(ch) => cur.push(ch),
                    }
                }
            }
            c if c.is_whitespace() => {
                if in_word {
                    out.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            c => {
                in_word = true;
                cur.push(c);
            }
        }
    }
    if in_word {
        out.push(cur);
    }
    Ok(out)
}

struct Args {
    positional: Vec<String>,
    named: BTreeMap<String, String>,
}

impl Args {
    fn parse(words: &[String]) -> Result<Self, String> {
        let mut positional = Vec::new();
        let mut named = BTreeMap::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v))
                    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') =>
                {
                    if named.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(format!("`{k}` given twice"));
                    }
                }
                _ => positional.push(w.clone()),
            }
        }
        Ok(Args { positional, named })
    }

    fn pos(&self, i: usize, what: &str) -> Result<&str, String> {
        self.positional
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| format!("missing {what}"))
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.named.remove(key)
    }

    fn need(&mut self, key: &str) -> Result<String, String> {
        self.take(key).ok_or_else(|| format!("missing `{key}=`"))
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, String> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| format!("bad value for `{key}`: `{v}`")),
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool, String> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("yes" | "on" | "ok" | "true") => Ok(true),
            Some("no" | "off" | "false" | "compromised") => Ok(false),
            Some(v) => Err(format!("bad value for `{key}`: `{v}`")),
        }
    }

    fn list(&mut self, key: &str) -> Vec<String> {
        self.take(key)
            .map(|v| v.split(',').filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    fn finish(self) -> Result<(), String> {
        match self.named.keys().next() {
            Some(k) => Err(format!("unknown argument `{k}`")),
            None => Ok(()),
        }
    }
}

fn objectives(list: &[String]) -> Result<BTreeSet<u8>, String> {
    let mut out = BTreeSet::new();
    for w in list.iter().flat_map(|w| w.split(',')).filter(|s| !s.is_empty()) {
        let n: u8 = w.parse().map_err(|_| format!("bad objective `{w}`"))?;
        if !(1..=9).contains(&n) || n == 8 {
            return Err(format!("objective {n} cannot be evaluated"));
        }
        out.insert(n);
    }
    Ok(out)
}

fn parse_byte(s: &str) -> Result<u8, String> {
    let v = s
        .strip_prefix("0x")
        .map_or_else(|| s.parse(), |h| u8::from_str_radix(h, 16));
    v.map_err(|_| format!("bad byte `{s}`"))
}

fn parse_verdict(s: &str) -> Result<(Origin, Accountable), String> {
    let (o, a) = s.split_once('/').ok_or_else(|| format!("bad verdict `{s}`"))?;
    let origin = match o {
        "INTERNAL_I" => Origin::InternalI,
        "INTERNAL_II" => Origin::InternalII,
        "INTERNAL_III" => Origin::InternalIII,
        "EXTERNAL" => Origin::External,
        "UNATTRIBUTABLE" => Origin::Unattributable,
        _ => return Err(format!("bad origin `{o}`")),
    };
    let acc = match a {
        "YES" => Accountable::Yes,
        "NO" => Accountable::No,
        "INDETERMINATE" => Accountable::Indeterminate,
        _ => return Err(format!("bad verdict `{a}`")),
    };
    Ok((origin, acc))
}

fn window(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("bad window `{s}`"))?;
    let p = |x: &str| {
        x.trim_start_matches('+')
            .parse::<i64>()
            .map_err(|_| format!("bad window `{s}`"))
    };
    Ok((p(a)?, p(b)?))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut sc = Scenario::default();
        let mut exercises_given = false;
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            let words = tokenize(&line).map_err(|reason| SimError::MalformedScenario { line: i + 1, reason })?;
            let Some((head, rest)) = words.split_first() else {
                continue;
            };
            sc.directive(head, rest, &mut exercises_given)
                .map_err(|reason| SimError::MalformedScenario { line: i + 1, reason })?;
        }
        sc.check()
            .map_err(|reason| SimError::MalformedScenario { line: 0, reason })?;
        Ok(sc)
    }

    fn directive(&mut self, head: &str, rest: &[String], exercises_given: &mut bool) -> Result<(), String> {
        let mut a = Args::parse(rest)?;
        let single = |a: &Args| -> Result<String, String> {
            match a.positional.as_slice() {
                [v] => Ok(v.clone()),
                _ => Err(format!("`{head}` takes one value")),
            }
        };
        let num =
            |a: &Args| -> Result<i64, String> { single(a)?.parse().map_err(|_| format!("`{head}` needs an integer")) };
        match head {
            "name" => self.name = single(&a)?,
            "model" => {
                self.model = match single(&a)?.as_str() {
                    "certified" => Model::Certified,
                    "proxy-direct" => Model::ProxyDirect,
                    "proxy-indirect" => Model::ProxyIndirect,
                    m => return Err(format!("unknown model `{m}`")),
                }
            }
            "start" => self.start = num(&a)?,
            "latency" => self.latency = num(&a)?,
            "user-window" => self.user_window = num(&a)?,
            "run-window" => self.run_window = num(&a)?,
            "horizon" => self.horizon = num(&a)?,
            "key-bits" => self.key_bits = num(&a)? as usize,
            "skew" => {
                // Actor addresses contain `:`, so pairs may land in either list.
                let pairs = std::mem::take(&mut a.named).into_iter().chain(
                    a.positional
                        .iter()
                        .map(|w| w.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
                        .collect::<Option<Vec<_>>>()
                        .ok_or("skew takes actor=seconds pairs")?,
                );
                for (k, v) in pairs {
                    let d = v.parse().map_err(|_| format!("bad skew `{v}`"))?;
                    self.skew.insert(k, d);
                }
            }
            "broker" => {
                let name = a.pos(0, "broker name")?.to_string();
                let relay_to = a.take("relay-to");
                a.finish()?;
                self.brokers.push(BrokerSpec { name, relay_to });
            }
            "user" => {
                let name = a.pos(0, "user name")?.to_string();
                a.finish()?;
                self.users.push(name);
            }
            "site" => {
                let name = a.pos(0, "site name")?.to_string();
                let s = SiteSpec {
                    tag: a.need("tag")?,
                    broker: a.need("broker")?,
                    integrity: a.flag("integrity", true)?,
                    gate: a.flag("gate", true)?,
                    name,
                };
                a.finish()?;
                self.sites.push(s);
            }
            "job" => {
                let name = a.pos(0, "job name")?.to_string();
                let j = JobSpec {
                    user: a.need("user")?,
                    broker: a.need("broker")?,
                    at: a.parsed("at")?.unwrap_or(TimeRef::Rel(0)),
                    executable: a.take("exec").unwrap_or_else(|| "cat".into()),
                    arguments: a.list("args"),
                    inputs: a.list("inputs"),
                    outputs: a.list("outputs"),
                    requirement: a.take("requirement"),
                    runtime: a.parsed("runtime")?.unwrap_or(60),
                    split: a.parsed("split")?.unwrap_or(1),
                    fetch: a.list("fetch"),
                    extra_write: a.list("extra-write"),
                    window: a.take("window").map(|w| window(&w)).transpose()?,
                    name,
                };
                a.finish()?;
                self.jobs.push(j);
            }
            "file" => {
                let path = a.pos(0, "path")?.to_string();
                let f = FileSpec {
                    owner: a.need("owner")?,
                    content: a.need("content")?.into_bytes(),
                    at: a.parsed("at")?.unwrap_or(TimeRef::Rel(-3600)),
                    path,
                };
                a.finish()?;
                self.files.push(f);
            }
            "external" => {
                let url = a.pos(0, "url")?.to_string();
                let content = a.need("content")?.into_bytes();
                a.finish()?;
                self.externals.insert(url, content);
            }
            "catalogue" => {
                let op = a.pos(0, "operation")?.to_string();
                let path = a.pos(1, "path")?.to_string();
                let at = a.parsed("at")?.ok_or("missing `at=`")?;
                let op = match op.as_str() {
                    "delete" => CatalogueOp::Delete {
                        path,
                        by: a.need("by")?,
                        at,
                    },
                    "overwrite" => CatalogueOp::Overwrite {
                        path,
                        owner: a.need("owner")?,
                        content: a.need("content")?.into_bytes(),
                        at,
                    },
                    other => return Err(format!("unknown catalogue operation `{other}`")),
                };
                a.finish()?;
                self.catalogue_ops.push(op);
            }
            "adversary" => {
                let action = a.pos(0, "action")?.to_string();
                let trigger: Trigger = a.pos(1, "trigger")?.parse()?;
                let action = match action.as_str() {
                    "tamper" => {
                        let offset = a.need("offset")?;
                        let offset = match offset.strip_prefix('@') {
                            Some(t) => TamperOffset::Find(t.to_string()),
                            None => TamperOffset::At(offset.parse().map_err(|_| format!("bad offset `{offset}`"))?),
                        };
                        AdversaryAction::Tamper {
                            field: a.take("field").unwrap_or_else(|| "body".into()),
                            offset,
                            byte: parse_byte(&a.need("byte")?)?,
                        }
                    }
                    "steal" => AdversaryAction::Steal,
                    "replay" => AdversaryAction::Replay {
                        to: a.take("to"),
                        after: a.take("after").map(|t| t.parse()).transpose()?,
                        delay: a.parsed("delay")?.unwrap_or(0),
                    },
                    "drop" => AdversaryAction::Drop,
                    "delay" => AdversaryAction::Delay(a.parsed("seconds")?.ok_or("missing `seconds=`")?),
                    other => return Err(format!("unknown adversary action `{other}`")),
                };
                a.finish()?;
                self.adversary.push(AdversaryRule { trigger, action });
            }
            "attack" => {
                let kind: AttackKind = a.pos(0, "attack kind")?.parse()?;
                let s = AttackSpec {
                    kind,
                    at: a.parsed("at")?.ok_or("missing `at=`")?,
                    victim: a.take("victim").unwrap_or_else(|| "testuser".into()),
                    target: a.take("target"),
                    to: a.take("to"),
                    signer: match a.take("signer").as_deref() {
                        None | Some("rogue-ca") => ForgeSigner::RogueCa,
                        Some("user-key") => ForgeSigner::UserKey,
                        Some(s) => return Err(format!("unknown signer `{s}`")),
                    },
                };
                a.finish()?;
                self.attacks.push(s);
            }
            "incident" => {
                let job = a.pos(0, "job name")?.to_string();
                let artifact = match (a.take("artifact"), a.take("content")) {
                    (Some(sum), None) => ArtifactSpec::Checksum(sum),
                    (None, Some(c)) => ArtifactSpec::Content(c.into_bytes()),
                    _ => return Err("give exactly one of `artifact=` or `content=`".into()),
                };
                let s = IncidentSpec {
                    job,
                    artifact,
                    at: a.parsed("at")?.ok_or("missing `at=`")?,
                    trusted: a.flag("trusted", true)?,
                    node_compromised: a.flag("node-compromised", false)?,
                    package_compromised: a.flag("package-compromised", false)?,
                    expect: a.take("expect").map(|v| parse_verdict(&v)).transpose()?,
                };
                a.finish()?;
                self.incidents.push(s);
            }
            "exercises" => {
                self.exercises = objectives(&a.positional)?;
                *exercises_given = true;
            }
            "expect-violated" => self.expect_violated = objectives(&a.positional)?,
            "expect" => {
                let job = a.pos(0, "job name")?.to_string();
                let state = a.pos(1, "state")?.to_string();
                self.expect_states.push((job, state));
            }
            "expect-executions" => self.expect_executions = Some(num(&a)? as usize),
            other => return Err(format!("unknown directive `{other}`")),
        }
        Ok(())
    }

    fn check(&self) -> Result<(), String> {
        let brokers: BTreeSet<&str> = self.brokers.iter().map(|b| b.name.as_str()).collect();
        let users: BTreeSet<&str> = self.users.iter().map(String::as_str).collect();
        if brokers.len() != self.brokers.len() {
            return Err("duplicate broker".into());
        }
        for b in &self.brokers {
            if let Some(r) = &b.relay_to {
                if !brokers.contains(r.as_str()) || r == &b.name {
                    return Err(format!("broker `{}` relays to unknown `{r}`", b.name));
                }
            }
        }
        for s in &self.sites {
            if !brokers.contains(s.broker.as_str()) {
                return Err(format!("site `{}` names unknown broker `{}`", s.name, s.broker));
            }
        }
        let mut names = BTreeSet::new();
        for j in &self.jobs {
            if !names.insert(j.name.as_str()) {
                return Err(format!("duplicate job `{}`", j.name));
            }
            if !users.contains(j.user.as_str()) {
                return Err(format!("job `{}` names unknown user `{}`", j.name, j.user));
            }
            if !brokers.contains(j.broker.as_str()) {
                return Err(format!("job `{}` names unknown broker `{}`", j.name, j.broker));
            }
            if j.split == 0 {
                return Err(format!("job `{}` splits into zero parts", j.name));
            }
        }
        for i in &self.incidents {
            if !names.contains(i.job.as_str()) {
                return Err(format!("incident names unknown job `{}`", i.job));
            }
        }
        for (j, _) in &self.expect_states {
            if !names.contains(j.as_str()) {
                return Err(format!("expectation names unknown job `{j}`"));
            }
        }
        if self.latency < 0 || self.run_window <= 0 || self.user_window <= 0 {
            return Err("latency and windows must be positive".into());
        }
        Ok(())
    }
}

/// Drops a trailing comment. `#` opens a comment only at the start of a
/// word and outside quotes, so triggers such as `SUBMIT#1` survive.
fn strip_comment(line: &str) -> String {
    let mut out = String::new();
    let mut quoted = false;
    let mut escaped = false;
    let mut prev = ' ';
    for c in line.chars() {
        if quoted {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                quoted = false;
            }
        } else if c == '"' {
            quoted = true;
        } else if c == '#' && prev.is_whitespace() {
            break;
        }
        out.push(c);
        prev = c;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
name demo
model certified
broker myVO
user testuser
site siteA tag=x86 broker=myVO
file /data/in owner=testuser content="a # not a comment\n"
job j1 user=testuser broker=myVO inputs=/data/in outputs=stdout,stderr split=2 at=+5
adversary tamper SUBMIT#1 offset=@cat byte=0x64
adversary replay JOB_ASSIGN#1 after=FINALIZE#1 delay=30  # trailing comment
attack fetch-foreign-job at=+100
incident j1 content="x" at=+200 expect=INTERNAL_I/YES
expect j1 DONE
"#;

    #[test]
    fn parses_every_directive_kind() {
        let s = Scenario::parse(TEXT).unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.files[0].content, b"a # not a comment\n");
        assert_eq!(s.jobs[0].split, 2);
        assert_eq!(s.jobs[0].at.resolve(s.start), DEFAULT_START + 5);
        assert_eq!(s.jobs[0].outputs, ["stdout", "stderr"]);
        assert_eq!(s.adversary[0].trigger, Trigger::Kind("SUBMIT".into(), 1));
        assert!(matches!(
            &s.adversary[1].action,
            AdversaryAction::Replay { delay: 30, after: Some(Trigger::Kind(k, 1)), .. } if k == "FINALIZE"
        ));
        assert_eq!(s.incidents[0].expect, Some((Origin::InternalI, Accountable::Yes)));
    }

    #[test]
    fn reports_line_numbers() {
        let err = Scenario::parse("name x\nbroker a\njob j user=nobody broker=a\n").unwrap_err();
        assert!(matches!(err, SimError::MalformedScenario { line: 0, .. }));
        let err = Scenario::parse("name x\nfrobnicate\n").unwrap_err();
        assert_eq!(
            err,
            SimError::MalformedScenario {
                line: 2,
                reason: "unknown directive `frobnicate`".into()
            }
        );
        assert!(Scenario::parse("site s tag=a broker=b bogus=1\n").is_err());
        assert!(Scenario::parse("exercises 8\n").is_err());
    }
}
