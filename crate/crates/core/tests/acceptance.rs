//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! fails the target if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use certgrid::audit::{ledger_verify, Accountable, Ledger, Origin, RecordKind};
use certgrid::crypto::{
    parse_envelope, serialize_envelope, sign_envelope, verify_envelope, Certificate, Payload, Role, SignedEnvelope,
    TrustStore,
};
use certgrid::delegation::{extract_concessions, gamma_pc, phi, project, psi, rho, Privilege, ProxyCredential};
use certgrid::jdl::{keys, Jdl};
use certgrid::simnet::{
    builtin_scenario, builtin_scenarios, run_scenario, AdversaryAction, Model, Scenario, Trigger, Verdict,
};
use certgrid::time::Window;

use common::{credential, trust, LISTING, LISTING_NA, LISTING_NB};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- 1 -------------------------------------------------------------------

fn listing_conformance() -> Outcome {
    let user = credential("testuser", Role::User);
    let broker = credential("myVO", Role::Broker);
    let trust = trust();

    let template = parse_envelope(LISTING).map_err(|e| e.to_string())?;
    let inner_t = template.nested().ok_or("listing has no nested layer")?;
    let inner = sign_envelope(&user, Payload::plain(inner_t.jdl().clone()), LISTING_NB, LISTING_NA)
        .map_err(|e| e.to_string())?;
    let outer = sign_envelope(
        &broker,
        Payload::wrapping(inner.clone(), template.jdl().clone()),
        LISTING_NB,
        LISTING_NA,
    )
    .map_err(|e| e.to_string())?;
    let text = LISTING
        .replace(&inner_t.signature().to_string(), &inner.signature().to_string())
        .replace(&template.signature().to_string(), &outer.signature().to_string());
    let certs: Vec<Certificate> = vec![user.certificate.clone(), broker.certificate.clone()];

    let started = Instant::now();
    let mut e = parse_envelope(&text).map_err(|e| e.to_string())?;
    e.attach_certificates(&certs);
    check(e.depth() == 2, || format!("depth {}", e.depth()))?;
    let i = e.nested().unwrap();
    let field = |j: &Jdl, k: &str| j.get(k).map(|v| v.to_vec()).unwrap_or_default();
    let expect = [
        (keys::EXECUTABLE, vec!["cat"]),
        (keys::ARGUMENTS, vec!["myInputFile"]),
        (keys::INPUT_FILE, vec!["/catalogue/data/myInputFile"]),
        (keys::OUTPUT, vec!["stdout", "stderr"]),
        (keys::USER, vec!["testuser"]),
        (keys::BROKER, vec!["myVO"]),
    ];
    for (k, v) in expect {
        check(field(i.jdl(), k) == v, || format!("{k} = {:?}", field(i.jdl(), k)))?;
    }
    check(i.jdl().len() == 7, || format!("inner has {} entries", i.jdl().len()))?;
    check(
        field(e.jdl(), keys::PILOT_IDENTIFIER) == ["FpK0bE9P[...]Jq1zNx"],
        || "PilotIdentifier".into(),
    )?;
    let w = Window::new(LISTING_NB, LISTING_NA).unwrap();
    check(e.window() == w && i.window() == w, || "windows".into())?;
    let report = verify_envelope(&e, &trust, LISTING_NB);
    check(report.is_valid(), || format!("not VALID:\n{report}"))?;
    check(!verify_envelope(&e, &trust, LISTING_NA).is_valid(), || {
        "VALID at not_after".into()
    })?;

    let canonical = serialize_envelope(&e);
    check(canonical == serialize_envelope(&outer), || {
        "canonical form differs from signed form".into()
    })?;
    let again = serialize_envelope(&parse_envelope(&canonical).map_err(|e| e.to_string())?);
    check(again == canonical, || "round trip not byte-exact".into())?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "depth 2, fields exact, VALID, byte-exact round trip in {elapsed:.2?}"
    ))
}

// ---- 2 -------------------------------------------------------------------

fn gamma_pc_semantics() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let all: BTreeSet<Privilege> = Privilege::ALL.into_iter().collect();
    for n in 0..10_000 {
        let issued = rng.gen_range(-1_000_000i64..2_000_000_000);
        let len = rng.gen_range(1i64..10_000_000);
        let expires = issued + len;
        let t = match n % 4 {
            0 => rng.gen_range(issued - 1000..expires + 1000),
            1 => issued + rng.gen_range(-2..=2),
            2 => expires + rng.gen_range(-2..=2),
            _ => rng.gen_range(i64::MIN / 2..i64::MAX / 2),
        };
        let k = rng.gen_range(1..=all.len());
        let privs: BTreeSet<Privilege> = Privilege::ALL.choose_multiple(&mut rng, k).copied().collect();
        let pc = ProxyCredential::new("u", n, issued, expires, privs.clone()).unwrap();
        let inside = issued <= t && t < expires;
        let got = gamma_pc(&pc, t);
        let want = if inside { privs } else { BTreeSet::new() };
        check(got == want, || format!("window [{issued}, {expires}) t={t}: {got:?}"))?;
    }
    let pc = ProxyCredential::new("u", 0, 100, 200, all.clone()).unwrap();
    check(gamma_pc(&pc, 100) == all, || "t = t_issued denied".into())?;
    check(gamma_pc(&pc, 200).is_empty(), || "t = t_expires granted".into())?;
    check(gamma_pc(&pc, 99).is_empty() && gamma_pc(&pc, 199) == all, || {
        "neighbours".into()
    })?;
    Ok("10000 triples agree; t_issued grants, t_expires denies".into())
}

// ---- 3, 4 shared ---------------------------------------------------------

fn word(rng: &mut ChaCha20Rng) -> String {
    let len = rng.gen_range(1..12);
    (0..len)
        .map(|_| *b"abcdefghijklmnopqrstuvwxyz0123456789_-.".choose(rng).unwrap() as char)
        .collect()
}

fn random_jdl(rng: &mut ChaCha20Rng, broker: &str) -> Jdl {
    let mut j = Jdl::new();
    j.insert(keys::EXECUTABLE, vec![format!("/bin/{}", word(rng))]).unwrap();
    let lists = [
        (keys::ARGUMENTS, "", 4),
        (keys::INPUT_FILE, "/grid/testuser/", 4),
        (keys::OUTPUT, "", 3),
    ];
    for (k, prefix, max) in lists {
        let n = rng.gen_range(0..=max);
        if n > 0 {
            j.insert(k, (0..n).map(|_| format!("{prefix}{}", word(rng))).collect())
                .unwrap();
        }
    }
    if rng.gen_bool(0.3) {
        j.insert("Requirements", vec![word(rng)]).unwrap();
    }
    j.insert(keys::USER, vec!["testuser".into()]).unwrap();
    j.insert(keys::BROKER, vec![broker.into()]).unwrap();
    j.seal(false);
    j
}

struct Parties {
    trust: TrustStore,
    user: certgrid::crypto::Credential,
    brokers: Vec<certgrid::crypto::Credential>,
    certs: Vec<Certificate>,
}

fn parties() -> Parties {
    let user = credential("testuser", Role::User);
    let brokers: Vec<_> = ["b0", "b1", "b2"].iter().map(|b| credential(b, Role::Broker)).collect();
    let mut certs = vec![user.certificate.clone()];
    certs.extend(brokers.iter().map(|b| b.certificate.clone()));
    Parties {
        trust: trust(),
        user,
        brokers,
        certs,
    }
}

const T0: i64 = 1_400_000_000;

// ---- 3 -------------------------------------------------------------------

fn envelope_soundness(p: &Parties) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let now = T0 + 10;
    let mut mutations = 0usize;
    let mut layout = 0usize;
    for n in 0..1000 {
        let jdl = random_jdl(&mut rng, "b0");
        let s1 = phi(&p.user, jdl, "b0", Window::new(T0, T0 + 86_400).unwrap()).map_err(|e| e.to_string())?;
        let s2 = psi(
            &p.brokers[0],
            &s1,
            &[],
            &word(&mut rng),
            Window::new(T0, T0 + 3600).unwrap(),
            &p.trust,
        )
        .map_err(|e| e.to_string())?;
        let text = serialize_envelope(&s2);
        let mut e = parse_envelope(&text).map_err(|e| e.to_string())?;
        e.attach_certificates(&p.certs);
        check(verify_envelope(&e, &p.trust, now).is_valid(), || {
            format!("job {n} not VALID")
        })?;

        let bytes = text.as_bytes();
        let mut positions: Vec<usize> = (0..bytes.len().min(512)).collect();
        if bytes.len() > 512 {
            positions.extend((0..32).map(|_| rng.gen_range(512..bytes.len())));
        }
        for pos in positions {
            let mut m = bytes.to_vec();
            m[pos] = loop {
                let b: u8 = rng.gen();
                if b != bytes[pos] {
                    break b;
                }
            };
            mutations += 1;
            let Ok(t) = String::from_utf8(m) else { continue };
            let Ok(mut e) = parse_envelope(&t) else { continue };
            // Layout between statements is not signed: a mutation that
            // decodes to the same canonical envelope is not a change.
            if serialize_envelope(&e) == text {
                layout += 1;
                continue;
            }
            e.attach_certificates(&p.certs);
            if verify_envelope(&e, &p.trust, now).is_valid() {
                return Err(format!("job {n}: mutation at byte {pos} still VALID"));
            }
        }
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 jobs VALID, {} mutations of signed content all rejected ({layout} layout-only), {elapsed:.1?}",
        mutations - layout
    ))
}

// ---- 4 -------------------------------------------------------------------

type Projection = BTreeSet<(String, Privilege, String)>;

fn mediation_fidelity(p: &Parties) -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let now = T0 + 10;
    let long = Window::new(T0, T0 + 86_400).unwrap();
    let short = Window::new(T0, T0 + 3600).unwrap();
    let err = |e: certgrid::delegation::DelegationError| e.to_string();
    for n in 0..1000 {
        let jdl = random_jdl(&mut rng, "b0");
        let pilot = format!("pilot-{}", word(&mut rng));
        let s1 = phi(&p.user, jdl, "b0", long).map_err(err)?;
        let before = extract_concessions(&s1, &p.trust, now).map_err(err)?;
        check(before.iter().all(|c| c.agent.is_none()), || {
            format!("job {n}: unmediated request names an agent")
        })?;
        let base: Projection = project(&before);

        // delta^k: k relay hops, then assignment at the last broker.
        let mut req: SignedEnvelope = s1.clone();
        for k in 0..=2usize {
            if k > 0 {
                req = rho(&p.brokers[k - 1], &req, &[], &format!("b{k}"), long, &p.trust).map_err(err)?;
                let relayed = extract_concessions(&req, &p.trust, now).map_err(err)?;
                check(project(&relayed) == base, || {
                    format!("job {n}: relay {k} changed the projection")
                })?;
            }
            let s2 = psi(&p.brokers[k], &req, &[], &pilot, short, &p.trust).map_err(err)?;
            let after = extract_concessions(&s2, &p.trust, now).map_err(err)?;
            check(project(&after) == base, || {
                format!("job {n}: delta^{k} changed the projection")
            })?;
            check(after.iter().all(|c| c.agent.as_deref() == Some(pilot.as_str())), || {
                format!("job {n}: delta^{k} concession without the pilot")
            })?;
        }
    }
    Ok(
        "1000 jobs: projections equal before/after assignment and across 0, 1, 2 relays; all mediated to the pilot"
            .into(),
    )
}

// ---- 5 -------------------------------------------------------------------

const CORPUS_SEED: u64 = 7;

fn protocol_objectives() -> Outcome {
    let mut certified = 0;
    let mut baseline = 0;
    for (name, text) in builtin_scenarios() {
        let sc = Scenario::parse(text).map_err(|e| format!("{name}: {e}"))?;
        let o = run_scenario(&sc, CORPUS_SEED);
        let problems = o.unexpected();
        check(problems.is_empty(), || format!("{name}: {}", problems.join("; ")))?;
        let violated: Vec<u8> = o
            .verdicts
            .iter()
            .filter(|(_, v)| **v == Verdict::Violated)
            .map(|(n, _)| *n)
            .collect();
        if sc.model == Model::Certified {
            certified += 1;
            for n in [1, 2, 3, 4, 7, 9] {
                check(o.verdict(n) == Verdict::Held, || {
                    format!("{name}: objective {n} is {}", o.verdict(n))
                })?;
            }
            check(violated.is_empty(), || format!("{name}: violations {violated:?}"))?;
        } else {
            baseline += 1;
            check(name.starts_with("PROXY_BASELINE"), || {
                format!("{name}: baseline model outside the baseline set")
            })?;
            check(!violated.is_empty(), || format!("{name}: baseline showed no violation"))?;
            check(o.verdict(7) == Verdict::Violated, || {
                format!("{name}: credential abuse not observed")
            })?;
        }
    }
    check(baseline == 2, || format!("{baseline} baseline scenarios"))?;
    Ok(format!(
        "{certified} certified scenarios all HELD, {baseline} baseline scenarios with only expected violations"
    ))
}

// ---- 6 -------------------------------------------------------------------

fn token_lifecycle() -> Outcome {
    let base = Scenario::parse(builtin_scenario("REPLAY_AFTER_DONE").unwrap()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for n in 0..100 {
        let mut sc = base.clone();
        sc.latency = rng.gen_range(0..5);
        sc.jobs[0].runtime = rng.gen_range(1..400);
        let delay = rng.gen_range(0..5000);
        // Sometimes trigger on the finalization message, sometimes on the
        // pilot's next request that follows it.
        let after = if rng.gen_bool(0.5) {
            Trigger::Kind("FINALIZE".into(), 1)
        } else {
            Trigger::Kind("JOB_REQUEST".into(), 2)
        };
        for rule in &mut sc.adversary {
            if let AdversaryAction::Replay { delay: d, after: a, .. } = &mut rule.action {
                *d = delay;
                *a = Some(after.clone());
            }
        }
        let o = run_scenario(&sc, CORPUS_SEED);
        let label = || {
            format!(
                "timing {n} (latency {}, runtime {}, {after} +{delay})",
                sc.latency, sc.jobs[0].runtime
            )
        };
        let recs = o.log.records();
        let finalized = recs
            .iter()
            .find(|r| r.event == "FINALIZE")
            .map(|r| r.time)
            .ok_or_else(|| format!("{}: never finalized", label()))?;
        let armed = recs.iter().any(|r| r.event == "REPLAY_ARMED");
        check(armed, || format!("{}: replay never armed", label()))?;
        let after_fin: Vec<_> = recs
            .iter()
            .filter(|r| {
                r.actor.starts_with("ja:") && r.time >= finalized && (r.event == "EXECUTE" || r.event == "REFUSE")
            })
            .collect();
        check(after_fin.iter().any(|r| r.event == "REFUSE"), || {
            format!("{}: replay not presented after finalize", label())
        })?;
        check(after_fin.iter().all(|r| r.event == "REFUSE"), || {
            format!("{}: executed after finalize", label())
        })?;
        check(o.executions == 1, || {
            format!("{}: {} executions", label(), o.executions)
        })?;
        check(o.unexpected().is_empty(), || {
            format!("{}: {:?}", label(), o.unexpected())
        })?;
    }
    Ok("100 replay timings, every post-finalize presentation refused".into())
}

// ---- 7 -------------------------------------------------------------------

fn forensics() -> Outcome {
    let o = run_scenario(
        &Scenario::parse(builtin_scenario("CATALOGUE_FORENSICS").unwrap()).map_err(|e| e.to_string())?,
        CORPUS_SEED,
    );
    check(o.unexpected().is_empty(), || o.unexpected().join("; "))?;
    let path = "/grid/testuser/in.dat";
    check(o.catalogue.entry(path).is_some_and(|e| !e.live), || {
        "input was not deleted".into()
    })?;
    check(o.catalogue.shadows().iter().any(|s| s.path == path), || {
        "no shadow record".into()
    })?;
    let own: Vec<_> = o.forensics.iter().filter(|f| f.job == "own").collect();
    check(own.len() == 3, || {
        format!("{} incidents on the deleted input", own.len())
    })?;
    let v = |i: usize| own[i].result.as_ref().map_err(|e| e.to_string());
    let inside = v(0)?;
    check(
        inside.accountable == Accountable::Yes && inside.origin == Origin::InternalI,
        || format!("inside horizon: {inside}"),
    )?;
    let untrusted = v(1)?;
    check(
        !matches!(untrusted.accountable, Accountable::Yes | Accountable::No),
        || format!("untrusted catalogue: {untrusted}"),
    )?;
    let beyond = v(2)?;
    check(beyond.accountable == Accountable::Indeterminate, || {
        format!("beyond horizon: {beyond}")
    })?;
    Ok("YES inside horizon via shadow, INDETERMINATE beyond, untrusted catalogue gives neither".into())
}

// ---- 8 -------------------------------------------------------------------

fn determinism() -> Outcome {
    for (name, text) in builtin_scenarios() {
        let sc = Scenario::parse(text).map_err(|e| e.to_string())?;
        for seed in [CORPUS_SEED, 99] {
            let a = run_scenario(&sc, seed);
            let b = run_scenario(&sc, seed);
            check(a.log.to_tsv() == b.log.to_tsv(), || {
                format!("{name} seed {seed}: event logs differ")
            })?;
            check(a.events == b.events, || {
                format!("{name} seed {seed}: wire traces differ")
            })?;
            check(a.verdicts_text() == b.verdicts_text(), || {
                format!("{name} seed {seed}: verdicts differ")
            })?;
        }
    }
    Ok("every builtin scenario byte-identical across reruns (2 seeds)".into())
}

// ---- 9 -------------------------------------------------------------------

fn ledger_integrity() -> Outcome {
    let o = run_scenario(
        &Scenario::parse(builtin_scenario("PILOT_TOKEN_THEFT").unwrap()).map_err(|e| e.to_string())?,
        CORPUS_SEED,
    );
    let mut ledgers: Vec<Ledger> = o.ledgers.values().cloned().collect();
    let mut synthetic = Ledger::new();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for i in 0..200 {
        let kind = [
            RecordKind::Submission,
            RecordKind::Countersign,
            RecordKind::SiteLog,
            RecordKind::Finalize,
        ][i % 4];
        synthetic.append(kind, T0 + i as i64, format!("job-{i:04}"), word(&mut rng));
    }
    ledgers.push(synthetic);
    let mut checked = 0;
    for l in &ledgers {
        check(ledger_verify(l), || "pristine ledger fails".into())?;
        for i in 0..l.len() {
            for field in 0..7 {
                let mut m = l.clone();
                let r = &mut m.records_mut()[i];
                match field {
                    0 => r.body.push('x'),
                    1 => r.time += 1,
                    2 => r.subject.push('x'),
                    3 => r.id += 1,
                    4 => r.prev_hash[rng.gen_range(0..48)] ^= 1,
                    5 => r.hash[rng.gen_range(0..48)] ^= 1,
                    _ => {
                        r.kind = if r.kind == RecordKind::Finalize {
                            RecordKind::SiteLog
                        } else {
                            RecordKind::Finalize
                        }
                    }
                }
                checked += 1;
                check(!ledger_verify(&m), || {
                    format!("record {i} field {field} mutated, ledger still verifies")
                })?;
            }
        }
    }
    Ok(format!(
        "{checked} single-record mutations over {} ledgers all detected",
        ledgers.len()
    ))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let parties = parties();
    let criteria: Vec<Criterion<'_>> = vec![
        ("1 wire-format conformance", Box::new(listing_conformance)),
        ("2 gamma_pc semantics", Box::new(gamma_pc_semantics)),
        ("3 envelope soundness", Box::new(|| envelope_soundness(&parties))),
        ("4 mediation fidelity", Box::new(|| mediation_fidelity(&parties))),
        ("5 protocol objectives", Box::new(protocol_objectives)),
        ("6 token lifecycle", Box::new(token_lifecycle)),
        ("7 forensics", Box::new(forensics)),
        ("8 determinism", Box::new(determinism)),
        ("9 ledger integrity", Box::new(ledger_integrity)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        match f() {
            Ok(detail) => println!("criterion {name}: PASS ({detail}) [{:.1?}]", t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why}) [{:.1?}]", t.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
