use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

mod common;

const NB: &str = "1312392035";
const NA: &str = "1313601635";
const NOW: &str = "1312393000";

fn certgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_certgrid"))
        .args(args)
        .output()
        .expect("spawn certgrid")
}

fn ok(args: &[&str]) -> String {
    let o = certgrid(args);
    assert!(
        o.status.success(),
        "certgrid {args:?} exited {:?}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// A CA plus a certified user and broker, written as files.
struct Pki {
    dir: TempDir,
}

impl Pki {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        #[rustfmt::skip]
        ok(&["ca", "init", "--subject", "CN=Test CA", "--seed", "11", "--bits", "2048",
            "--not-before", "1000000000", "--not-after", "2000000000",
            "--key-out", &p(d, "ca.key"), "--cert-out", &p(d, "ca.pem")]);
        for (cn, role, seed) in [("testuser", "user", "12"), ("myVO", "broker", "13")] {
            #[rustfmt::skip]
            ok(&["keygen", "--subject", &format!("CN={cn}"), "--role", role, "--seed", seed,
                "--bits", "2048", "-o", &p(d, &format!("{cn}.key"))]);
            #[rustfmt::skip]
            ok(&["ca", "issue", "--ca-key", &p(d, "ca.key"), "--subject-key", &p(d, &format!("{cn}.key")),
                "--not-before", "1000000000", "--not-after", "2000000000", "-o", &p(d, &format!("{cn}.pem"))]);
        }
        fs::write(
            d.join("job.jdl"),
            "Executable = {\"cat\"};\nArguments = {\"myInputFile\"};\nInputFile = {\"/catalogue/data/myInputFile\"};\n\
             Output = {\"stdout\",\"stderr\"};\nUser = {\"testuser\"};\nBroker = {\"myVO\"};\n",
        )
        .unwrap();
        Pki { dir }
    }

    fn path(&self, name: &str) -> String {
        p(self.dir.path(), name)
    }

    fn signed_and_countersigned(&self) -> PathBuf {
        #[rustfmt::skip]
        ok(&["sign", "--key", &self.path("testuser.key"), "--cert", &self.path("testuser.pem"),
            "--jdl", &self.path("job.jdl"), "--not-before", NB, "--not-after", NA, "-o", &self.path("s1.sjdl")]);
        #[rustfmt::skip]
        ok(&["countersign", "--key", &self.path("myVO.key"), "--cert", &self.path("myVO.pem"),
            "--in", &self.path("s1.sjdl"), "--pilot-id", "pilot-1", "--not-before", NB, "--not-after", "1312395635",
            "--trust", &self.path("ca.pem"), "-o", &self.path("s2.sjdl")]);
        self.dir.path().join("s2.sjdl")
    }
}

#[test]
fn sign_countersign_verify_round_trip() {
    let pki = Pki::new();
    let s2 = pki.signed_and_countersigned();
    let s2 = s2.to_str().unwrap();

    let report = ok(&["verify", "--in", s2, "--trust", &pki.path("ca.pem"), "--now", NOW]);
    assert!(report.contains("VALID"), "{report}");
    assert_eq!(report.matches("layer").count(), 2, "{report}");

    let shown = ok(&["inspect", "--in", s2]);
    assert!(shown.contains("PilotIdentifier = pilot-1"), "{shown}");
    assert!(shown.contains("CN=myVO (BROKER)"), "{shown}");

    let set = ok(&["concessions", "--in", s2, "--trust", &pki.path("ca.pem"), "--now", NOW]);
    assert!(set.lines().any(|l| l.contains("/catalogue/data/myInputFile")), "{set}");

    // After the countersignature window closes the same bytes fail.
    let late = certgrid(&[
        "verify",
        "--in",
        s2,
        "--trust",
        &pki.path("ca.pem"),
        "--now",
        "1312395635",
    ]);
    assert_eq!(late.status.code(), Some(1));
}

#[test]
fn relay_then_countersign() {
    let pki = Pki::new();
    let d = pki.dir.path();
    #[rustfmt::skip]
    ok(&["keygen", "--subject", "CN=backVO", "--role", "broker", "--seed", "14", "--bits", "2048", "-o", &p(d, "backVO.key")]);
    #[rustfmt::skip]
    ok(&["ca", "issue", "--ca-key", &pki.path("ca.key"), "--subject-key", &p(d, "backVO.key"),
        "--not-before", "1000000000", "--not-after", "2000000000", "-o", &p(d, "backVO.pem")]);
    #[rustfmt::skip]
    ok(&["sign", "--key", &pki.path("testuser.key"), "--cert", &pki.path("testuser.pem"),
        "--jdl", &pki.path("job.jdl"), "--not-before", NB, "--not-after", NA, "-o", &pki.path("s1.sjdl")]);
    #[rustfmt::skip]
    ok(&["relay", "--key", &pki.path("myVO.key"), "--cert", &pki.path("myVO.pem"), "--in", &pki.path("s1.sjdl"),
        "--to", "backVO", "--not-before", NB, "--not-after", NA, "--trust", &pki.path("ca.pem"), "-o", &pki.path("r.sjdl")]);
    #[rustfmt::skip]
    ok(&["countersign", "--key", &p(d, "backVO.key"), "--cert", &p(d, "backVO.pem"), "--in", &pki.path("r.sjdl"),
        "--pilot-id", "pilot-9", "--not-before", NB, "--not-after", "1312395635", "--trust", &pki.path("ca.pem"),
        "-o", &pki.path("s3.sjdl")]);
    let report = ok(&[
        "verify",
        "--in",
        &pki.path("s3.sjdl"),
        "--trust",
        &pki.path("ca.pem"),
        "--now",
        NOW,
    ]);
    assert_eq!(report.matches("layer").count(), 3, "{report}");

    // The wrong broker cannot countersign a request relayed to someone else.
    #[rustfmt::skip]
    let o = certgrid(&["countersign", "--key", &pki.path("myVO.key"), "--cert", &pki.path("myVO.pem"),
        "--in", &pki.path("r.sjdl"), "--pilot-id", "p", "--not-before", NB, "--not-after", "1312395635",
        "--trust", &pki.path("ca.pem")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tampered_envelope_fails_verification() {
    let pki = Pki::new();
    let s2 = pki.signed_and_countersigned();
    let text = fs::read_to_string(&s2).unwrap().replacen("\"cat\"", "\"dog\"", 1);
    fs::write(&s2, text).unwrap();
    let o = certgrid(&[
        "verify",
        "--in",
        s2.to_str().unwrap(),
        "--trust",
        &pki.path("ca.pem"),
        "--now",
        NOW,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("INVALID"));
}

#[test]
fn reference_listing_is_rejected() {
    // The listing's signatures are elided, so it parses but cannot verify.
    let dir = TempDir::new().unwrap();
    let listing = dir.path().join("listing.sjdl");
    fs::write(&listing, common::LISTING).unwrap();
    fs::write(dir.path().join("ca.pem"), common::trust().roots()[0].to_pem()).unwrap();
    let o = certgrid(&[
        "verify",
        "--in",
        listing.to_str().unwrap(),
        "--trust",
        &p(dir.path(), "ca.pem"),
        "--now",
        NOW,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let shown = ok(&["inspect", "--in", listing.to_str().unwrap()]);
    assert!(shown.contains("HashOrd = SJDL-PilotIdentifier"), "{shown}");
}

#[test]
fn usage_errors() {
    assert_eq!(certgrid(&["sign"]).status.code(), Some(2));
    assert_eq!(certgrid(&["simulate", "NO_SUCH_SCENARIO"]).status.code(), Some(2));
    let pki = Pki::new();
    // A key and certificate that do not belong together.
    #[rustfmt::skip]
    let o = certgrid(&["sign", "--key", &pki.path("myVO.key"), "--cert", &pki.path("testuser.pem"),
        "--jdl", &pki.path("job.jdl"), "--not-before", NB, "--not-after", NA]);
    assert_eq!(o.status.code(), Some(2));
    // An empty window.
    #[rustfmt::skip]
    let o = certgrid(&["sign", "--key", &pki.path("testuser.key"), "--cert", &pki.path("testuser.pem"),
        "--jdl", &pki.path("job.jdl"), "--not-before", NA, "--not-after", NB]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_writes_artifacts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let v = ok(&[
            "simulate",
            "happy_path",
            "--seed",
            "7",
            "--out-dir",
            d.path().to_str().unwrap(),
        ]);
        assert!(v.contains("result\tPASS"), "{v}");
    }
    for f in [
        "events.tsv",
        "wire.tsv",
        "verdicts.txt",
        "catalogue.tsv",
        "ledgers/myVO.tsv",
    ] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs between runs");
    }
}

#[test]
fn audit_commands_on_simulator_output() {
    let d = TempDir::new().unwrap();
    let dir = d.path();
    ok(&[
        "simulate",
        "catalogue_forensics",
        "--seed",
        "3",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    let ledger = p(dir, "ledgers/myVO.tsv");
    assert!(ok(&["audit", "verify", &ledger]).contains("INTACT"));

    let text = fs::read_to_string(&ledger).unwrap();
    let job = text
        .lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|f| f[1] == "SUBMISSION")
        .map(|f| f[3].to_string())
        .expect("a submission in the ledger");
    let sum = certgrid::actors::checksum(b"alpha\n");
    #[rustfmt::skip]
    let args = ["audit", "classify", "--ledger", &ledger, "--catalogue", &p(dir, "catalogue.tsv"),
        "--trust", &p(dir, "trust.pem"), "--job", &job, "--artifact", &sum, "--at", "1312394035"];
    let v = ok(&args);
    assert!(v.contains("INTERNAL_I"), "{v}");

    let mut untrusted = args.to_vec();
    untrusted.push("--untrusted-catalogue");
    assert!(ok(&untrusted).contains("INDETERMINATE"));

    // Flip one character inside a record and the chain no longer holds.
    let i = text.find("SUBMISSION").unwrap();
    let mut bytes = text.into_bytes();
    bytes[i] = b'X';
    fs::write(&ledger, bytes).unwrap();
    let o = certgrid(&["audit", "verify", &ledger]);
    assert_ne!(o.status.code(), Some(0));
}
