//! Command-line front end. Every subcommand is a thin wrapper over a library
//! call; `main.rs` only forwards the process arguments.
//!
//! Exit codes: 0 success or VALID, 1 verification or verdict failure, 2
//! usage or I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::actors::FileCatalogue;
use crate::audit::{forensic_classify, ledger_verify, Incident, Ledger};
use crate::crypto::{
    bundle_to_text, generate_identity, issue_certificate, parse_bundle, parse_certificates, seeded_identity,
    verify_envelope, Certificate, Credential, Identity, Role, SignedEnvelope, TrustStore,
};
use crate::delegation::{concessions_of, extract_concessions, phi, psi, rho};
use crate::jdl::{parse_jdl, HASH_ORD};
use crate::simnet::{builtin_scenario, builtin_scenarios, run_scenario, Scenario};
use crate::time::{Epoch, Window};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "certgrid",
    version,
    about = "Signed job descriptions, delegation and protocol simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an identity (subject, role, RSA key).
    Keygen {
        #[arg(long)]
        subject: String,
        #[arg(long, default_value = "user")]
        role: Role,
        /// Derive the key from a seed instead of the OS generator.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = crate::crypto::DEFAULT_RSA_BITS)]
        bits: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Certificate authority operations.
    #[command(subcommand)]
    Ca(CaCommand),
    /// Sign a job description as its user.
    Sign {
        #[command(flatten)]
        signer: SignerArgs,
        /// JDL file. A `HashOrd` covering every key is added if absent.
        #[arg(long)]
        jdl: PathBuf,
        /// Broker the request is addressed to; defaults to the JDL's `Broker`.
        #[arg(long)]
        broker: Option<String>,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Countersign a request for one pilot.
    Countersign {
        #[command(flatten)]
        signer: SignerArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pilot_id: String,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        trust: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Countersign a request on to another broker.
    Relay {
        #[command(flatten)]
        signer: SignerArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        to: String,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        trust: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Verify every layer of an envelope.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        trust: PathBuf,
        #[arg(long)]
        now: Epoch,
        /// Extra certificates to attach to layers that carry none.
        #[arg(long)]
        certs: Option<PathBuf>,
    },
    /// Print the layer tree of an envelope.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Dump the concessions an envelope grants.
    Concessions {
        #[arg(long = "in")]
        input: PathBuf,
        /// Verify first and refuse to list anything if invalid.
        #[arg(long, requires = "now")]
        trust: Option<PathBuf>,
        #[arg(long)]
        now: Option<Epoch>,
    },
    /// Run a scenario file or a builtin scenario by name.
    Simulate {
        #[arg(required_unless_present = "list")]
        scenario: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write events.tsv, wire.tsv, verdicts.txt, ledgers, catalogue.tsv
        /// and trust.pem here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// List builtin scenarios and exit.
        #[arg(long)]
        list: bool,
    },
    /// Evidence ledger operations.
    #[command(subcommand)]
    Audit(AuditCommand),
}

#[derive(Debug, Subcommand)]
pub enum CaCommand {
    /// Create a self-signed root.
    Init {
        #[arg(long, default_value = "CN=Grid CA")]
        subject: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = crate::crypto::DEFAULT_RSA_BITS)]
        bits: usize,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        key_out: PathBuf,
        #[arg(long)]
        cert_out: PathBuf,
    },
    /// Certify an identity's public key.
    Issue {
        #[arg(long)]
        ca_key: PathBuf,
        /// Identity file of the subject (only its public half is used).
        #[arg(long)]
        subject_key: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Check a ledger's hash chain.
    Verify { ledger: PathBuf },
    /// Attribute an artifact to its origin.
    Classify {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        catalogue: PathBuf,
        #[arg(long)]
        trust: PathBuf,
        #[arg(long)]
        job: String,
        /// Hex SHA-384 of the artifact.
        #[arg(long)]
        artifact: String,
        #[arg(long)]
        at: Epoch,
        #[arg(long)]
        untrusted_catalogue: bool,
        #[arg(long)]
        node_compromised: bool,
        #[arg(long)]
        package_compromised: bool,
    },
}

#[derive(Debug, Args)]
pub struct SignerArgs {
    /// Identity file of the signer.
    #[arg(long)]
    key: PathBuf,
    /// The signer's certificate.
    #[arg(long)]
    cert: PathBuf,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long)]
    not_before: Epoch,
    #[arg(long)]
    not_after: Epoch,
}

impl WindowArgs {
    fn window(&self) -> Result<Window, Failure> {
        Window::new(self.not_before, self.not_after)
            .ok_or_else(|| Failure::usage(format!("empty window [{}, {})", self.not_before, self.not_after)))
    }
}

/// Why a command stopped, with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(m: impl ToString) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn failed(m: impl ToString) -> Self {
        Failure {
            code: EXIT_FAIL,
            message: m.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write(p, text),
        None => out.write_all(text.as_bytes()).map_err(Failure::usage),
    }
}

fn load_identity(path: &Path) -> Result<Identity, Failure> {
    Identity::from_pem(&read(path)?).map_err(Failure::usage)
}

fn load_credential(s: &SignerArgs) -> Result<Credential, Failure> {
    let identity = load_identity(&s.key)?;
    let cert = Certificate::from_pem(&read(&s.cert)?).map_err(Failure::usage)?;
    if cert.public_key() != &identity.public_key() {
        return Err(Failure::usage("certificate does not match the key"));
    }
    Ok(Credential::new(identity, cert))
}

fn load_trust(path: &Path) -> Result<TrustStore, Failure> {
    let roots = parse_certificates(&read(path)?).map_err(Failure::usage)?;
    if roots.is_empty() {
        return Err(Failure::usage(format!("{}: no certificates", path.display())));
    }
    Ok(TrustStore::new(roots))
}

fn load_envelope(path: &Path) -> Result<SignedEnvelope, Failure> {
    parse_bundle(&read(path)?).map_err(|e| Failure::failed(format!("malformed envelope: {e}")))
}

fn new_identity(subject: &str, role: Role, seed: Option<u64>, bits: usize) -> Result<Identity, Failure> {
    match seed {
        Some(s) => seeded_identity(s, subject, role, bits),
        None if bits == crate::crypto::DEFAULT_RSA_BITS => generate_identity(subject, role),
        None => {
            let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::from_entropy();
            Identity::generate_with_rng(subject, role, bits, &mut rng)
        }
    }
    .map_err(Failure::usage)
}

fn inspect(e: &SignedEnvelope) -> String {
    let mut s = String::new();
    for (i, l) in e.layers().iter().enumerate() {
        let pad = "  ".repeat(i);
        let signer = l
            .signer_certificate()
            .map_or("-".to_string(), |c| format!("{} ({})", c.subject(), c.role()));
        s.push_str(&format!(
            "{pad}layer {}: signer={signer} window={}\n",
            i + 1,
            l.window()
        ));
        for (k, v) in l.jdl().entries() {
            let mark = if k == HASH_ORD || l.jdl().is_protected(k) {
                ""
            } else {
                " (unprotected)"
            };
            s.push_str(&format!("{pad}  {k} = {}{mark}\n", v.join(", ")));
        }
        s.push_str(&format!("{pad}  signature: {}\n", l.signature()));
    }
    s
}

/// Runs one parsed command, writing its normal output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    match cli.command {
        Command::Keygen {
            subject,
            role,
            seed,
            bits,
            out: path,
        } => {
            let id = new_identity(&subject, role, seed, bits)?;
            write(&path, &id.to_pem())?;
            Ok(EXIT_OK)
        }
        Command::Ca(CaCommand::Init {
            subject,
            seed,
            bits,
            window,
            key_out,
            cert_out,
        }) => {
            let w = window.window()?;
            let ca = new_identity(&subject, Role::Ca, seed, bits)?;
            let root = issue_certificate(&ca, &ca, w.not_before, w.not_after).map_err(Failure::usage)?;
            write(&key_out, &ca.to_pem())?;
            write(&cert_out, &root.to_pem())?;
            Ok(EXIT_OK)
        }
        Command::Ca(CaCommand::Issue {
            ca_key,
            subject_key,
            window,
            out: path,
        }) => {
            let w = window.window()?;
            let ca = load_identity(&ca_key)?;
            let subject = load_identity(&subject_key)?;
            let cert = issue_certificate(&ca, &subject, w.not_before, w.not_after).map_err(Failure::usage)?;
            write(&path, &cert.to_pem())?;
            Ok(EXIT_OK)
        }
        Command::Sign {
            signer,
            jdl,
            broker,
            window,
            out: path,
        } => {
            let cred = load_credential(&signer)?;
            let mut jdl = parse_jdl(&read(&jdl)?).map_err(Failure::usage)?;
            if !jdl.contains_key(HASH_ORD) {
                jdl.seal(false);
            }
            let broker = broker
                .or_else(|| jdl.first(crate::jdl::keys::BROKER).map(String::from))
                .ok_or_else(|| Failure::usage("no broker given and the JDL names none"))?;
            let e = phi(&cred, jdl, &broker, window.window()?).map_err(Failure::usage)?;
            emit(out, path.as_deref(), &bundle_to_text(&e))?;
            Ok(EXIT_OK)
        }
        Command::Countersign {
            signer,
            input,
            pilot_id,
            window,
            trust,
            out: path,
        } => {
            let cred = load_credential(&signer)?;
            let e = load_envelope(&input)?;
            let s2 = psi(&cred, &e, &[], &pilot_id, window.window()?, &load_trust(&trust)?).map_err(Failure::failed)?;
            emit(out, path.as_deref(), &bundle_to_text(&s2))?;
            Ok(EXIT_OK)
        }
        Command::Relay {
            signer,
            input,
            to,
            window,
            trust,
            out: path,
        } => {
            let cred = load_credential(&signer)?;
            let e = load_envelope(&input)?;
            let r = rho(&cred, &e, &[], &to, window.window()?, &load_trust(&trust)?).map_err(Failure::failed)?;
            emit(out, path.as_deref(), &bundle_to_text(&r))?;
            Ok(EXIT_OK)
        }
        Command::Verify {
            input,
            trust,
            now,
            certs,
        } => {
            let trust = load_trust(&trust)?;
            let text = read(&input)?;
            let report = match parse_bundle(&text) {
                Ok(mut e) => {
                    if let Some(p) = certs {
                        let pool = parse_certificates(&read(&p)?).map_err(Failure::usage)?;
                        e.attach_certificates(&pool);
                    }
                    verify_envelope(&e, &trust, now)
                }
                Err(err) => crate::crypto::VerificationReport::malformed(now, err.to_string()),
            };
            emit(out, None, &report.to_string())?;
            Ok(if report.is_valid() { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Inspect { input } => {
            let e = load_envelope(&input)?;
            emit(out, None, &inspect(&e))?;
            Ok(EXIT_OK)
        }
        Command::Concessions { input, trust, now } => {
            let e = load_envelope(&input)?;
            let set = match (trust, now) {
                (Some(t), Some(now)) => extract_concessions(&e, &load_trust(&t)?, now).map_err(Failure::failed)?,
                _ => concessions_of(&e),
            };
            let text: String = set.iter().map(|c| c.to_line() + "\n").collect();
            emit(out, None, &text)?;
            Ok(EXIT_OK)
        }
        Command::Simulate {
            scenario,
            seed,
            out_dir,
            list,
        } => {
            if list {
                let names: String = builtin_scenarios().iter().map(|(n, _)| format!("{n}\n")).collect();
                emit(out, None, &names)?;
                return Ok(EXIT_OK);
            }
            let scenario = scenario.unwrap_or_default();
            let text = match builtin_scenario(&scenario) {
                Some(t) if !Path::new(&scenario).exists() => t.to_string(),
                _ => read(Path::new(&scenario))?,
            };
            let sc = Scenario::parse(&text).map_err(Failure::usage)?;
            let outcome = run_scenario(&sc, seed);
            let verdicts = outcome.verdicts_text();
            if let Some(dir) = out_dir {
                let ledgers = dir.join("ledgers");
                fs::create_dir_all(&ledgers).map_err(|e| Failure::usage(format!("{}: {e}", ledgers.display())))?;
                write(&dir.join("events.tsv"), &outcome.log.to_tsv())?;
                write(&dir.join("wire.tsv"), &outcome.events_tsv())?;
                write(&dir.join("verdicts.txt"), &verdicts)?;
                write(&dir.join("catalogue.tsv"), &outcome.catalogue.to_tsv())?;
                write(&dir.join("trust.pem"), &outcome.trust_pem)?;
                for (name, l) in &outcome.ledgers {
                    write(&ledgers.join(format!("{name}.tsv")), &l.to_tsv())?;
                }
            }
            emit(out, None, &verdicts)?;
            Ok(if outcome.unexpected().is_empty() {
                EXIT_OK
            } else {
                EXIT_FAIL
            })
        }
        Command::Audit(AuditCommand::Verify { ledger }) => {
            let l = Ledger::from_tsv(&read(&ledger)?).map_err(Failure::failed)?;
            let ok = ledger_verify(&l);
            emit(
                out,
                None,
                &format!("{} records: {}\n", l.len(), if ok { "INTACT" } else { "BROKEN" }),
            )?;
            Ok(if ok { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Audit(AuditCommand::Classify {
            ledger,
            catalogue,
            trust,
            job,
            artifact,
            at,
            untrusted_catalogue,
            node_compromised,
            package_compromised,
        }) => {
            let l = Ledger::from_tsv(&read(&ledger)?).map_err(Failure::usage)?;
            let cat = FileCatalogue::from_tsv(&read(&catalogue)?).map_err(Failure::usage)?;
            let mut incident = Incident::new(job, artifact, at);
            incident.catalogue_trusted = !untrusted_catalogue;
            incident.node_compromised = node_compromised;
            incident.package_compromised = package_compromised;
            let v = forensic_classify(&incident, &l, &cat, &load_trust(&trust)?).map_err(Failure::failed)?;
            emit(out, None, &v.to_string())?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "certgrid: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["certgrid", "frobnicate"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(
            run(
                [
                    "certgrid",
                    "verify",
                    "--in",
                    "/nonexistent",
                    "--trust",
                    "/nonexistent",
                    "--now",
                    "0"
                ],
                &mut o,
                &mut e
            ),
            EXIT_USAGE
        );
    }

    #[test]
    fn lists_builtins() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["certgrid", "simulate", "--list"], &mut o, &mut e), EXIT_OK);
        assert!(String::from_utf8(o).unwrap().contains("HAPPY_PATH"));
    }
}
