//! Full verification of nested envelopes.

use std::fmt;

use super::cert::{ChainError, TrustStore};
use super::envelope::{Signature, SignedEnvelope};
use super::identity::Role;
use super::wire::{parse_bundle, MAX_DEPTH};
use crate::time::{Epoch, TimeStatus, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureStatus {
    Valid,
    Invalid,
    NoCertificate,
}

/// Whether the layer was signed by the party the layers beneath it name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BindingStatus {
    Bound,
    Mismatch {
        expected: Option<(String, Role)>,
        actual: (String, Role),
    },
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerReport {
    /// 1 is the innermost, user-signed layer.
    pub layer: usize,
    pub window: Window,
    pub signer: Option<String>,
    pub signature: SignatureStatus,
    pub time: TimeStatus,
    pub chain: Result<(), ChainError>,
    pub binding: BindingStatus,
    pub unprotected: Vec<String>,
}

impl LayerReport {
    pub fn passed(&self) -> bool {
        self.signature == SignatureStatus::Valid
            && self.time == TimeStatus::Valid
            && self.chain.is_ok()
            && self.binding == BindingStatus::Bound
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    BadSignature(usize),
    Expired(usize),
    NotYetValid(usize),
    BrokenChain(usize),
    SignerMismatch(usize),
    Malformed(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::BadSignature(l) => write!(f, "BadSignature(layer {l})"),
            Failure::Expired(l) => write!(f, "Expired(layer {l})"),
            Failure::NotYetValid(l) => write!(f, "NotYetValid(layer {l})"),
            Failure::BrokenChain(l) => write!(f, "BrokenChain(layer {l})"),
            Failure::SignerMismatch(l) => write!(f, "SignerMismatch(layer {l})"),
            Failure::Malformed(why) => write!(f, "MalformedEnvelope({why})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub now: Epoch,
    pub layers: Vec<LayerReport>,
    pub malformed: Option<String>,
}

impl VerificationReport {
    pub fn malformed(now: Epoch, reason: impl Into<String>) -> Self {
        VerificationReport {
            now,
            layers: Vec::new(),
            malformed: Some(reason.into()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.malformed.is_none() && !self.layers.is_empty() && self.layers.iter().all(LayerReport::passed)
    }

    /// Failures in layer order, innermost first.
    pub fn failures(&self) -> Vec<Failure> {
        let mut out = Vec::new();
        if let Some(why) = &self.malformed {
            out.push(Failure::Malformed(why.clone()));
        }
        for l in &self.layers {
            match l.signature {
                SignatureStatus::Valid => {}
                SignatureStatus::Invalid => out.push(Failure::BadSignature(l.layer)),
                SignatureStatus::NoCertificate => out.push(Failure::BrokenChain(l.layer)),
            }
            match l.time {
                TimeStatus::Valid => {}
                TimeStatus::Expired => out.push(Failure::Expired(l.layer)),
                TimeStatus::NotYetValid => out.push(Failure::NotYetValid(l.layer)),
            }
            if l.chain.is_err() && l.signature != SignatureStatus::NoCertificate {
                out.push(Failure::BrokenChain(l.layer));
            }
            if matches!(l.binding, BindingStatus::Mismatch { .. }) {
                out.push(Failure::SignerMismatch(l.layer));
            }
        }
        out
    }

    /// Unprotected keys per layer, innermost first.
    pub fn unprotected_keys(&self) -> Vec<(usize, &str)> {
        self.layers
            .iter()
            .flat_map(|l| l.unprotected.iter().map(move |k| (l.layer, k.as_str())))
            .collect()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verdict: {}", if self.is_valid() { "VALID" } else { "INVALID" })?;
        writeln!(f, "now: {}", self.now)?;
        if let Some(why) = &self.malformed {
            writeln!(f, "malformed: {why}")?;
        }
        for l in &self.layers {
            let sig = match l.signature {
                SignatureStatus::Valid => "ok",
                SignatureStatus::Invalid => "BAD",
                SignatureStatus::NoCertificate => "no certificate",
            };
            let chain = match &l.chain {
                Ok(()) => "ok".to_string(),
                Err(e) => e.to_string(),
            };
            let binding = match &l.binding {
                BindingStatus::Bound => "ok".to_string(),
                BindingStatus::Unchecked => "unchecked".to_string(),
                BindingStatus::Mismatch { expected, actual } => match expected {
                    Some((n, r)) => format!("expected {n} ({r}), signed by {} ({})", actual.0, actual.1),
                    None => format!("no signer named, signed by {} ({})", actual.0, actual.1),
                },
            };
            writeln!(
                f,
                "layer {}: signer={} window={} time={} signature={} chain={} binding={}",
                l.layer,
                l.signer.as_deref().unwrap_or("-"),
                l.window,
                l.time,
                sig,
                chain,
                binding
            )?;
            if !l.unprotected.is_empty() {
                writeln!(f, "layer {}: unprotected keys: {}", l.layer, l.unprotected.join(", "))?;
            }
        }
        for fail in self.failures() {
            writeln!(f, "failure: {fail}")?;
        }
        Ok(())
    }
}

/// Checks every layer's signature, time window, certificate chain and
/// signer binding at `now`. Bad input yields a failing report, never an
/// error.
pub fn verify_envelope(e: &SignedEnvelope, trust: &TrustStore, now: Epoch) -> VerificationReport {
    if e.depth() > MAX_DEPTH {
        return VerificationReport::malformed(now, format!("nesting deeper than {MAX_DEPTH}"));
    }
    let expected = e.expected_signers();
    let layers = e
        .layers()
        .into_iter()
        .zip(expected)
        .enumerate()
        .map(|(i, (layer, expected))| verify_layer(i + 1, layer, expected, trust, now))
        .collect();
    VerificationReport {
        now,
        layers,
        malformed: None,
    }
}

/// Parses a bundle and verifies it; a parse error becomes a malformed report.
pub fn verify_text(text: &str, trust: &TrustStore, now: Epoch) -> VerificationReport {
    match parse_bundle(text) {
        Ok(e) => verify_envelope(&e, trust, now),
        Err(err) => VerificationReport::malformed(now, err.to_string()),
    }
}

fn verify_layer(
    index: usize,
    layer: &SignedEnvelope,
    expected: Option<(String, Role)>,
    trust: &TrustStore,
    now: Epoch,
) -> LayerReport {
    let cert = layer.signer_certificate();
    let signature = match (cert, layer.signature(), layer.signed_message()) {
        (None, _, _) => SignatureStatus::NoCertificate,
        (Some(c), Signature::Bytes(sig), Ok(msg)) if c.public_key().verify(&msg, sig) => SignatureStatus::Valid,
        _ => SignatureStatus::Invalid,
    };
    let chain = match cert {
        Some(c) => trust.verify_chain(c, now),
        None => Err(ChainError::UntrustedIssuer("-".into())),
    };
    let binding = match cert {
        None => BindingStatus::Unchecked,
        Some(c) => {
            let actual = (c.common_name().to_string(), c.role());
            if expected.as_ref() == Some(&actual) {
                BindingStatus::Bound
            } else {
                BindingStatus::Mismatch { expected, actual }
            }
        }
    };
    LayerReport {
        layer: index,
        window: layer.window(),
        signer: cert.map(|c| c.subject().to_string()),
        signature,
        time: layer.window().status(now),
        chain,
        binding,
        unprotected: layer.jdl().unprotected_keys().into_iter().map(String::from).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::testkeys;
    use crate::crypto::{bundle_to_text, parse_bundle, parse_envelope};
    use crate::crypto::{issue_certificate, sign_envelope, Credential, Payload};
    use crate::jdl::Jdl;

    const NB: Epoch = 1312392035;
    const NA: Epoch = 1313601635;

    struct Fixture {
        trust: TrustStore,
        user: Credential,
        broker: Credential,
    }

    fn fixture() -> Fixture {
        let ca = testkeys::ca();
        let root = issue_certificate(&ca, &ca, 0, 2_000_000_000).unwrap();
        let cred = |subject: &str, role| {
            let id = testkeys::identity(subject, role);
            let cert = issue_certificate(&ca, &id, 0, 2_000_000_000).unwrap();
            Credential::new(id, cert)
        };
        Fixture {
            trust: TrustStore::new([root]),
            user: cred("CN=testuser", Role::User),
            broker: cred("CN=myVO", Role::Broker),
        }
    }

    fn inner_jdl() -> Jdl {
        r#"Executable = {"cat"};
           Arguments = {"myInputFile"};
           InputFile = {"/catalogue/data/myInputFile"};
           Output = {"stdout","stderr"};
           User = {"testuser"};
           Broker = {"myVO"};
           HashOrd = "Executable-Arguments-InputFile-Output-User-Broker";"#
            .parse()
            .unwrap()
    }

    fn s2jdl(f: &Fixture) -> SignedEnvelope {
        let inner = sign_envelope(&f.user, Payload::plain(inner_jdl()), NB, NA).unwrap();
        let outer: Jdl = r#"PilotIdentifier = {"FpK0bE9PJq1zNx"}; HashOrd = "SJDL-PilotIdentifier";"#
            .parse()
            .unwrap();
        sign_envelope(&f.broker, Payload::wrapping(inner, outer), NB, NA).unwrap()
    }

    #[test]
    fn signed_then_verified_is_valid() {
        let f = fixture();
        let e = s2jdl(&f);
        let r = verify_envelope(&e, &f.trust, NB + 10);
        assert!(r.is_valid(), "{r}");
        assert_eq!(r.layers.len(), 2);
    }

    #[test]
    fn window_bounds_are_half_open() {
        let f = fixture();
        let e = s2jdl(&f);
        assert!(verify_envelope(&e, &f.trust, NB).is_valid());
        let r = verify_envelope(&e, &f.trust, NA);
        assert!(r.failures().contains(&Failure::Expired(2)));
        assert!(verify_envelope(&e, &f.trust, NB - 1)
            .failures()
            .contains(&Failure::NotYetValid(2)));
    }

    #[test]
    fn inner_byte_flip_breaks_inner_signature() {
        let f = fixture();
        let e = s2jdl(&f);
        let text = bundle_to_text(&e).replacen("\"cat\"", "\"cau\"", 1);
        let tampered = parse_bundle(&text).unwrap();
        let fails = verify_envelope(&tampered, &f.trust, NB + 1).failures();
        assert!(fails.contains(&Failure::BadSignature(1)));
        // The broker signed the original inner bytes, so it fails too.
        assert!(fails.contains(&Failure::BadSignature(2)));
    }

    #[test]
    fn removing_ca_breaks_chain() {
        let mut f = fixture();
        let e = s2jdl(&f);
        f.trust.remove("CN=Grid CA");
        let fails = verify_envelope(&e, &f.trust, NB + 1).failures();
        assert_eq!(fails, vec![Failure::BrokenChain(1), Failure::BrokenChain(2)]);
    }

    #[test]
    fn outer_signed_by_wrong_party_is_mismatch() {
        let f = fixture();
        let inner = sign_envelope(&f.user, Payload::plain(inner_jdl()), NB, NA).unwrap();
        let outer: Jdl = r#"PilotIdentifier = {"x"}; HashOrd = "SJDL-PilotIdentifier";"#.parse().unwrap();
        // The user countersigns their own job instead of the broker.
        let e = sign_envelope(&f.user, Payload::wrapping(inner, outer), NB, NA).unwrap();
        let fails = verify_envelope(&e, &f.trust, NB + 1).failures();
        assert_eq!(fails, vec![Failure::SignerMismatch(2)]);
    }

    #[test]
    fn bundle_round_trip_keeps_certificates() {
        let f = fixture();
        let e = s2jdl(&f);
        let back = parse_bundle(&bundle_to_text(&e)).unwrap();
        assert_eq!(back, e);
        assert!(verify_text(&bundle_to_text(&e), &f.trust, NB + 1).is_valid());
    }

    #[test]
    fn missing_certificate_reported() {
        let f = fixture();
        let e = parse_envelope(&s2jdl(&f).to_wire()).unwrap();
        let r = verify_envelope(&e, &f.trust, NB + 1);
        assert_eq!(r.layers[0].signature, SignatureStatus::NoCertificate);
        assert!(!r.is_valid());
    }

    #[test]
    fn listing_placeholders_fail_as_bad_signature() {
        let f = fixture();
        let mut e = parse_envelope(testkeys::LISTING).unwrap();
        e.attach_certificates(&[f.user.certificate.clone(), f.broker.certificate.clone()]);
        let fails = verify_envelope(&e, &f.trust, NB + 1).failures();
        assert_eq!(fails, vec![Failure::BadSignature(1), Failure::BadSignature(2)]);
    }

    #[test]
    fn unprotected_keys_listed() {
        let f = fixture();
        let mut jdl = inner_jdl();
        jdl.insert("Comment", vec!["added later".into()]).unwrap();
        let e = sign_envelope(&f.user, Payload::plain(jdl), NB, NA).unwrap();
        let r = verify_envelope(&e, &f.trust, NB);
        assert!(r.is_valid());
        assert_eq!(r.unprotected_keys(), vec![(1, "Comment")]);
    }

    #[test]
    fn malformed_text_is_reported() {
        let f = fixture();
        let r = verify_text("<SJDL><NOTBEFORE>1", &f.trust, 0);
        assert!(matches!(r.failures()[0], Failure::Malformed(_)));
    }
}
