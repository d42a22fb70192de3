//! PEM-like text armour for certificates and identities.
//!
//! ```text
//! -----BEGIN CERTGRID CERTIFICATE-----
//! Subject: CN=testuser
//! Role: USER
//! Algorithm: SHA384withRSA
//! PublicKey: <base64 DER SubjectPublicKeyInfo>
//! NotBefore: 0
//! NotAfter: 1000000000
//! Issuer: CN=Grid CA
//! Signature: <base64>
//! -----END CERTGRID CERTIFICATE-----
//! ```
//!
//! Identities use the `CERTGRID IDENTITY` label with `Subject`, `Role`,
//! `Algorithm` and `PrivateKey` (base64 PKCS#8 DER) fields.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use super::cert::Certificate;
use super::identity::{Identity, Role};
use super::keys::{PrivateKey, PublicKey, SignatureAlgorithm};
use super::CryptoError;
use crate::time::Window;

const CERT_LABEL: &str = "CERTGRID CERTIFICATE";
const IDENTITY_LABEL: &str = "CERTGRID IDENTITY";

fn armour(label: &str, fields: &[(&str, String)]) -> String {
    let mut out = format!("-----BEGIN {label}-----\n");
    for (k, v) in fields {
        out.push_str(&format!("{k}: {v}\n"));
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

type Block = (String, BTreeMap<String, String>);

/// Splits `text` into `(label, fields)` blocks.
fn blocks(text: &str) -> Result<Vec<Block>, CryptoError> {
    let mut out = Vec::new();
    let mut current: Option<Block> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(label) = line.strip_prefix("-----BEGIN ").and_then(|l| l.strip_suffix("-----")) {
            if current.is_some() {
                return Err(CryptoError::Pem(format!("line {}: nested BEGIN", n + 1)));
            }
            current = Some((label.to_string(), BTreeMap::new()));
        } else if let Some(label) = line.strip_prefix("-----END ").and_then(|l| l.strip_suffix("-----")) {
            match current.take() {
                Some((open, fields)) if open == label => out.push((open, fields)),
                _ => return Err(CryptoError::Pem(format!("line {}: unmatched END", n + 1))),
            }
        } else if let Some((_, fields)) = current.as_mut() {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| CryptoError::Pem(format!("line {}: expected `Field: value`", n + 1)))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(CryptoError::Pem(format!("line {}: text outside a block", n + 1)));
        }
    }
    if current.is_some() {
        return Err(CryptoError::Pem("unterminated block".into()));
    }
    Ok(out)
}

fn field<'a>(fields: &'a BTreeMap<String, String>, name: &str) -> Result<&'a str, CryptoError> {
    fields
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| CryptoError::Pem(format!("missing field `{name}`")))
}

fn b64(fields: &BTreeMap<String, String>, name: &str) -> Result<Vec<u8>, CryptoError> {
    B64.decode(field(fields, name)?)
        .map_err(|e| CryptoError::Pem(format!("field `{name}`: {e}")))
}

fn int(fields: &BTreeMap<String, String>, name: &str) -> Result<i64, CryptoError> {
    field(fields, name)?
        .parse()
        .map_err(|_| CryptoError::Pem(format!("field `{name}` is not an integer")))
}

fn algorithm(fields: &BTreeMap<String, String>) -> Result<SignatureAlgorithm, CryptoError> {
    let name = field(fields, "Algorithm")?;
    SignatureAlgorithm::from_name(name).ok_or_else(|| CryptoError::Pem(format!("unsupported algorithm `{name}`")))
}

impl Certificate {
    pub fn to_pem(&self) -> String {
        armour(
            CERT_LABEL,
            &[
                ("Subject", self.subject.clone()),
                ("Role", self.role.to_string()),
                ("Algorithm", self.public_key.algorithm().name().to_string()),
                ("PublicKey", B64.encode(self.public_key.to_der())),
                ("NotBefore", self.validity.not_before.to_string()),
                ("NotAfter", self.validity.not_after.to_string()),
                ("Issuer", self.issuer.clone()),
                ("Signature", B64.encode(&self.signature)),
            ],
        )
    }

    pub fn from_pem(text: &str) -> Result<Self, CryptoError> {
        let mut certs = parse_certificates(text)?;
        match certs.len() {
            1 => Ok(certs.remove(0)),
            n => Err(CryptoError::Pem(format!("expected one certificate, found {n}"))),
        }
    }

    fn from_fields(fields: &BTreeMap<String, String>) -> Result<Self, CryptoError> {
        algorithm(fields)?;
        let validity =
            Window::new(int(fields, "NotBefore")?, int(fields, "NotAfter")?).ok_or(CryptoError::EmptyValidity)?;
        Certificate::from_parts(
            field(fields, "Subject")?.to_string(),
            field(fields, "Role")?.parse()?,
            PublicKey::from_der(&b64(fields, "PublicKey")?)?,
            validity,
            field(fields, "Issuer")?.to_string(),
            b64(fields, "Signature")?,
        )
    }
}

/// Reads every certificate block in `text`, ignoring other block labels.
pub fn parse_certificates(text: &str) -> Result<Vec<Certificate>, CryptoError> {
    blocks(text)?
        .iter()
        .filter(|(label, _)| label == CERT_LABEL)
        .map(|(_, f)| Certificate::from_fields(f))
        .collect()
}

impl Identity {
    pub fn to_pem(&self) -> String {
        armour(
            IDENTITY_LABEL,
            &[
                ("Subject", self.subject().to_string()),
                ("Role", self.role().to_string()),
                ("Algorithm", self.private_key().algorithm().name().to_string()),
                ("PrivateKey", B64.encode(self.private_key().to_pkcs8_der())),
            ],
        )
    }

    pub fn from_pem(text: &str) -> Result<Self, CryptoError> {
        let blocks = blocks(text)?;
        let (_, fields) = blocks
            .iter()
            .find(|(label, _)| label == IDENTITY_LABEL)
            .ok_or_else(|| CryptoError::Pem("no identity block".into()))?;
        algorithm(fields)?;
        let role: Role = field(fields, "Role")?.parse()?;
        let key = PrivateKey::from_pkcs8_der(&b64(fields, "PrivateKey")?)?;
        Identity::from_key(field(fields, "Subject")?, role, key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{issue_certificate, testkeys};

    #[test]
    fn certificate_text_round_trip() {
        let ca = testkeys::ca();
        let user = testkeys::identity("CN=testuser", Role::User);
        let cert = issue_certificate(&ca, &user, 0, 1_000_000_000).unwrap();
        let back = Certificate::from_pem(&cert.to_pem()).unwrap();
        assert_eq!(back, cert);
        assert!(back.verify_signed_by(&ca.public_key()));
    }

    #[test]
    fn identity_text_round_trip() {
        let user = testkeys::identity("CN=testuser", Role::User);
        let back = Identity::from_pem(&user.to_pem()).unwrap();
        assert_eq!(back.subject(), "CN=testuser");
        assert_eq!(back.role(), Role::User);
        assert_eq!(back.public_key(), user.public_key());
    }

    #[test]
    fn malformed_blocks() {
        assert!(Certificate::from_pem("-----BEGIN CERTGRID CERTIFICATE-----\nSubject: x\n").is_err());
        assert!(Certificate::from_pem("garbage").is_err());
        assert!(Certificate::from_pem("").is_err());
    }
}
