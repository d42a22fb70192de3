//! Signed job envelopes.
//!
//! A depth-1 envelope signs a plain JDL. Each further layer wraps the
//! previous envelope together with appended JDL entries whose `HashOrd`
//! names `SJDL`, so the outer signature covers the inner envelope verbatim.
//!
//! The message signed for a layer is
//! `<NOTBEFORE>nb</NOTBEFORE><NOTAFTER>na</NOTAFTER>` followed by the
//! layer's [`hash_input`](crate::jdl::hash_input), which binds the window to
//! the payload.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use sha2::{Digest, Sha384};

use super::cert::Certificate;
use super::identity::{Credential, Role};
use super::wire::serialize_envelope;
use super::CryptoError;
use crate::jdl::keys::{BROKER as BROKER_KEY, USER as USER_KEY};
use crate::jdl::{hash_input, Jdl, JdlError, NESTED_KEY};
use crate::time::{Epoch, Window};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub nested: Option<Box<SignedEnvelope>>,
    pub jdl: Jdl,
}

impl Payload {
    pub fn plain(jdl: Jdl) -> Self {
        Payload { nested: None, jdl }
    }

    pub fn wrapping(inner: SignedEnvelope, appended: Jdl) -> Self {
        Payload {
            nested: Some(Box::new(inner)),
            jdl: appended,
        }
    }
}

/// Signature octets, or the raw text of a `<SIGNATURE>` element that is not
/// valid base64. The latter never verifies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Signature {
    Bytes(Vec<u8>),
    Opaque(String),
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signature::Bytes(b) => f.write_str(&B64.encode(b)),
            Signature::Opaque(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEnvelope {
    pub(crate) window: Window,
    pub(crate) payload: Payload,
    pub(crate) signature: Signature,
    pub(crate) signer_certificate: Option<Certificate>,
}

pub(crate) fn signed_message(window: &Window, jdl: &Jdl, nested: Option<&SignedEnvelope>) -> Result<Vec<u8>, JdlError> {
    let nested_bytes = nested.map(serialize_envelope);
    let body = hash_input(jdl, nested_bytes.as_deref().map(str::as_bytes))?;
    let mut msg = format!(
        "<NOTBEFORE>{}</NOTBEFORE><NOTAFTER>{}</NOTAFTER>",
        window.not_before, window.not_after
    )
    .into_bytes();
    msg.extend_from_slice(body.as_bytes());
    Ok(msg)
}

/// Signs `payload` for the window `[not_before, not_after)` and attaches the
/// signer's certificate.
pub fn sign_envelope(
    signer: &Credential,
    payload: Payload,
    not_before: Epoch,
    not_after: Epoch,
) -> Result<SignedEnvelope, CryptoError> {
    let window = Window::new(not_before, not_after).ok_or(CryptoError::InvalidWindow)?;
    let order = payload.jdl.hash_order()?;
    if payload.nested.is_some() && !order.contains(&NESTED_KEY) {
        return Err(CryptoError::NestedNotCovered);
    }
    payload.jdl.validate_hash_ord(payload.nested.is_some())?;
    let msg = signed_message(&window, &payload.jdl, payload.nested.as_deref())?;
    let signature = Signature::Bytes(signer.identity.sign(&msg));
    Ok(SignedEnvelope {
        window,
        payload,
        signature,
        signer_certificate: Some(signer.certificate.clone()),
    })
}

impl SignedEnvelope {
    pub(crate) fn from_parts(window: Window, payload: Payload, signature: Signature) -> Self {
        SignedEnvelope {
            window,
            payload,
            signature,
            signer_certificate: None,
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    /// The JDL entries carried by this layer (not including nested layers).
    pub fn jdl(&self) -> &Jdl {
        &self.payload.jdl
    }

    pub fn nested(&self) -> Option<&SignedEnvelope> {
        self.payload.nested.as_deref()
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn signer_certificate(&self) -> Option<&Certificate> {
        self.signer_certificate.as_ref()
    }

    pub fn set_signer_certificate(&mut self, cert: Certificate) {
        self.signer_certificate = Some(cert);
    }

    /// 1 for a plain sJDL, 2 for an s₂JDL, and so on.
    pub fn depth(&self) -> usize {
        1 + self.nested().map_or(0, SignedEnvelope::depth)
    }

    /// All layers, innermost (user-signed) first.
    pub fn layers(&self) -> Vec<&SignedEnvelope> {
        let mut out = match self.nested() {
            Some(n) => n.layers(),
            None => Vec::new(),
        };
        out.push(self);
        out
    }

    pub fn innermost(&self) -> &SignedEnvelope {
        self.nested().map_or(self, SignedEnvelope::innermost)
    }

    /// Values of `key` from the outermost layer that covers it with its
    /// `HashOrd`. Unprotected entries are ignored.
    pub fn signed_field(&self, key: &str) -> Option<&[String]> {
        self.layers()
            .into_iter()
            .rev()
            .find(|l| l.jdl().is_protected(key))
            .and_then(|l| l.jdl().get(key))
    }

    /// First signed value of `key`.
    pub fn signed_value(&self, key: &str) -> Option<&str> {
        self.signed_field(key).and_then(|v| v.first()).map(String::as_str)
    }

    /// The submitting user named by the innermost layer.
    pub fn user(&self) -> Option<&str> {
        let inner = self.innermost().jdl();
        inner.is_protected(USER_KEY).then(|| inner.first(USER_KEY)).flatten()
    }

    /// The broker currently entitled to act on the request.
    pub fn current_broker(&self) -> Option<&str> {
        self.signed_value(BROKER_KEY)
    }

    /// Who must have signed each layer, innermost first: the `User` for
    /// layer 1 and, above it, the broker named by the layers beneath.
    pub fn expected_signers(&self) -> Vec<Option<(String, Role)>> {
        let layers = self.layers();
        let mut out = Vec::with_capacity(layers.len());
        let mut broker: Option<String> = None;
        for (i, layer) in layers.iter().enumerate() {
            if i == 0 {
                out.push(self.user().map(|u| (u.to_string(), Role::User)));
            } else {
                out.push(broker.clone().map(|b| (b, Role::Broker)));
            }
            let jdl = layer.jdl();
            if jdl.is_protected(BROKER_KEY) {
                if let Some(b) = jdl.first(BROKER_KEY) {
                    broker = Some(b.to_string());
                }
            }
        }
        out
    }

    /// Attaches certificates from `pool` to each layer whose expected signer
    /// has a matching certificate. Returns how many layers got one.
    pub fn attach_certificates(&mut self, pool: &[Certificate]) -> usize {
        let expected = self.expected_signers();
        self.attach_from(pool, &expected)
    }

    fn attach_from(&mut self, pool: &[Certificate], expected: &[Option<(String, Role)>]) -> usize {
        let (last, below) = expected.split_last().expect("one entry per layer");
        let mut n = match self.payload.nested.as_deref_mut() {
            Some(inner) => inner.attach_from(pool, below),
            None => 0,
        };
        if let Some((name, role)) = last {
            if let Some(c) = pool.iter().find(|c| c.common_name() == name && c.role() == *role) {
                self.signer_certificate = Some(c.clone());
                n += 1;
            }
        }
        n
    }

    /// Certificates attached to this envelope, innermost first.
    pub fn certificates(&self) -> Vec<&Certificate> {
        self.layers()
            .into_iter()
            .filter_map(|l| l.signer_certificate())
            .collect()
    }

    pub fn signed_message(&self) -> Result<Vec<u8>, JdlError> {
        signed_message(&self.window, &self.payload.jdl, self.nested())
    }

    pub fn to_wire(&self) -> String {
        serialize_envelope(self)
    }

    /// SHA-384 of the canonical wire form; identifies the envelope as a token.
    pub fn digest(&self) -> [u8; 48] {
        Sha384::digest(self.to_wire().as_bytes()).into()
    }
}
