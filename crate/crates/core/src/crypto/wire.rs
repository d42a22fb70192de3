//! Text codec for signed envelopes.
//!
//! ```text
//! <SJDL><NOTBEFORE>INT</NOTBEFORE><NOTAFTER>INT</NOTAFTER><NESTEDJDL>
//!   [<SJDL>...</SJDL>] JDL
//! </NESTEDJDL><SIGNATURE>BASE64</SIGNATURE></SJDL>
//! ```
//!
//! Whitespace between tokens is ignored on input. The canonical form emits
//! none; the only line breaks are the ones ending each JDL statement.
//!
//! A bundle is an envelope followed by the armoured certificates of its
//! signers, innermost layer first.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use super::cert::Certificate;
use super::envelope::{Payload, Signature, SignedEnvelope};
use super::pem::parse_certificates;
use super::CryptoError;
use crate::jdl::{self, is_ws, serialize_jdl, JdlError};
use crate::time::{Epoch, Window};

/// Deeper nesting is rejected rather than risking unbounded recursion.
pub const MAX_DEPTH: usize = 32;

pub fn serialize_envelope(e: &SignedEnvelope) -> String {
    let mut out = String::new();
    write_envelope(&mut out, e);
    out
}

fn write_envelope(out: &mut String, e: &SignedEnvelope) {
    out.push_str("<SJDL><NOTBEFORE>");
    out.push_str(&e.window.not_before.to_string());
    out.push_str("</NOTBEFORE><NOTAFTER>");
    out.push_str(&e.window.not_after.to_string());
    out.push_str("</NOTAFTER><NESTEDJDL>");
    if let Some(inner) = e.nested() {
        write_envelope(out, inner);
    }
    out.push_str(&serialize_jdl(e.jdl()));
    out.push_str("</NESTEDJDL><SIGNATURE>");
    out.push_str(&e.signature.to_string());
    out.push_str("</SIGNATURE></SJDL>");
}

/// Parses one envelope; only whitespace may follow it.
pub fn parse_envelope(text: &str) -> Result<SignedEnvelope, CryptoError> {
    let mut p = Parser { text, pos: 0 };
    let e = p.envelope(1)?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.err("end of input after </SJDL>"));
    }
    Ok(e)
}

/// Envelope text followed by one certificate block per layer that has one.
pub fn bundle_to_text(e: &SignedEnvelope) -> String {
    let mut out = serialize_envelope(e);
    out.push('\n');
    for c in e.certificates() {
        out.push_str(&c.to_pem());
    }
    out
}

/// Parses a bundle. When it holds exactly one certificate per layer they
/// are attached in order; otherwise each layer gets the certificate of its
/// expected signer, if present.
pub fn parse_bundle(text: &str) -> Result<SignedEnvelope, CryptoError> {
    let mut p = Parser { text, pos: 0 };
    let mut e = p.envelope(1)?;
    let certs = parse_certificates(&text[p.pos..])?;
    if certs.len() == e.depth() {
        attach_in_order(&mut e, &mut certs.into_iter());
    } else {
        e.attach_certificates(&certs);
    }
    Ok(e)
}

fn attach_in_order(e: &mut SignedEnvelope, certs: &mut impl Iterator<Item = Certificate>) {
    if let Some(inner) = e.payload.nested.as_deref_mut() {
        attach_in_order(inner, certs);
    }
    if let Some(c) = certs.next() {
        e.signer_certificate = Some(c);
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, expected: &str) -> CryptoError {
        CryptoError::MalformedEnvelope {
            pos: self.pos,
            reason: format!("expected {expected}"),
        }
    }

    fn rest(&self) -> &[u8] {
        &self.text.as_bytes()[self.pos..]
    }

    fn skip_ws(&mut self) {
        while self.rest().first().copied().is_some_and(is_ws) {
            self.pos += 1;
        }
    }

    fn at(&mut self, tag: &str) -> bool {
        self.skip_ws();
        self.rest().starts_with(tag.as_bytes())
    }

    fn tag(&mut self, tag: &str) -> Result<(), CryptoError> {
        if self.at(tag) {
            self.pos += tag.len();
            Ok(())
        } else {
            Err(self.err(tag))
        }
    }

    fn int(&mut self, close: &str) -> Result<Epoch, CryptoError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.rest();
        let sign = usize::from(bytes.first() == Some(&b'-'));
        let digits = bytes[sign..].iter().take_while(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            return Err(self.err("integer"));
        }
        let value = self.text[start..start + sign + digits]
            .parse()
            .map_err(|_| self.err("integer in range"))?;
        self.pos += sign + digits;
        self.tag(close)?;
        Ok(value)
    }

    fn envelope(&mut self, depth: usize) -> Result<SignedEnvelope, CryptoError> {
        if depth > MAX_DEPTH {
            return Err(CryptoError::MalformedEnvelope {
                pos: self.pos,
                reason: format!("nesting deeper than {MAX_DEPTH}"),
            });
        }
        self.tag("<SJDL>")?;
        self.tag("<NOTBEFORE>")?;
        let not_before = self.int("</NOTBEFORE>")?;
        self.tag("<NOTAFTER>")?;
        let not_after = self.int("</NOTAFTER>")?;
        let window = Window::new(not_before, not_after).ok_or_else(|| CryptoError::MalformedEnvelope {
            pos: self.pos,
            reason: "empty or inverted window".into(),
        })?;
        self.tag("<NESTEDJDL>")?;
        let nested = if self.at("<SJDL>") {
            Some(Box::new(self.envelope(depth + 1)?))
        } else {
            None
        };
        let (jdl, end) = jdl::parse_statements(self.text, self.pos).map_err(|e| match e {
            JdlError::Syntax { pos, expected } => CryptoError::MalformedEnvelope {
                pos,
                reason: format!("JDL: expected {expected}"),
            },
            other => CryptoError::MalformedEnvelope {
                pos: self.pos,
                reason: other.to_string(),
            },
        })?;
        self.pos = end;
        self.tag("</NESTEDJDL>")?;
        self.tag("<SIGNATURE>")?;
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .iter()
            .position(|&c| c == b'<')
            .ok_or_else(|| self.err("</SIGNATURE>"))?;
        self.pos += len;
        let raw = self.text[start..self.pos].trim_end_matches(|c: char| c.is_ascii() && is_ws(c as u8));
        let signature = match B64.decode(raw) {
            Ok(bytes) if !bytes.is_empty() => Signature::Bytes(bytes),
            _ => Signature::Opaque(raw.to_string()),
        };
        self.tag("</SIGNATURE>")?;
        self.tag("</SJDL>")?;
        Ok(SignedEnvelope::from_parts(window, Payload { nested, jdl }, signature))
    }
}
