//! Append-only, SHA-384 hash-chained evidence ledger.
//!
//! Each record's hash covers the previous hash and every field of the
//! record, length-prefixed so that no two field layouts collide.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha384};
use thiserror::Error;

use crate::time::Epoch;

pub type Digest384 = [u8; 48];

pub const GENESIS: Digest384 = [0u8; 48];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordKind {
    Submission,
    Countersign,
    SiteLog,
    Finalize,
    CatalogueChange,
}

impl RecordKind {
    pub const ALL: [RecordKind; 5] = [
        RecordKind::Submission,
        RecordKind::Countersign,
        RecordKind::SiteLog,
        RecordKind::Finalize,
        RecordKind::CatalogueChange,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::Submission => "SUBMISSION",
            RecordKind::Countersign => "COUNTERSIGN",
            RecordKind::SiteLog => "SITE_LOG",
            RecordKind::Finalize => "FINALIZE",
            RecordKind::CatalogueChange => "CATALOGUE_CHANGE",
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LedgerError::Format(format!("unknown record kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub id: u64,
    pub kind: RecordKind,
    pub time: Epoch,
    /// Job id or catalogue path the record is about.
    pub subject: String,
    /// Envelope bundle text or catalogue snapshot.
    pub body: String,
    pub prev_hash: Digest384,
    pub hash: Digest384,
}

impl AuditRecord {
    pub fn compute_hash(&self) -> Digest384 {
        chain_hash(
            &self.prev_hash,
            self.id,
            self.kind,
            self.time,
            &self.subject,
            &self.body,
        )
    }
}

fn chain_hash(prev: &Digest384, id: u64, kind: RecordKind, time: Epoch, subject: &str, body: &str) -> Digest384 {
    let mut h = Sha384::new();
    h.update(prev);
    h.update(id.to_be_bytes());
    for part in [kind.as_str().as_bytes(), subject.as_bytes(), body.as_bytes()] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    h.update(time.to_be_bytes());
    h.finalize().into()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("malformed ledger export: {0}")]
    Format(String),
}

/// Single-writer ledger. Readers take `records()` snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    records: Vec<AuditRecord>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    pub fn head(&self) -> Digest384 {
        self.records.last().map_or(GENESIS, |r| r.hash)
    }

    pub fn append(
        &mut self,
        kind: RecordKind,
        time: Epoch,
        subject: impl Into<String>,
        body: impl Into<String>,
    ) -> u64 {
        let id = self.records.len() as u64;
        let prev_hash = self.head();
        let subject = subject.into();
        let body = body.into();
        let hash = chain_hash(&prev_hash, id, kind, time, &subject, &body);
        self.records.push(AuditRecord {
            id,
            kind,
            time,
            subject,
            body,
            prev_hash,
            hash,
        });
        id
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&AuditRecord> {
        self.records.get(usize::try_from(id).ok()?)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records about `subject` of the given kind, oldest first.
    pub fn find<'a>(&'a self, kind: RecordKind, subject: &'a str) -> impl Iterator<Item = &'a AuditRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.kind == kind && r.subject == subject)
    }

    /// Mutable access for fault-injection tests; breaks the chain on any edit.
    pub fn records_mut(&mut self) -> &mut [AuditRecord] {
        &mut self.records
    }

    /// `ID\tKIND\tTIME\tSUBJECT\tBODY\tPREV\tHASH`, with `\\`, `\t` and `\n`
    /// escaped in text fields.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("ID\tKIND\tTIME\tSUBJECT\tBODY\tPREV\tHASH\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.kind,
                r.time,
                escape(&r.subject),
                escape(&r.body),
                hex::encode(r.prev_hash),
                hex::encode(r.hash)
            ));
        }
        out
    }

    /// Reads a TSV export without checking the chain; see [`ledger_verify`].
    pub fn from_tsv(text: &str) -> Result<Self, LedgerError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if (n == 0 && line.starts_with("ID\t")) || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [id, kind, time, subject, body, prev, hash] = f[..] else {
                return Err(LedgerError::Format(format!("line {}: expected 7 fields", n + 1)));
            };
            let num = |s: &str| {
                s.parse::<i64>()
                    .map_err(|_| LedgerError::Format(format!("line {}: bad number", n + 1)))
            };
            records.push(AuditRecord {
                id: num(id)? as u64,
                kind: kind.parse()?,
                time: num(time)?,
                subject: unescape(subject),
                body: unescape(body),
                prev_hash: digest(prev, n)?,
                hash: digest(hash, n)?,
            });
        }
        Ok(Ledger { records })
    }

    /// Length-prefixed binary export: per record, a big-endian `u32` length
    /// followed by that many bytes of fields, each itself `u32`-prefixed.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            let mut rec = Vec::new();
            let id = r.id.to_be_bytes();
            let time = r.time.to_be_bytes();
            for field in [
                &id[..],
                r.kind.as_str().as_bytes(),
                &time[..],
                r.subject.as_bytes(),
                r.body.as_bytes(),
                &r.prev_hash[..],
                &r.hash[..],
            ] {
                rec.extend_from_slice(&(field.len() as u32).to_be_bytes());
                rec.extend_from_slice(field);
            }
            out.extend_from_slice(&(rec.len() as u32).to_be_bytes());
            out.extend_from_slice(&rec);
        }
        out
    }

    pub fn from_binary(mut bytes: &[u8]) -> Result<Self, LedgerError> {
        fn take<'a>(b: &mut &'a [u8]) -> Result<&'a [u8], LedgerError> {
            let short = || LedgerError::Format("truncated record".into());
            let len: [u8; 4] = b.get(..4).ok_or_else(short)?.try_into().expect("4 bytes");
            let len = u32::from_be_bytes(len) as usize;
            let body = b.get(4..4 + len).ok_or_else(short)?;
            *b = &b[4 + len..];
            Ok(body)
        }
        fn fixed<const N: usize>(b: &[u8]) -> Result<[u8; N], LedgerError> {
            b.try_into().map_err(|_| LedgerError::Format("bad field width".into()))
        }
        fn text(b: &[u8]) -> Result<String, LedgerError> {
            String::from_utf8(b.to_vec()).map_err(|_| LedgerError::Format("field is not UTF-8".into()))
        }
        let mut records = Vec::new();
        while !bytes.is_empty() {
            let mut rec = take(&mut bytes)?;
            let mut fields = Vec::with_capacity(7);
            while !rec.is_empty() {
                fields.push(take(&mut rec)?);
            }
            let [id, kind, time, subject, body, prev, hash] = fields[..] else {
                return Err(LedgerError::Format("expected 7 fields".into()));
            };
            records.push(AuditRecord {
                id: u64::from_be_bytes(fixed(id)?),
                kind: text(kind)?.parse()?,
                time: i64::from_be_bytes(fixed(time)?),
                subject: text(subject)?,
                body: text(body)?,
                prev_hash: fixed(prev)?,
                hash: fixed(hash)?,
            });
        }
        Ok(Ledger { records })
    }
}

fn digest(s: &str, line: usize) -> Result<Digest384, LedgerError> {
    let bytes = hex::decode(s).map_err(|_| LedgerError::Format(format!("line {}: bad hex", line + 1)))?;
    bytes
        .try_into()
        .map_err(|_| LedgerError::Format(format!("line {}: digest is not 48 bytes", line + 1)))
}

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Recomputes the whole chain: ids are consecutive from 0, each record
/// links to its predecessor, and each stored hash matches its contents.
pub fn ledger_verify(ledger: &Ledger) -> bool {
    let mut prev = GENESIS;
    for (i, r) in ledger.records.iter().enumerate() {
        if r.id != i as u64 || r.prev_hash != prev || r.compute_hash() != r.hash {
            return false;
        }
        prev = r.hash;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize) -> Ledger {
        let mut l = Ledger::new();
        for i in 0..n {
            let kind = RecordKind::ALL[i % 5];
            l.append(kind, 1000 + i as i64, format!("job-{i}"), format!("body\t{i}\nline"));
        }
        l
    }

    #[test]
    fn empty_ledger_verifies() {
        assert!(ledger_verify(&Ledger::new()));
    }

    #[test]
    fn three_records_verify_and_edit_breaks() {
        let mut l = sample(3);
        assert!(ledger_verify(&l));
        l.records_mut()[1].body.push('x');
        assert!(!ledger_verify(&l));
    }

    #[test]
    fn exports_round_trip() {
        let l = sample(7);
        assert_eq!(Ledger::from_tsv(&l.to_tsv()).unwrap(), l);
        assert_eq!(Ledger::from_binary(&l.to_binary()).unwrap(), l);
    }

    #[test]
    fn truncated_binary_rejected() {
        let b = sample(2).to_binary();
        assert!(Ledger::from_binary(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn any_field_edit_is_detected(n in 1usize..12, pick in any::<prop::sample::Index>(), field in 0u8..7, delta in 1u8..=255) {
            let mut l = sample(n);
            let i = pick.index(n);
            let r = &mut l.records_mut()[i];
            match field {
                0 => r.id ^= u64::from(delta),
                1 => r.kind = RecordKind::ALL[(RecordKind::ALL.iter().position(|k| *k == r.kind).unwrap() + 1) % 5],
                2 => r.time ^= i64::from(delta),
                3 => r.subject.push(char::from(delta % 94 + 33)),
                4 => r.body.insert(0, char::from(delta % 94 + 33)),
                5 => r.prev_hash[usize::from(delta) % 48] ^= delta,
                _ => r.hash[usize::from(delta) % 48] ^= delta,
            }
            prop_assert!(!ledger_verify(&l));
        }
    }
}
