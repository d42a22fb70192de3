//! A file catalogue that never destroys physical data directly.
//!
//! Overwriting or deleting a logical path disassociates the physical
//! content and records a shadow entry. Shadowed content stays recoverable
//! until the stale-file horizon has passed.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha384};
use thiserror::Error;

use crate::audit::ledger::{escape, unescape};
use crate::time::Epoch;

/// Seven days.
pub const DEFAULT_STALE_HORIZON: i64 = 7 * 86_400;

/// Hex SHA-384 of `content`.
pub fn checksum(content: &[u8]) -> String {
    hex::encode(Sha384::digest(content))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogueEntry {
    pub path: String,
    pub owner: String,
    pub checksum: String,
    /// When this version was written.
    pub altered_at: Epoch,
    pub live: bool,
    pub physical: u64,
}

/// A disassociated version of a path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowRecord {
    pub path: String,
    pub owner: String,
    pub checksum: String,
    pub written_at: Epoch,
    pub disassociated_at: Epoch,
    pub physical: u64,
}

/// One version of a path, current or shadowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Version {
    pub owner: String,
    pub checksum: String,
    pub from: Epoch,
    /// `None` while the version is live.
    pub until: Option<Epoch>,
    pub physical: u64,
}

impl Version {
    pub fn live_at(&self, t: Epoch) -> bool {
        self.from <= t && self.until.is_none_or(|u| t < u)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogueError {
    #[error("no such file `{0}`")]
    NotFound(String),
    #[error("checksum mismatch for `{0}`")]
    ChecksumMismatch(String),
    #[error("malformed catalogue export: {0}")]
    Format(String),
}

/// A change worth recording in the evidence ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogueChange {
    Write {
        path: String,
        owner: String,
        checksum: String,
    },
    Overwrite {
        path: String,
        owner: String,
        old: String,
        new: String,
    },
    Delete {
        path: String,
        by: String,
        checksum: String,
    },
}

impl fmt::Display for CatalogueChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CatalogueChange::Write { path, owner, checksum } => {
                write!(f, "WRITE path={path} owner={owner} checksum={checksum}")
            }
            CatalogueChange::Overwrite { path, owner, old, new } => {
                write!(f, "OVERWRITE path={path} owner={owner} old={old} new={new}")
            }
            CatalogueChange::Delete { path, by, checksum } => {
                write!(f, "DELETE path={path} by={by} checksum={checksum}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileCatalogue {
    entries: BTreeMap<String, CatalogueEntry>,
    shadows: Vec<ShadowRecord>,
    store: BTreeMap<u64, Vec<u8>>,
    horizon: i64,
    next_physical: u64,
}

impl Default for FileCatalogue {
    fn default() -> Self {
        FileCatalogue::new(DEFAULT_STALE_HORIZON)
    }
}

impl FileCatalogue {
    pub fn new(horizon: i64) -> Self {
        FileCatalogue {
            entries: BTreeMap::new(),
            shadows: Vec::new(),
            store: BTreeMap::new(),
            horizon,
            next_physical: 1,
        }
    }

    pub fn horizon(&self) -> i64 {
        self.horizon
    }

    fn shadow(&mut self, e: &CatalogueEntry, now: Epoch) {
        self.shadows.push(ShadowRecord {
            path: e.path.clone(),
            owner: e.owner.clone(),
            checksum: e.checksum.clone(),
            written_at: e.altered_at,
            disassociated_at: now,
            physical: e.physical,
        });
    }

    pub fn write(&mut self, path: &str, owner: &str, content: &[u8], now: Epoch) -> CatalogueChange {
        let physical = self.next_physical;
        self.next_physical += 1;
        self.store.insert(physical, content.to_vec());
        let sum = checksum(content);
        let previous = self.entries.get(path).filter(|e| e.live).cloned();
        if let Some(prev) = &previous {
            self.shadow(prev, now);
        }
        self.entries.insert(
            path.to_string(),
            CatalogueEntry {
                path: path.to_string(),
                owner: owner.to_string(),
                checksum: sum.clone(),
                altered_at: now,
                live: true,
                physical,
            },
        );
        match previous {
            Some(prev) => CatalogueChange::Overwrite {
                path: path.to_string(),
                owner: owner.to_string(),
                old: prev.checksum,
                new: sum,
            },
            None => CatalogueChange::Write {
                path: path.to_string(),
                owner: owner.to_string(),
                checksum: sum,
            },
        }
    }

    pub fn delete(&mut self, path: &str, by: &str, now: Epoch) -> Result<CatalogueChange, CatalogueError> {
        let entry = match self.entries.get(path) {
            Some(e) if e.live => e.clone(),
            _ => return Err(CatalogueError::NotFound(path.to_string())),
        };
        self.shadow(&entry, now);
        let e = self.entries.get_mut(path).expect("checked above");
        e.live = false;
        e.altered_at = now;
        Ok(CatalogueChange::Delete {
            path: path.to_string(),
            by: by.to_string(),
            checksum: entry.checksum,
        })
    }

    pub fn entry(&self, path: &str) -> Option<&CatalogueEntry> {
        self.entries.get(path)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogueEntry> {
        self.entries.values()
    }

    pub fn shadows(&self) -> &[ShadowRecord] {
        &self.shadows
    }

    /// Reads live content and checks it against the recorded checksum.
    pub fn read(&self, path: &str) -> Result<Vec<u8>, CatalogueError> {
        let e = self
            .entries
            .get(path)
            .filter(|e| e.live)
            .ok_or_else(|| CatalogueError::NotFound(path.to_string()))?;
        self.fetch(path, e.physical, &e.checksum)
    }

    fn fetch(&self, path: &str, physical: u64, expected: &str) -> Result<Vec<u8>, CatalogueError> {
        let bytes = self
            .store
            .get(&physical)
            .ok_or_else(|| CatalogueError::NotFound(path.to_string()))?;
        if checksum(bytes) != expected {
            return Err(CatalogueError::ChecksumMismatch(path.to_string()));
        }
        Ok(bytes.clone())
    }

    /// Whether a shadow is still inside the stale-file horizon at `now`.
    pub fn recoverable(&self, s: &ShadowRecord, now: Epoch) -> bool {
        now - s.disassociated_at < self.horizon
    }

    /// Content of a disassociated version with checksum `sum`, if the
    /// horizon has not yet passed.
    pub fn recover(&self, path: &str, sum: &str, now: Epoch) -> Result<Vec<u8>, CatalogueError> {
        let s = self
            .shadows
            .iter()
            .rev()
            .find(|s| s.path == path && s.checksum == sum && self.recoverable(s, now))
            .ok_or_else(|| CatalogueError::NotFound(path.to_string()))?;
        self.fetch(path, s.physical, &s.checksum)
    }

    /// Content of whichever version `v` refers to, live or shadowed.
    pub fn content_of(&self, path: &str, v: &Version, now: Epoch) -> Result<Vec<u8>, CatalogueError> {
        match v.until {
            None => self.read(path),
            Some(_) => self.recover(path, &v.checksum, now),
        }
    }

    /// All versions of `path`, oldest first.
    pub fn history(&self, path: &str) -> Vec<Version> {
        let mut out: Vec<Version> = self
            .shadows
            .iter()
            .filter(|s| s.path == path)
            .map(|s| Version {
                owner: s.owner.clone(),
                checksum: s.checksum.clone(),
                from: s.written_at,
                until: Some(s.disassociated_at),
                physical: s.physical,
            })
            .collect();
        if let Some(e) = self.entries.get(path).filter(|e| e.live) {
            out.push(Version {
                owner: e.owner.clone(),
                checksum: e.checksum.clone(),
                from: e.altered_at,
                until: None,
                physical: e.physical,
            });
        }
        out
    }

    /// Drops physical content of shadows past the horizon.
    pub fn purge_stale(&mut self, now: Epoch) -> usize {
        let stale: Vec<u64> = self
            .shadows
            .iter()
            .filter(|s| !self.recoverable(s, now))
            .map(|s| s.physical)
            .collect();
        stale.iter().filter(|p| self.store.remove(p).is_some()).count()
    }

    /// Overwrites physical bytes behind the catalogue's back, as a
    /// compromised storage element would.
    pub fn corrupt(&mut self, path: &str, content: &[u8]) -> Result<(), CatalogueError> {
        let e = self
            .entries
            .get(path)
            .ok_or_else(|| CatalogueError::NotFound(path.to_string()))?;
        self.store.insert(e.physical, content.to_vec());
        Ok(())
    }

    /// Tab-separated snapshot: `ENTRY` and `SHADOW` metadata rows followed
    /// by `DATA` rows with hex content.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("HORIZON\t{}\n", self.horizon);
        for e in self.entries.values() {
            out.push_str(&format!(
                "ENTRY\t{}\t{}\t{}\t{}\t{}\t{}\n",
                escape(&e.path),
                escape(&e.owner),
                e.checksum,
                e.altered_at,
                e.live,
                e.physical
            ));
        }
        for s in &self.shadows {
            out.push_str(&format!(
                "SHADOW\t{}\t{}\t{}\t{}\t{}\t{}\n",
                escape(&s.path),
                escape(&s.owner),
                s.checksum,
                s.written_at,
                s.disassociated_at,
                s.physical
            ));
        }
        for (id, bytes) in &self.store {
            out.push_str(&format!("DATA\t{id}\t{}\n", hex::encode(bytes)));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, CatalogueError> {
        let bad = |n: usize, why: &str| CatalogueError::Format(format!("line {}: {why}", n + 1));
        let mut cat = FileCatalogue::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            let int = |s: &str| s.parse::<i64>().map_err(|_| bad(n, "bad number"));
            match f[..] {
                ["HORIZON", h] => cat.horizon = int(h)?,
                ["ENTRY", path, owner, sum, at, live, phys] => {
                    let e = CatalogueEntry {
                        path: unescape(path),
                        owner: unescape(owner),
                        checksum: sum.to_string(),
                        altered_at: int(at)?,
                        live: live.parse().map_err(|_| bad(n, "bad flag"))?,
                        physical: int(phys)? as u64,
                    };
                    cat.entries.insert(e.path.clone(), e);
                }
                ["SHADOW", path, owner, sum, from, until, phys] => cat.shadows.push(ShadowRecord {
                    path: unescape(path),
                    owner: unescape(owner),
                    checksum: sum.to_string(),
                    written_at: int(from)?,
                    disassociated_at: int(until)?,
                    physical: int(phys)? as u64,
                }),
                ["DATA", id, data] => {
                    let id = int(id)? as u64;
                    cat.store.insert(id, hex::decode(data).map_err(|_| bad(n, "bad hex"))?);
                    cat.next_physical = cat.next_physical.max(id + 1);
                }
                _ => return Err(bad(n, "unrecognised row")),
            }
        }
        Ok(cat)
    }
}
