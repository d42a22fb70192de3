//! Hash-chained evidence and the forensic verdict engine.

mod forensics;
pub mod ledger;

pub use forensics::{forensic_classify, Accountable, ForensicError, ForensicVerdict, Incident, Origin};
pub use ledger::{ledger_verify, AuditRecord, Ledger, LedgerError, RecordKind};
