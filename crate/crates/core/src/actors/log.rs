//! Append-only event log, one `SEQ<TAB>TIME<TAB>ACTOR<TAB>EVENT<TAB>DETAIL`
//! line per record.

use crate::audit::ledger::escape;
use crate::time::Epoch;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub seq: u64,
    pub time: Epoch,
    pub actor: String,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, time: Epoch, actor: &str, event: &str, detail: impl Into<String>) -> u64 {
        let seq = self.records.len() as u64 + 1;
        self.records.push(LogRecord {
            seq,
            time,
            actor: actor.to_string(),
            event: event.to_string(),
            detail: detail.into(),
        });
        seq
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn events<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
        self.records.iter().filter(move |r| r.event == event)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("SEQ\tTIME\tACTOR\tEVENT\tDETAIL\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.seq,
                r.time,
                escape(&r.actor),
                escape(&r.event),
                escape(&r.detail)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_escapes_separators() {
        let mut log = EventLog::new();
        log.push(5, "CS", "SUBMIT", "a\tb\nc");
        assert_eq!(
            log.to_tsv(),
            "SEQ\tTIME\tACTOR\tEVENT\tDETAIL\n1\t5\tCS\tSUBMIT\ta\\tb\\nc\n"
        );
    }
}
